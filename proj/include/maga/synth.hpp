#pragma once

#include <cstdint>

#include "maga/random.hpp"
#include "maga/tensor.hpp"

namespace maga {

// One synthetic matting sample. image = alpha * fg + (1 - alpha) * bg, exact.
struct SynthSample {
  Tensor image;   // (3, H, W)
  Tensor alpha;   // (H, W)
  Tensor trimap;  // (H, W) in {0, 0.5, 1}
  Tensor fg;      // (3, H, W)
  Tensor bg;      // (3, H, W)
};

Tensor composite(const Tensor& fg, const Tensor& bg, const Tensor& alpha);

// Trimap from ground truth coverage. Pixels with lo < alpha < hi are partial;
// their square dilation by r_dilate becomes unknown. Definite fg/bg need
// alpha >= hi (<= lo) to survive a square erosion by r_erode; erosion treats
// out-of-bounds as full, so certainty extends to the canvas border.
Tensor trimap_from_alpha(const Tensor& alpha, std::size_t r_dilate = 3, std::size_t r_erode = 3,
                         double lo = 0.01, double hi = 0.99);

struct ForegroundSprite {
  Tensor color;  // (3, H, W)
  Tensor alpha;  // (H, W)
};

// Elliptical body with n_strands curved sub-pixel strands leaving it
// (n_strands >= 1). Coverage ramps are computed from sqrt-based distances
// only, so renders are byte-identical across platforms.
ForegroundSprite gen_hairline_foreground(std::size_t h, std::size_t w, Rng& rng,
                                         std::size_t n_strands);

// Two-color linear gradient plus smoothstep-interpolated value noise.
Tensor gen_background(std::size_t h, std::size_t w, Rng& rng);

// Deterministic in (seed, index); index streams never alias across seeds.
SynthSample make_sample(std::size_t h, std::size_t w, std::uint64_t seed, std::uint64_t index);

}  // namespace maga
