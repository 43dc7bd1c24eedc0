#pragma once

#include <cstdint>
#include <vector>

#include "maga/graph.hpp"
#include "maga/tensor.hpp"

namespace maga {

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);

// ---------------------------------------------------------------------------
// Shape / layout
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose2d(const Tensor& a);
/// Column slice of an m x n matrix, [c0, c1).
Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);
/// Horizontal concatenation of m x n_i matrices.
Tensor concat_cols(const std::vector<Tensor>& xs);
/// Channel concatenation of (C_i, H, W) maps.
Tensor concat_channels(const std::vector<Tensor>& xs);
/// Stacks equally-shaped tensors along a new leading axis.
Tensor stack0(const std::vector<Tensor>& xs);

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// ---------------------------------------------------------------------------
// Linear algebra / attention primitives
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// Row-wise softmax of an m x n matrix, stabilized by row-max subtraction.
Tensor softmax_rows(const Tensor& a);
/// x: (N, D), bias: (D); adds bias to every row.
Tensor add_bias_row(const Tensor& x, const Tensor& bias);
/// x: (C, H, W), bias: (C); adds bias to every spatial site of a channel.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
/// x: (B, C, H, W), s: (B*C); scales slab (b, c) by s[b*C + c].
Tensor scale_channels(const Tensor& x, const Tensor& s);

// ---------------------------------------------------------------------------
// Max selection
// ---------------------------------------------------------------------------

struct MaxResult {
  Tensor values;
  /// For each output position, the index along the reduced axis that won.
  /// Ties resolve to the lowest index. Gradient routes to winners only.
  std::vector<std::size_t> argmax;
};
MaxResult max_over_axis(const Tensor& x, std::size_t axis);

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

/// Boolean activity pattern of an H x W grid for submanifold convolution.
class ActiveSiteMask {
 public:
  ActiveSiteMask(std::size_t h, std::size_t w, std::vector<std::uint8_t> active);
  static ActiveSiteMask all_active(std::size_t h, std::size_t w);
  static ActiveSiteMask all_inactive(std::size_t h, std::size_t w);
  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  bool active(std::size_t i, std::size_t j) const { return active_[i * w_ + j] != 0; }

 private:
  std::size_t h_, w_;
  std::vector<std::uint8_t> active_;
};

/// Submanifold convolution, stride 1, same padding. Output at an active site
/// is the dense convolution restricted to active input sites; inactive sites
/// stay exactly zero. x: (C, H, W), w: (C', C, kh, kw), kh/kw odd.
Tensor conv2d_sparse(const Tensor& x, const Tensor& w, const ActiveSiteMask& mask);

/// Depthwise variant: one kernel per channel. x: (C, H, W), w: (C, kh, kw).
Tensor conv2d_sparse_depthwise(const Tensor& x, const Tensor& w, const ActiveSiteMask& mask);

/// Dense strided convolution. x: (C, H, W), w: (C', C, kh, kw).
/// Output spatial extent: (H + 2*pad - kh) / stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad);

/// Same-padded 1D convolution along a descriptor sequence. x: (L), w: (kc), kc odd.
Tensor conv1d_channels(const Tensor& x, const Tensor& w);

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

struct InstanceNormResult {
  Tensor y;     ///< normalized map, same shape as x
  Tensor mean;  ///< per-(sample, channel) mean
  Tensor std;   ///< per-(sample, channel) sqrt(var + eps)
};
/// x: (C, H, W) or (B, C, H, W). Population variance; a constant channel
/// yields zeros with std = sqrt(eps). All three outputs are differentiable.
InstanceNormResult instance_norm(const Tensor& x, double eps = 1e-5);

/// Per-row normalization of (N, D) tokens with affine parameters (D).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// ---------------------------------------------------------------------------
// Resampling & patch layout
// ---------------------------------------------------------------------------

/// 2x bilinear upsampling of (C, H, W), half-pixel-center convention.
Tensor upsample2_bilinear(const Tensor& x);
/// 2x nearest-neighbor upsampling of (C, H, W).
Tensor upsample2_nearest(const Tensor& x);
/// Non-overlapping s x s patches of (C, H, W) flattened row-major into
/// ((H/s)*(W/s), C*s*s) token features.
Tensor extract_patches(const Tensor& x, std::size_t s);
/// (N, D) tokens -> (D, Hp, Wp) map; token i lands at (i / Wp, i % Wp).
Tensor tokens_to_map(const Tensor& tokens, std::size_t hp, std::size_t wp);
/// Inverse of tokens_to_map.
Tensor map_to_tokens(const Tensor& map);

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean absolute error over mask > 0; falls back to the full-image mean when
/// the mask is empty. gt and mask are treated as constants.
Tensor masked_l1(const Tensor& pred, const Tensor& gt, const Tensor& mask);

/// Mean absolute re-rendering error: |alpha*fg + (1-alpha)*bg - image|
/// averaged over all pixels and channels. Only alpha is differentiable.
/// alpha: (1, H, W); fg/bg/image: (3, H, W).
Tensor composition_l1(const Tensor& alpha, const Tensor& fg, const Tensor& bg, const Tensor& image);

}  // namespace maga
