#include "maga/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace maga {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

struct Pt {
  double x, y;
};

double dist_point_segment(Pt p, Pt a, Pt b) {
  double vx = b.x - a.x, vy = b.y - a.y;
  double wx = p.x - a.x, wy = p.y - a.y;
  double vv = vx * vx + vy * vy;
  double t = vv > 0.0 ? (wx * vx + wy * vy) / vv : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  double dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

Pt bezier(Pt p0, Pt p1, Pt p2, double t) {
  double u = 1.0 - t;
  return Pt{u * u * p0.x + 2.0 * u * t * p1.x + t * t * p2.x,
            u * u * p0.y + 2.0 * u * t * p1.y + t * t * p2.y};
}

// Uniform direction via rejection from the unit disc; sqrt-normalized so the
// render stays transcendental-free.
Pt unit_dir(Rng& rng) {
  double x, y, s;
  do {
    x = 2.0 * rng.next_unit() - 1.0;
    y = 2.0 * rng.next_unit() - 1.0;
    s = x * x + y * y;
  } while (s > 1.0 || s < 1e-6);
  double inv = 1.0 / std::sqrt(s);
  return Pt{x * inv, y * inv};
}

std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& in, std::size_t h, std::size_t w,
                                 std::size_t r) {
  std::vector<std::uint8_t> out(h * w, 0);
  std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      std::uint8_t v = 0;
      for (std::ptrdiff_t di = -rr; di <= rr && !v; ++di) {
        std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i) + di;
        if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::ptrdiff_t dj = -rr; dj <= rr; ++dj) {
          std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j) + dj;
          if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
          if (in[static_cast<std::size_t>(ii) * w + static_cast<std::size_t>(jj)]) {
            v = 1;
            break;
          }
        }
      }
      out[i * w + j] = v;
    }
  return out;
}

std::vector<std::uint8_t> erode(const std::vector<std::uint8_t>& in, std::size_t h, std::size_t w,
                                std::size_t r) {
  std::vector<std::uint8_t> out(h * w, 0);
  std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      std::uint8_t v = 1;
      for (std::ptrdiff_t di = -rr; di <= rr && v; ++di) {
        std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i) + di;
        for (std::ptrdiff_t dj = -rr; dj <= rr; ++dj) {
          std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j) + dj;
          // out of bounds counts as full, so the canvas border erodes cleanly
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h) || jj < 0 ||
              jj >= static_cast<std::ptrdiff_t>(w))
            continue;
          if (!in[static_cast<std::size_t>(ii) * w + static_cast<std::size_t>(jj)]) {
            v = 0;
            break;
          }
        }
      }
      out[i * w + j] = v;
    }
  return out;
}

}  // namespace

Tensor composite(const Tensor& fg, const Tensor& bg, const Tensor& alpha) {
  require(fg.rank() == 3 && fg.extent(0) == 3, "composite: fg must be (3, H, W)");
  require(fg.shape() == bg.shape(), "composite: fg/bg shape mismatch");
  require(alpha.rank() == 2 && alpha.extent(0) == fg.extent(1) && alpha.extent(1) == fg.extent(2),
          "composite: alpha must be (H, W)");
  std::size_t hw = alpha.numel();
  std::vector<double> img(3 * hw);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < hw; ++i) {
      double a = alpha[i];
      img[c * hw + i] = a * fg[c * hw + i] + (1.0 - a) * bg[c * hw + i];
    }
  return Tensor::from_data(fg.shape(), std::move(img));
}

Tensor trimap_from_alpha(const Tensor& alpha, std::size_t r_dilate, std::size_t r_erode, double lo,
                         double hi) {
  require(alpha.rank() == 2, "trimap_from_alpha: alpha must be (H, W)");
  require(lo < hi, "trimap_from_alpha: lo must be below hi");
  std::size_t h = alpha.extent(0), w = alpha.extent(1), n = h * w;
  std::vector<std::uint8_t> partial(n), fg_bin(n), bg_bin(n);
  for (std::size_t i = 0; i < n; ++i) {
    partial[i] = alpha[i] > lo && alpha[i] < hi;
    fg_bin[i] = alpha[i] >= hi;
    bg_bin[i] = alpha[i] <= lo;
  }
  std::vector<std::uint8_t> unknown = dilate(partial, h, w, r_dilate);
  std::vector<std::uint8_t> fg_core = erode(fg_bin, h, w, r_erode);
  std::vector<std::uint8_t> bg_core = erode(bg_bin, h, w, r_erode);
  std::vector<double> tri(n, 0.5);
  for (std::size_t i = 0; i < n; ++i) {
    if (unknown[i]) continue;
    if (fg_core[i]) tri[i] = 1.0;
    else if (bg_core[i]) tri[i] = 0.0;
  }
  return Tensor::from_data({h, w}, std::move(tri));
}

ForegroundSprite gen_hairline_foreground(std::size_t h, std::size_t w, Rng& rng,
                                         std::size_t n_strands) {
  require(h >= 8 && w >= 8, "gen_hairline_foreground: image too small");
  require(n_strands >= 1, "gen_hairline_foreground: need at least one strand");
  double hh = static_cast<double>(h), ww = static_cast<double>(w);
  double m = std::min(hh, ww);

  // Body large enough that a definite foreground core survives the trimap's
  // radius-3 erosion at 32x32.
  double cx = ww * rng.next_range(0.42, 0.58);
  double cy = hh * rng.next_range(0.42, 0.58);
  double rx = m * rng.next_range(0.24, 0.32);
  double ry = m * rng.next_range(0.24, 0.32);

  struct Strand {
    Pt p0, p1, p2;
    double width;
  };
  std::vector<Strand> strands;
  for (std::size_t s = 0; s < n_strands; ++s) {
    Pt dir = unit_dir(rng);
    Pt p0{cx + dir.x * rx * 0.9, cy + dir.y * ry * 0.9};
    double len = m * rng.next_range(0.12, 0.24);
    Pt p2{p0.x + dir.x * len, p0.y + dir.y * len};
    Pt perp{-dir.y, dir.x};
    double bow = m * rng.next_range(-0.06, 0.06);
    Pt p1{(p0.x + p2.x) * 0.5 + perp.x * bow, (p0.y + p2.y) * 0.5 + perp.y * bow};
    strands.push_back(Strand{p0, p1, p2, rng.next_range(0.5, 1.0)});
  }

  constexpr std::size_t kSegs = 48;
  std::vector<double> a(h * w, 0.0);
  double edge = std::min(rx, ry);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double px = static_cast<double>(j) + 0.5, py = static_cast<double>(i) + 0.5;
      double ex = (px - cx) / rx, ey = (py - cy) / ry;
      double d = std::sqrt(ex * ex + ey * ey);
      double cov = clamp01((1.0 - d) * edge + 0.5);  // ~1 px ramp at the rim
      for (const Strand& s : strands) {
        Pt prev = s.p0;
        double best = 1e18, best_t = 0.0;
        for (std::size_t k = 1; k <= kSegs; ++k) {
          double t = static_cast<double>(k) / kSegs;
          Pt cur = bezier(s.p0, s.p1, s.p2, t);
          double dd = dist_point_segment(Pt{px, py}, prev, cur);
          if (dd < best) {
            best = dd;
            best_t = t;
          }
          prev = cur;
        }
        double width = s.width * (1.0 - 0.6 * best_t);  // taper toward the tip
        cov = std::max(cov, clamp01((width - best) * 2.0 + 0.5));
      }
      a[i * w + j] = cov;
    }

  double base_r = rng.next_range(0.25, 0.85);
  double base_g = rng.next_range(0.25, 0.85);
  double base_b = rng.next_range(0.25, 0.85);
  Pt grad_dir = unit_dir(rng);
  double grad_amp = rng.next_range(0.0, 0.12);
  std::vector<double> color(3 * h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double u = (grad_dir.x * (static_cast<double>(j) / ww - 0.5) +
                  grad_dir.y * (static_cast<double>(i) / hh - 0.5));
      double shade = grad_amp * u;
      color[0 * h * w + i * w + j] = clamp01(base_r + shade);
      color[1 * h * w + i * w + j] = clamp01(base_g + shade);
      color[2 * h * w + i * w + j] = clamp01(base_b - shade);
    }

  ForegroundSprite out;
  out.color = Tensor::from_data({3, h, w}, std::move(color));
  out.alpha = Tensor::from_data({h, w}, std::move(a));
  return out;
}

Tensor gen_background(std::size_t h, std::size_t w, Rng& rng) {
  require(h >= 4 && w >= 4, "gen_background: image too small");
  double hh = static_cast<double>(h), ww = static_cast<double>(w);
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.next_range(0.08, 0.92);
    c1[c] = rng.next_range(0.08, 0.92);
  }
  Pt dir = unit_dir(rng);

  constexpr std::size_t kCell = 4;
  std::size_t gh = h / kCell + 2, gw = w / kCell + 2;
  std::vector<double> lattice(gh * gw);
  for (double& v : lattice) v = rng.next_unit();
  double amp = rng.next_range(0.05, 0.15);

  std::vector<double> img(3 * h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double u = 0.5 + 0.5 * (dir.x * (static_cast<double>(j) / ww - 0.5) +
                              dir.y * (static_cast<double>(i) / hh - 0.5)) * 2.0;
      u = clamp01(u);
      double gx = static_cast<double>(j) / kCell, gy = static_cast<double>(i) / kCell;
      std::size_t x0 = static_cast<std::size_t>(gx), y0 = static_cast<std::size_t>(gy);
      double fx = smoothstep(gx - static_cast<double>(x0));
      double fy = smoothstep(gy - static_cast<double>(y0));
      double v00 = lattice[y0 * gw + x0], v01 = lattice[y0 * gw + x0 + 1];
      double v10 = lattice[(y0 + 1) * gw + x0], v11 = lattice[(y0 + 1) * gw + x0 + 1];
      double noise = (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy;
      double shade = amp * (noise - 0.5);
      for (int c = 0; c < 3; ++c)
        img[c * h * w + i * w + j] = clamp01(c0[c] * (1.0 - u) + c1[c] * u + shade);
    }
  return Tensor::from_data({3, h, w}, std::move(img));
}

SynthSample make_sample(std::size_t h, std::size_t w, std::uint64_t seed, std::uint64_t index) {
  Rng rng(mix_seed(seed, index));
  std::size_t n_strands = 1 + static_cast<std::size_t>(rng.next_index(3));
  ForegroundSprite sprite = gen_hairline_foreground(h, w, rng, n_strands);
  Tensor bg = gen_background(h, w, rng);
  SynthSample s;
  s.fg = sprite.color;
  s.bg = bg;
  s.alpha = sprite.alpha;
  s.image = composite(s.fg, s.bg, s.alpha);
  s.trimap = trimap_from_alpha(s.alpha);
  return s;
}

}  // namespace maga
