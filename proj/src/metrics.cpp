#include "maga/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "maga/error.hpp"

namespace maga {

namespace {

constexpr double kSigma = 1.4;
constexpr int kRadius = 5;
constexpr double kConnDeadZone = 0.15;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Mirror index without repeating the edge twice per bounce, looping for
// inputs narrower than the kernel.
std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  std::ptrdiff_t sn = static_cast<std::ptrdiff_t>(n);
  while (i < 0 || i >= sn) {
    if (i < 0) i = -i - 1;
    if (i >= sn) i = 2 * sn - 1 - i;
  }
  return static_cast<std::size_t>(i);
}

// Flattens (H,W) or (1,H,W) into height/width plus a pointer to the data.
struct Plane {
  std::size_t h, w;
  const double* p;
};

Plane as_plane(const Tensor& t, const char* what) {
  if (t.rank() == 2) return Plane{t.extent(0), t.extent(1), t.ptr()};
  if (t.rank() == 3 && t.extent(0) == 1) return Plane{t.extent(1), t.extent(2), t.ptr()};
  throw std::invalid_argument(std::string(what) + ": expects (H,W) or (1,H,W)");
}

struct SepFilter {
  std::vector<double> g, dg;  // L2-normalized smooth / derivative taps
};

const SepFilter& gauss_taps() {
  static const SepFilter f = [] {
    SepFilter out;
    out.g.resize(2 * kRadius + 1);
    out.dg.resize(2 * kRadius + 1);
    double norm_g = 0.0, norm_dg = 0.0;
    for (int i = 0; i <= 2 * kRadius; ++i) {
      double u = static_cast<double>(i - kRadius);
      double g = std::exp(-u * u / (2.0 * kSigma * kSigma)) / (kSigma * std::sqrt(2.0 * M_PI));
      out.g[i] = g;
      out.dg[i] = -u / (kSigma * kSigma) * g;
      norm_g += g * g;
      norm_dg += out.dg[i] * out.dg[i];
    }
    norm_g = std::sqrt(norm_g);
    norm_dg = std::sqrt(norm_dg);
    for (int i = 0; i <= 2 * kRadius; ++i) {
      out.g[i] /= norm_g;
      out.dg[i] /= norm_dg;
    }
    return out;
  }();
  return f;
}

// Correlation with a vertical 1-d kernel (taps along rows), mirrored borders.
std::vector<double> filter_rows(const std::vector<double>& x, std::size_t h, std::size_t w,
                                const std::vector<double>& taps) {
  std::vector<double> y(h * w, 0.0);
  int r = static_cast<int>(taps.size() / 2);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int u = -r; u <= r; ++u)
        acc += taps[u + r] * x[reflect(static_cast<std::ptrdiff_t>(i) + u, h) * w + j];
      y[i * w + j] = acc;
    }
  return y;
}

std::vector<double> filter_cols(const std::vector<double>& x, std::size_t h, std::size_t w,
                                const std::vector<double>& taps) {
  std::vector<double> y(h * w, 0.0);
  int r = static_cast<int>(taps.size() / 2);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int v = -r; v <= r; ++v)
        acc += taps[v + r] * x[i * w + reflect(static_cast<std::ptrdiff_t>(j) + v, w)];
      y[i * w + j] = acc;
    }
  return y;
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) parent[b] = a;  // keep the smaller scan-order root
    else parent[a] = b;
  }
};

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

Tensor gradient_magnitude(const Tensor& alpha) {
  Plane a = as_plane(alpha, "gradient_magnitude");
  std::vector<double> x(a.p, a.p + a.h * a.w);
  const SepFilter& f = gauss_taps();
  // x-derivative: smooth over rows, differentiate over columns; y swaps them
  std::vector<double> gx = filter_cols(filter_rows(x, a.h, a.w, f.g), a.h, a.w, f.dg);
  std::vector<double> gy = filter_cols(filter_rows(x, a.h, a.w, f.dg), a.h, a.w, f.g);
  std::vector<double> mag(a.h * a.w);
  for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::sqrt(gx[i] * gx[i] + gy[i] * gy[i]);
  return Tensor::from_data({a.h, a.w}, std::move(mag));
}

std::vector<double> connectivity_lmap(const Tensor& pred, const Tensor& gt) {
  Plane p = as_plane(pred, "connectivity_lmap");
  Plane g = as_plane(gt, "connectivity_lmap");
  require(p.h == g.h && p.w == g.w, "connectivity_lmap: shape mismatch");
  std::size_t h = p.h, w = p.w, n = h * w;

  std::vector<double> lmap(n, -1.0);
  std::vector<std::uint8_t> inter(n);
  for (int t = 1; t <= 9; ++t) {
    double theta = 0.1 * t;
    for (std::size_t i = 0; i < n; ++i) inter[i] = p.p[i] >= theta && g.p[i] >= theta;

    UnionFind uf(n);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        std::size_t idx = i * w + j;
        if (!inter[idx]) continue;
        if (j + 1 < w && inter[idx + 1]) uf.unite(idx, idx + 1);
        if (i + 1 < h && inter[idx + w]) uf.unite(idx, idx + w);
      }
    std::vector<std::size_t> size(n, 0);
    for (std::size_t i = 0; i < n; ++i)
      if (inter[i]) ++size[uf.find(i)];
    std::size_t best_root = n, best_size = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!inter[i]) continue;
      std::size_t r = uf.find(i);
      if (size[r] > best_size) {  // ties resolve to the earliest root seen
        best_size = size[r];
        best_root = r;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      bool in_omega = inter[i] && best_root != n && uf.find(i) == best_root;
      if (!in_omega && lmap[i] < 0.0) lmap[i] = 0.1 * (t - 1);
    }
  }
  for (double& v : lmap)
    if (v < 0.0) v = 1.0;
  return lmap;
}

MetricReport evaluate(const Tensor& pred, const Tensor& gt, const Tensor& trimap) {
  Plane p = as_plane(pred, "evaluate");
  Plane g = as_plane(gt, "evaluate");
  Plane t = as_plane(trimap, "evaluate");
  require(p.h == g.h && p.w == g.w && p.h == t.h && p.w == t.w, "evaluate: shape mismatch");
  std::size_t n = p.h * p.w;
  for (std::size_t i = 0; i < n; ++i) {
    require(p.p[i] >= 0.0 && p.p[i] <= 1.0, "evaluate: prediction outside [0,1]");
    require(g.p[i] >= 0.0 && g.p[i] <= 1.0, "evaluate: ground truth outside [0,1]");
    require(t.p[i] == 0.0 || t.p[i] == 0.5 || t.p[i] == 1.0, "evaluate: trimap must be 0, 0.5 or 1");
  }

  MetricReport rep;
  std::vector<std::uint8_t> mask(n);
  for (std::size_t i = 0; i < n; ++i) {
    mask[i] = t.p[i] == 0.5;
    rep.n_unknown += mask[i];
  }
  if (rep.n_unknown == 0) {
    rep.empty_mask = true;
    return rep;
  }

  double sad = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    double d = p.p[i] - g.p[i];
    sad += std::abs(d);
    sq += d * d;
  }
  rep.sad = sad / 1000.0;
  rep.mse = sq / static_cast<double>(rep.n_unknown) * 1000.0;

  Tensor mp = gradient_magnitude(pred);
  Tensor mg = gradient_magnitude(gt);
  double gsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    double d = mp[i] - mg[i];
    gsum += d * d;
  }
  rep.grad = gsum / 1000.0;

  std::vector<double> lmap = connectivity_lmap(pred, gt);
  double csum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    double dp = p.p[i] - lmap[i];
    double dg = g.p[i] - lmap[i];
    double phip = 1.0 - (dp >= kConnDeadZone ? dp : 0.0);
    double phig = 1.0 - (dg >= kConnDeadZone ? dg : 0.0);
    csum += std::abs(phip - phig);
  }
  rep.conn = csum / 1000.0;
  return rep;
}

void write_report_csv(const std::string& path, const std::vector<EvalRow>& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "name,sad,mse,grad,conn,n_unknown\n";
  double sad = 0, mse = 0, grad = 0, conn = 0;
  std::size_t used = 0, total_unknown = 0;
  for (const EvalRow& row : rows) {
    const MetricReport& r = row.report;
    f << row.name << ',' << fmt6(r.sad) << ',' << fmt6(r.mse) << ',' << fmt6(r.grad) << ','
      << fmt6(r.conn) << ',' << r.n_unknown << '\n';
    total_unknown += r.n_unknown;
    if (!r.empty_mask) {
      sad += r.sad;
      mse += r.mse;
      grad += r.grad;
      conn += r.conn;
      ++used;
    }
  }
  double d = used ? static_cast<double>(used) : 1.0;
  f << "mean," << fmt6(sad / d) << ',' << fmt6(mse / d) << ',' << fmt6(grad / d) << ','
    << fmt6(conn / d) << ',' << total_unknown << '\n';
  if (!f) throw IoError("write failed: " + path);
}

void write_report_jsonl(const std::string& path, const std::vector<EvalRow>& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  for (const EvalRow& row : rows) {
    nlohmann::json j;
    j["name"] = row.name;
    j["sad"] = row.report.sad;
    j["mse"] = row.report.mse;
    j["grad"] = row.report.grad;
    j["conn"] = row.report.conn;
    j["n_unknown"] = row.report.n_unknown;
    j["empty_mask"] = row.report.empty_mask;
    f << j.dump() << '\n';
  }
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace maga
