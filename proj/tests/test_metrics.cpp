#include <cmath>
#include <queue>
#include <vector>

#include "doctest.h"
#include "maga/metrics.hpp"
#include "maga/random.hpp"

using namespace maga;

namespace {

Tensor rnd01(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.next_unit();
  return Tensor::from_data(std::move(shape), std::move(v));
}

std::size_t reflect_idx(std::ptrdiff_t i, std::size_t n) {
  std::ptrdiff_t sn = static_cast<std::ptrdiff_t>(n);
  while (i < 0 || i >= sn) {
    if (i < 0) i = -i - 1;
    if (i >= sn) i = 2 * sn - 1 - i;
  }
  return static_cast<std::size_t>(i);
}

// Direct 2-d correlation oracle for the Gaussian-derivative magnitude: the
// separable pipeline must equal one full 11 x 11 pass built from the same
// 1-d taps (sigma 1.4, radius 5, L2-normalized).
Tensor gradient_magnitude_oracle(const Tensor& alpha) {
  std::size_t h = alpha.extent(0), w = alpha.extent(1);
  const int r = 5;
  const double sigma = 1.4;
  std::vector<double> g(2 * r + 1), dg(2 * r + 1);
  double ng = 0, ndg = 0;
  for (int i = 0; i <= 2 * r; ++i) {
    double u = i - r;
    g[i] = std::exp(-u * u / (2 * sigma * sigma)) / (sigma * std::sqrt(2.0 * M_PI));
    dg[i] = -u / (sigma * sigma) * g[i];
    ng += g[i] * g[i];
    ndg += dg[i] * dg[i];
  }
  ng = std::sqrt(ng);
  ndg = std::sqrt(ndg);
  std::vector<double> mag(h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double gx = 0, gy = 0;
      for (int u = -r; u <= r; ++u)
        for (int v = -r; v <= r; ++v) {
          double x = alpha[reflect_idx(static_cast<std::ptrdiff_t>(i) + u, h) * w +
                           reflect_idx(static_cast<std::ptrdiff_t>(j) + v, w)];
          gx += (g[u + r] / ng) * (dg[v + r] / ndg) * x;
          gy += (dg[u + r] / ndg) * (g[v + r] / ng) * x;
        }
      mag[i * w + j] = std::sqrt(gx * gx + gy * gy);
    }
  return Tensor::from_data({h, w}, std::move(mag));
}

// Flood-fill l-map oracle: largest 4-connected component of the thresholded
// intersection per level; size ties go to the component met first in scan
// order. A pixel's level is the last threshold at which it still belonged.
std::vector<double> lmap_oracle(const Tensor& pred, const Tensor& gt, std::size_t h, std::size_t w) {
  std::size_t n = h * w;
  std::vector<double> lmap(n, -1.0);
  for (int t = 1; t <= 9; ++t) {
    double theta = 0.1 * t;
    std::vector<std::uint8_t> inter(n);
    for (std::size_t i = 0; i < n; ++i) inter[i] = pred[i] >= theta && gt[i] >= theta;
    std::vector<int> comp(n, -1);
    std::vector<std::size_t> comp_size;
    for (std::size_t s = 0; s < n; ++s) {
      if (!inter[s] || comp[s] >= 0) continue;
      int id = static_cast<int>(comp_size.size());
      std::size_t size = 0;
      std::queue<std::size_t> q;
      q.push(s);
      comp[s] = id;
      while (!q.empty()) {
        std::size_t cur = q.front();
        q.pop();
        ++size;
        std::size_t ci = cur / w, cj = cur % w;
        std::size_t nb[4];
        std::size_t cnt = 0;
        if (ci > 0) nb[cnt++] = cur - w;
        if (ci + 1 < h) nb[cnt++] = cur + w;
        if (cj > 0) nb[cnt++] = cur - 1;
        if (cj + 1 < w) nb[cnt++] = cur + 1;
        for (std::size_t x = 0; x < cnt; ++x)
          if (inter[nb[x]] && comp[nb[x]] < 0) {
            comp[nb[x]] = id;
            q.push(nb[x]);
          }
      }
      comp_size.push_back(size);
    }
    int best = -1;
    std::size_t best_size = 0;
    for (std::size_t id = 0; id < comp_size.size(); ++id)
      if (comp_size[id] > best_size) {
        best_size = comp_size[id];
        best = static_cast<int>(id);
      }
    for (std::size_t i = 0; i < n; ++i) {
      bool in_omega = inter[i] && comp[i] == best;
      if (!in_omega && lmap[i] < 0.0) lmap[i] = 0.1 * (t - 1);
    }
  }
  for (double& v : lmap)
    if (v < 0.0) v = 1.0;
  return lmap;
}

double conn_from_lmap(const Tensor& pred, const Tensor& gt, const std::vector<double>& lmap) {
  double acc = 0;
  for (std::size_t i = 0; i < lmap.size(); ++i) {
    double dp = pred[i] - lmap[i], dg = gt[i] - lmap[i];
    double phip = 1.0 - (dp >= 0.15 ? dp : 0.0);
    double phig = 1.0 - (dg >= 0.15 ? dg : 0.0);
    acc += std::abs(phip - phig);
  }
  return acc / 1000.0;
}

}  // namespace

TEST_CASE("sad and mse against naive loops") {
  Rng rng(2);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor pred = rnd01({6, 7}, rng), gt = rnd01({6, 7}, rng);
    std::vector<double> tm(42);
    for (double& v : tm) v = 0.5 * static_cast<double>(rng.next_index(3));
    Tensor trimap = Tensor::from_data({6, 7}, tm);
    MetricReport r = evaluate(pred, gt, trimap);
    double sad = 0, sq = 0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < 42; ++i) {
      if (trimap[i] != 0.5) continue;
      sad += std::abs(pred[i] - gt[i]);
      sq += (pred[i] - gt[i]) * (pred[i] - gt[i]);
      ++cnt;
    }
    if (cnt == 0) {
      CHECK(r.empty_mask);
      continue;
    }
    CHECK(r.n_unknown == cnt);
    CHECK(r.sad == sad / 1000.0);
    CHECK(r.mse == sq / static_cast<double>(cnt) * 1000.0);
  }
}

TEST_CASE("gradient magnitude equals the direct 2-d oracle") {
  Rng rng(8);
  Tensor a = rnd01({16, 16}, rng);
  Tensor fast = gradient_magnitude(a);
  Tensor slow = gradient_magnitude_oracle(a);
  for (std::size_t i = 0; i < 256; ++i) CHECK(std::abs(fast[i] - slow[i]) < 1e-10);
  // small input exercises the mirrored border
  Tensor tiny = rnd01({3, 4}, rng);
  Tensor ft = gradient_magnitude(tiny), st = gradient_magnitude_oracle(tiny);
  for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(ft[i] - st[i]) < 1e-10);
}

TEST_CASE("connectivity l-map matches flood fill on every 3x3 binary pair") {
  std::vector<double> pv(9), gv(9);
  for (unsigned pm = 0; pm < 512; ++pm)
    for (unsigned gm = 0; gm < 512; ++gm) {
      for (std::size_t i = 0; i < 9; ++i) {
        pv[i] = (pm >> i) & 1 ? 1.0 : 0.0;
        gv[i] = (gm >> i) & 1 ? 1.0 : 0.0;
      }
      Tensor pred = Tensor::from_data({3, 3}, pv), gt = Tensor::from_data({3, 3}, gv);
      std::vector<double> fast = connectivity_lmap(pred, gt);
      std::vector<double> slow = lmap_oracle(pred, gt, 3, 3);
      for (std::size_t i = 0; i < 9; ++i) {
        if (fast[i] != slow[i]) {
          CAPTURE(pm);
          CAPTURE(gm);
          CAPTURE(i);
        }
        REQUIRE(fast[i] == slow[i]);
      }
    }
}

TEST_CASE("connectivity metric on random continuous mattes") {
  Rng rng(19);
  for (int rep = 0; rep < 200; ++rep) {
    Tensor pred = rnd01({8, 8}, rng), gt = rnd01({8, 8}, rng);
    Tensor trimap = Tensor::full({8, 8}, 0.5);
    MetricReport r = evaluate(pred, gt, trimap);
    double oracle = conn_from_lmap(pred, gt, lmap_oracle(pred, gt, 8, 8));
    CHECK(std::abs(r.conn - oracle) < 1e-10);
  }
}

TEST_CASE("identical mattes give an all-zero report") {
  Rng rng(4);
  Tensor a = rnd01({10, 10}, rng);
  std::vector<double> tm(100, 0.0);
  for (std::size_t i = 30; i < 70; ++i) tm[i] = 0.5;
  MetricReport r = evaluate(a, a, Tensor::from_data({10, 10}, tm));
  CHECK(r.n_unknown == 40);
  CHECK(r.sad == 0.0);
  CHECK(r.mse == 0.0);
  CHECK(r.grad == 0.0);
  CHECK(r.conn == 0.0);
  CHECK_FALSE(r.empty_mask);
}

TEST_CASE("empty unknown region sets the flag and zeroes the fields") {
  Tensor a = Tensor::full({4, 4}, 0.3);
  MetricReport r = evaluate(a, a, Tensor::zeros({4, 4}));
  CHECK(r.empty_mask);
  CHECK(r.n_unknown == 0);
  CHECK(r.sad == 0.0);
}

TEST_CASE("evaluate validates its inputs") {
  Tensor ok = Tensor::full({2, 2}, 0.5);
  Tensor tri = Tensor::full({2, 2}, 0.5);
  CHECK_THROWS_AS(evaluate(Tensor::full({2, 2}, 1.5), ok, tri), std::invalid_argument);
  CHECK_THROWS_AS(evaluate(ok, Tensor::full({2, 2}, -0.1), tri), std::invalid_argument);
  CHECK_THROWS_AS(evaluate(ok, ok, Tensor::full({2, 2}, 0.3)), std::invalid_argument);
  CHECK_THROWS_AS(evaluate(ok, ok, Tensor::full({3, 2}, 0.5)), std::invalid_argument);
  // (1, H, W) planes are accepted
  CHECK_NOTHROW(evaluate(Tensor::full({1, 2, 2}, 0.5), ok, tri));
}

TEST_CASE("perfectly disconnected prediction is punished by conn") {
  // gt: one solid 4-connected bar; pred: same mass split into isolated dots.
  Tensor gt = Tensor::from_data({3, 3}, {0, 0, 0, 1, 1, 1, 0, 0, 0});
  Tensor pred = Tensor::from_data({3, 3}, {1, 0, 1, 0, 0, 0, 1, 0, 1});
  Tensor trimap = Tensor::full({3, 3}, 0.5);
  MetricReport same = evaluate(gt, gt, trimap);
  MetricReport split = evaluate(pred, gt, trimap);
  CHECK(same.conn == 0.0);
  CHECK(split.conn > 0.0);
}
