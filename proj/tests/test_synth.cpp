#include <cmath>

#include "doctest.h"
#include "maga/random.hpp"
#include "maga/synth.hpp"

using namespace maga;

TEST_CASE("compositing identities") {
  Rng rng(6);
  std::vector<double> f(3 * 16), b(3 * 16);
  for (double& x : f) x = rng.next_unit();
  for (double& x : b) x = rng.next_unit();
  Tensor fg = Tensor::from_data({3, 4, 4}, f), bg = Tensor::from_data({3, 4, 4}, b);
  Tensor opaque = composite(fg, bg, Tensor::full({4, 4}, 1.0));
  Tensor clear = composite(fg, bg, Tensor::zeros({4, 4}));
  for (std::size_t i = 0; i < 48; ++i) {
    CHECK(opaque[i] == fg[i]);
    CHECK(clear[i] == bg[i]);
  }
  Tensor half = composite(fg, bg, Tensor::full({4, 4}, 0.5));
  CHECK(half[7] == 0.5 * fg[7] + 0.5 * bg[7]);
}

TEST_CASE("every synthesized pair satisfies the compositing round trip") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    SynthSample s = make_sample(24, 24, seed, 0);
    Tensor re = composite(s.fg, s.bg, s.alpha);
    for (std::size_t i = 0; i < re.numel(); ++i) CHECK(re[i] == s.image[i]);
  }
}

TEST_CASE("sample invariants: shapes, ranges, codes") {
  SynthSample s = make_sample(32, 32, 3, 1);
  CHECK(s.image.shape() == Shape{3, 32, 32});
  CHECK(s.fg.shape() == Shape{3, 32, 32});
  CHECK(s.bg.shape() == Shape{3, 32, 32});
  CHECK(s.alpha.shape() == Shape{32, 32});
  CHECK(s.trimap.shape() == Shape{32, 32});
  for (std::size_t i = 0; i < 1024; ++i) {
    CHECK(s.alpha[i] >= 0.0);
    CHECK(s.alpha[i] <= 1.0);
    bool code = s.trimap[i] == 0.0 || s.trimap[i] == 0.5 || s.trimap[i] == 1.0;
    CHECK(code);
  }
  for (std::size_t i = 0; i < s.image.numel(); ++i) {
    CHECK(s.image[i] >= 0.0);
    CHECK(s.image[i] <= 1.0);
  }
}

TEST_CASE("samples are deterministic and streams do not alias") {
  SynthSample a = make_sample(16, 16, 7, 2);
  SynthSample b = make_sample(16, 16, 7, 2);
  for (std::size_t i = 0; i < a.image.numel(); ++i) CHECK(a.image[i] == b.image[i]);
  for (std::size_t i = 0; i < 256; ++i) CHECK(a.alpha[i] == b.alpha[i]);

  SynthSample c = make_sample(16, 16, 7, 3);
  SynthSample d = make_sample(16, 16, 8, 2);
  double diff_c = 0, diff_d = 0;
  for (std::size_t i = 0; i < 256; ++i) {
    diff_c = std::max(diff_c, std::abs(a.alpha[i] - c.alpha[i]));
    diff_d = std::max(diff_d, std::abs(a.alpha[i] - d.alpha[i]));
  }
  CHECK(diff_c > 0.0);
  CHECK(diff_d > 0.0);
}

TEST_CASE("trimap construction from a hand-built alpha") {
  // 9x9 all-background except one partial pixel in the middle.
  std::vector<double> av(81, 0.0);
  av[4 * 9 + 4] = 0.5;
  Tensor tri = trimap_from_alpha(Tensor::from_data({9, 9}, av), 2, 1);
  // square dilation radius 2 around (4,4) becomes unknown
  CHECK(tri.at2(4, 4) == 0.5);
  CHECK(tri.at2(4, 6) == 0.5);
  CHECK(tri.at2(2, 4) == 0.5);
  CHECK(tri.at2(2, 2) == 0.5);   // corner of the 5x5 square window
  CHECK(tri.at2(4, 7) == 0.0);   // Chebyshev distance 3 > 2
  CHECK(tri.at2(1, 1) == 0.0);
  CHECK(tri.at2(0, 0) == 0.0);   // border: out of bounds counts as full
  CHECK(tri.at2(8, 8) == 0.0);

  // all-foreground: no partials, everything erodes to definite fg
  Tensor solid = trimap_from_alpha(Tensor::full({9, 9}, 1.0), 2, 1);
  for (std::size_t i = 0; i < 81; ++i) CHECK(solid[i] == 1.0);

  CHECK_THROWS_AS(trimap_from_alpha(Tensor::full({4, 4}, 0.5), 1, 1, 0.9, 0.1),
                  std::invalid_argument);
}

TEST_CASE("unknown fraction stays inside the working band") {
  for (std::uint64_t seed = 20; seed < 40; ++seed) {
    SynthSample s = make_sample(32, 32, seed, 0);
    std::size_t unknown = 0, fg = 0;
    for (std::size_t i = 0; i < 1024; ++i) {
      unknown += s.trimap[i] == 0.5;
      fg += s.trimap[i] == 1.0;
    }
    double frac = static_cast<double>(unknown) / 1024.0;
    INFO("seed ", seed, " unknown fraction ", frac);
    CHECK(frac > 0.0);
    CHECK(frac < 0.6);
    CHECK(fg > 0);  // the sprite body survives erosion
  }
}

TEST_CASE("foreground sprite carries real partial coverage") {
  Rng rng(12);
  ForegroundSprite sp = gen_hairline_foreground(32, 32, rng, 3);
  std::size_t partial = 0, solid = 0;
  for (std::size_t i = 0; i < 1024; ++i) {
    partial += sp.alpha[i] > 0.01 && sp.alpha[i] < 0.99;
    solid += sp.alpha[i] >= 0.99;
  }
  CHECK(partial > 10);  // strand edges produce sub-pixel coverage
  CHECK(solid > 20);    // the elliptical body is opaque

  Rng rng2(12);
  CHECK_THROWS_AS(gen_hairline_foreground(32, 32, rng2, 0), std::invalid_argument);
}

TEST_CASE("background stays in range and varies") {
  Rng rng(15);
  Tensor bg = gen_background(16, 16, rng);
  double mn = 1e9, mx = -1e9;
  for (std::size_t i = 0; i < bg.numel(); ++i) {
    mn = std::min(mn, bg[i]);
    mx = std::max(mx, bg[i]);
    CHECK(bg[i] >= 0.0);
    CHECK(bg[i] <= 1.0);
  }
  CHECK(mx - mn > 0.05);
}

TEST_CASE("rng basics") {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK_THROWS_AS(a.next_index(0), std::invalid_argument);
  for (int i = 0; i < 100; ++i) {
    double u = a.next_unit();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(b.next_range(2.0, 3.0) >= 2.0);
  }
}
