#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "maga/error.hpp"
#include "maga/image_io.hpp"
#include "maga/metrics.hpp"
#include "maga/random.hpp"
#include "maga/tensor_io.hpp"

using namespace maga;
namespace fs = std::filesystem;

namespace {

// Fresh directory under the system temp root, removed on scope exit.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("maga_test_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  f << bytes;
}

}  // namespace

TEST_CASE("magt roundtrip is bitwise") {
  TempDir dir("magt");
  Rng rng(3);
  std::vector<double> v(2 * 3 * 4);
  for (double& x : v) x = rng.next_range(-5.0, 5.0);
  v[0] = 0.0;
  v[1] = -0.0;
  v[2] = 1e-300;  // subnormal-adjacent magnitudes must survive
  Tensor t = Tensor::from_data({2, 3, 4}, v);
  write_magt(dir.file("t.magt"), t);
  Tensor back = read_magt(dir.file("t.magt"));
  CHECK(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    // bit compare, not value compare: -0.0 == 0.0 would mask a swap
    double da = t[i], db = back[i];
    std::uint64_t a, b;
    std::memcpy(&a, &da, 8);
    std::memcpy(&b, &db, 8);
    CHECK(a == b);
  }
}

TEST_CASE("magt rejects damaged files") {
  TempDir dir("magt_bad");
  CHECK_THROWS_AS(read_magt(dir.file("missing.magt")), IoError);

  spit(dir.file("junk.magt"), "JUNKxxxxxxxxxxxxxxxx");
  CHECK_THROWS_AS(read_magt(dir.file("junk.magt")), IoError);

  write_magt(dir.file("t.magt"), Tensor::full({4, 4}, 1.5));
  std::string bytes = slurp(dir.file("t.magt"));
  spit(dir.file("cut.magt"), bytes.substr(0, bytes.size() - 9));
  CHECK_THROWS_AS(read_magt(dir.file("cut.magt")), IoError);
}

TEST_CASE("ppm and pgm quantize once then roundtrip exactly") {
  TempDir dir("pnm");
  Rng rng(9);
  std::vector<double> v(3 * 5 * 7);
  for (double& x : v) x = rng.next_unit();
  Tensor img = Tensor::from_data({3, 5, 7}, v);
  write_ppm(dir.file("a.ppm"), img);
  Tensor once = read_ppm(dir.file("a.ppm"));
  CHECK(once.shape() == Shape{3, 5, 7});
  for (std::size_t i = 0; i < img.numel(); ++i)
    CHECK(once[i] == std::round(img[i] * 255.0) / 255.0);
  // second pass reproduces the file byte for byte: quantization is idempotent
  write_ppm(dir.file("b.ppm"), once);
  CHECK(slurp(dir.file("a.ppm")) == slurp(dir.file("b.ppm")));

  std::vector<double> g(6 * 4);
  for (double& x : g) x = rng.next_unit();
  Tensor gray = Tensor::from_data({6, 4}, g);
  write_pgm(dir.file("g.pgm"), gray);
  Tensor gback = read_pgm(dir.file("g.pgm"));
  CHECK(gback.shape() == Shape{6, 4});
  for (std::size_t i = 0; i < gray.numel(); ++i)
    CHECK(gback[i] == std::round(gray[i] * 255.0) / 255.0);

  CHECK_THROWS_AS(write_ppm(dir.file("x.ppm"), Tensor::full({3, 2, 2}, 1.5)),
                  std::invalid_argument);
  CHECK_THROWS_AS(write_ppm(dir.file("x.ppm"), Tensor::full({2, 2}, 0.5)), std::invalid_argument);
  CHECK_THROWS_AS(read_ppm(dir.file("absent.ppm")), IoError);
}

TEST_CASE("pnm header errors are io errors") {
  TempDir dir("pnm_bad");
  spit(dir.file("bad_magic.ppm"), "P3\n2 2\n255\nxxxx");
  CHECK_THROWS_AS(read_ppm(dir.file("bad_magic.ppm")), IoError);

  spit(dir.file("bad_maxval.pgm"), "P5\n2 2\n65535\nxxxxxxxx");
  CHECK_THROWS_AS(read_pgm(dir.file("bad_maxval.pgm")), IoError);

  spit(dir.file("short.pgm"), "P5\n4 4\n255\nxx");
  CHECK_THROWS_AS(read_pgm(dir.file("short.pgm")), IoError);
}

TEST_CASE("trimap codes survive and everything else is rejected") {
  TempDir dir("tri");
  Tensor tri = Tensor::from_data({2, 3}, {0.0, 0.5, 1.0, 1.0, 0.5, 0.0});
  write_trimap(dir.file("t.pgm"), tri);
  Tensor back = read_trimap(dir.file("t.pgm"));
  for (std::size_t i = 0; i < 6; ++i) CHECK(back[i] == tri[i]);

  // the file is a plain PGM whose bytes are exactly {0, 128, 255}
  Tensor raw = read_pgm(dir.file("t.pgm"));
  CHECK(raw[0] == 0.0);
  CHECK(raw[1] == 128.0 / 255.0);
  CHECK(raw[2] == 1.0);

  CHECK_THROWS_AS(write_trimap(dir.file("x.pgm"), Tensor::full({2, 2}, 0.25)),
                  std::invalid_argument);

  spit(dir.file("bad.pgm"), std::string("P5\n2 2\n255\n") + '\x00' + '\x80' + '\xff' + '\x4d');
  CHECK_THROWS_AS(read_trimap(dir.file("bad.pgm")), std::invalid_argument);
  try {
    read_trimap(dir.file("bad.pgm"));
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("77") != std::string::npos);  // 0x4d, the offending byte
  }
}

TEST_CASE("checkpoint roundtrip preserves params and config") {
  TempDir dir("ckpt");
  Rng rng(11);
  ParamStore ps;
  std::vector<double> a(12), b(5);
  for (double& x : a) x = rng.next_range(-2.0, 2.0);
  for (double& x : b) x = rng.next_range(-2.0, 2.0);
  ps.add("enc.w", Tensor::from_data({3, 4}, a));
  ps.add("dec.b", Tensor::from_data({5}, b));

  std::string cfg = "depth=2\nseed=7\n";
  save_checkpoint(dir.file("ck"), ps, cfg);
  Checkpoint ck = load_checkpoint(dir.file("ck"));
  CHECK(ck.config_text == cfg);
  REQUIRE(ck.params.names() == ps.names());  // manifest preserves insertion order
  for (const std::string& name : ps.names()) {
    const Tensor &orig = ps.get(name), &got = ck.params.get(name);
    REQUIRE(got.shape() == orig.shape());
    for (std::size_t i = 0; i < orig.numel(); ++i) CHECK(got[i] == orig[i]);
  }

  CHECK_THROWS_AS(load_checkpoint(dir.file("nowhere")), IoError);

  // manifest that lies about a shape
  spit(dir.file("ck/manifest.txt"), "enc.w (2x2) param\ndec.b (5) param\n");
  CHECK_THROWS_AS(load_checkpoint(dir.file("ck")), IoError);
}

TEST_CASE("report writers: fixed formatting, mean row, empty-mask handling") {
  TempDir dir("report");
  MetricReport r1{}, r2{}, r3{};
  r1.sad = 1.25;
  r1.mse = 0.5;
  r1.grad = 2.0;
  r1.conn = 0.125;
  r1.n_unknown = 10;
  r2.sad = 0.75;
  r2.mse = 1.5;
  r2.grad = 1.0;
  r2.conn = 0.375;
  r2.n_unknown = 30;
  r3.empty_mask = true;  // excluded from the mean, still listed
  std::vector<EvalRow> rows = {{"one", r1}, {"two", r2}, {"hole", r3}};

  write_report_csv(dir.file("r.csv"), rows);
  std::string csv = slurp(dir.file("r.csv"));
  CHECK(csv ==
        "name,sad,mse,grad,conn,n_unknown\n"
        "one,1.250000,0.500000,2.000000,0.125000,10\n"
        "two,0.750000,1.500000,1.000000,0.375000,30\n"
        "hole,0.000000,0.000000,0.000000,0.000000,0\n"
        "mean,1.000000,1.000000,1.500000,0.250000,40\n");

  write_report_jsonl(dir.file("r.jsonl"), rows);
  std::string jsonl = slurp(dir.file("r.jsonl"));
  CHECK(jsonl.find("\"name\":\"one\"") != std::string::npos);
  CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 3);

  // byte-stable across reruns
  write_report_csv(dir.file("r2.csv"), rows);
  CHECK(slurp(dir.file("r.csv")) == slurp(dir.file("r2.csv")));
  write_report_jsonl(dir.file("r2.jsonl"), rows);
  CHECK(slurp(dir.file("r.jsonl")) == slurp(dir.file("r2.jsonl")));
}
