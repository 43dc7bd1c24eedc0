#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

// Path to the maga binary, provided by ctest through the environment.
std::string cli() {
  const char* p = std::getenv("MAGA_CLI");
  REQUIRE_MESSAGE(p != nullptr, "MAGA_CLI must point at the maga binary");
  return p;
}

struct RunResult {
  int exit_code;
  std::string output;  // stdout and stderr interleaved
};

RunResult run(const std::string& args) {
  std::string cmd = cli() + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) out.append(buf, n);
  int status = pclose(pipe);
  int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return {code, out};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("maga_cli_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE_MESSAGE(f.good(), ("missing file: " + path));
  return std::string(std::istreambuf_iterator<char>(f), {});
}

bool same_bytes(const std::string& a, const std::string& b) { return slurp(a) == slurp(b); }

std::size_t line_count(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

// Every run_training knob turned down for speed.
const std::string kTinyNet =
    "--set height=16 --set width=16 --set dim=16 --set depth=1 --set n_maga=1 "
    "--set heads=2 --set c2=4 --set c4=6 --set c8=8";

}  // namespace

TEST_CASE("cli: usage mistakes exit 1") {
  CHECK(run("").exit_code == 1);
  CHECK(run("frobnicate").exit_code == 1);
  CHECK(run("--help").exit_code == 0);
}

TEST_CASE("cli: unknown config keys are rejected with exit 1") {
  TempDir dir("badkey");
  RunResult r = run("train --out " + dir.sub("o") + " --set bogus_knob=1");
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("bogus_knob") != std::string::npos);
}

TEST_CASE("cli: missing dataset manifest exits 2 and names the path") {
  TempDir dir("nodata");
  std::string manifest = dir.sub("absent/manifest.txt");
  RunResult r = run("train --out " + dir.sub("o") + " " + kTinyNet +
                    " --set steps=1 --set data=" + manifest);
  CHECK(r.exit_code == 2);
  CHECK(r.output.find(manifest) != std::string::npos);
}

TEST_CASE("cli: synth writes a deterministic dataset") {
  TempDir dir("synth");
  std::string a = dir.sub("a"), b = dir.sub("b");
  std::string args = "synth --set count=3 --set height=16 --set width=16 --seed 9";
  RunResult r1 = run(args + " --out " + a);
  REQUIRE_MESSAGE(r1.exit_code == 0, r1.output);

  std::string manifest = slurp(a + "/manifest.txt");
  CHECK(line_count(manifest) == 3);
  for (const char* name : {"img_0000", "img_0001", "img_0002"}) {
    CHECK(fs::exists(fs::path(a) / (std::string(name) + ".ppm")));
    CHECK(fs::exists(fs::path(a) / (std::string(name) + ".alpha.pgm")));
    CHECK(fs::exists(fs::path(a) / (std::string(name) + ".trimap.pgm")));
  }
  CHECK(fs::exists(fs::path(a) / "config.resolved.txt"));

  RunResult r2 = run(args + " --out " + b);
  REQUIRE(r2.exit_code == 0);
  for (const auto& entry : fs::directory_iterator(a)) {
    std::string name = entry.path().filename().string();
    CHECK_MESSAGE(same_bytes(entry.path().string(), b + "/" + name), ("differs: " + name));
  }
}

TEST_CASE("cli: train, rerun from snapshot, eval, infer") {
  TempDir dir("chain");
  std::string t1 = dir.sub("t1");

  RunResult train = run("train --out " + t1 + " " + kTinyNet +
                        " --set steps=6 --set batch=2 --set n_train=2");
  REQUIRE_MESSAGE(train.exit_code == 0, train.output);
  CHECK(line_count(slurp(t1 + "/loss.csv")) == 7);  // header + 6 steps
  CHECK(fs::exists(fs::path(t1) / "checkpoint/manifest.txt"));

  // the resolved snapshot alone must reproduce the run byte for byte
  std::string t2 = dir.sub("t2");
  RunResult rerun = run("train --config " + t1 + "/config.resolved.txt --out " + t2);
  REQUIRE_MESSAGE(rerun.exit_code == 0, rerun.output);
  CHECK(same_bytes(t1 + "/loss.csv", t2 + "/loss.csv"));
  CHECK(same_bytes(t1 + "/config.resolved.txt", t2 + "/config.resolved.txt"));
  CHECK(same_bytes(t1 + "/checkpoint/manifest.txt", t2 + "/checkpoint/manifest.txt"));
  CHECK(same_bytes(t1 + "/checkpoint/config.txt", t2 + "/checkpoint/config.txt"));
  for (const auto& entry : fs::directory_iterator(fs::path(t1) / "checkpoint/tensors")) {
    std::string name = entry.path().filename().string();
    CHECK_MESSAGE(same_bytes(entry.path().string(), t2 + "/checkpoint/tensors/" + name),
                  ("differs: " + name));
  }

  // a snapshot resolved for train cannot drive eval
  RunResult wrong = run("eval --config " + t1 + "/config.resolved.txt --out " + dir.sub("w"));
  CHECK(wrong.exit_code == 1);

  std::string ev = dir.sub("ev");
  RunResult eval = run("eval --out " + ev + " --set checkpoint=" + t1 +
                       "/checkpoint --set n_eval=2");
  REQUIRE_MESSAGE(eval.exit_code == 0, eval.output);
  std::string report = slurp(ev + "/report.csv");
  CHECK(line_count(report) == 4);  // header, two rows, mean
  CHECK(report.find("mean,") != std::string::npos);
  CHECK(fs::exists(fs::path(ev) / "report.jsonl"));

  // eval without a checkpoint is a validation error
  CHECK(run("eval --out " + dir.sub("e2")).exit_code == 1);

  std::string data = dir.sub("data");
  REQUIRE(run("synth --out " + data + " --set count=1 --set height=16 --set width=16").exit_code ==
          0);
  std::string inf = dir.sub("inf");
  std::string inf_args = "--set checkpoint=" + t1 + "/checkpoint --set image=" + data +
                         "/img_0000.ppm --set trimap=" + data + "/img_0000.trimap.pgm";
  RunResult infer =
      run("infer --out " + inf + " " + inf_args + " --set gt=" + data + "/img_0000.alpha.pgm");
  REQUIRE_MESSAGE(infer.exit_code == 0, infer.output);
  std::string pgm = slurp(inf + "/alpha.pgm");
  CHECK(pgm.substr(0, 2) == "P5");
  CHECK(pgm.find("16 16") != std::string::npos);
  CHECK(fs::exists(fs::path(inf) / "report.csv"));

  std::string inf2 = dir.sub("inf2");
  REQUIRE(run("infer --out " + inf2 + " " + inf_args).exit_code == 0);
  CHECK(same_bytes(inf + "/alpha.pgm", inf2 + "/alpha.pgm"));

  // infer on a trimap file holding a non-code byte
  std::string bad = dir.sub("bad.pgm");
  std::ofstream f(bad, std::ios::binary);
  f << "P5\n16 16\n255\n";
  for (int i = 0; i < 256; ++i) f.put(static_cast<char>(7));
  f.close();
  RunResult badtri = run("infer --out " + dir.sub("inf3") + " --set checkpoint=" + t1 +
                         "/checkpoint --set image=" + data + "/img_0000.ppm --set trimap=" + bad);
  CHECK(badtri.exit_code == 1);
  CHECK(badtri.output.find("7") != std::string::npos);
}

TEST_CASE("cli: zero learning rate gives a flat loss curve") {
  TempDir dir("flatlr");
  RunResult r = run("train --out " + dir.sub("o") + " " + kTinyNet +
                    " --set steps=4 --set batch=1 --set n_train=1 --set lr=0 "
                    "--set weight_decay=0");
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  std::ifstream f(dir.sub("o") + "/loss.csv");
  std::string header, first, line;
  std::getline(f, header);
  std::getline(f, first);
  std::string first_loss = first.substr(first.find(',') + 1);
  int rows = 1;
  while (std::getline(f, line)) {
    CHECK(line.substr(line.find(',') + 1) == first_loss);
    ++rows;
  }
  CHECK(rows == 4);
}

TEST_CASE("cli: gradcheck negative control fails loudly") {
  TempDir dir("corrupt");
  RunResult r = run("gradcheck --out " + dir.sub("o") + " --set seeds=1 --set corrupt=true");
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("FAIL") != std::string::npos);
  // the report still lists every op, pass column false somewhere
  std::string report = slurp(dir.sub("o") + "/report.csv");
  CHECK(report.find("false") != std::string::npos);
  CHECK(report.find("matting_net") != std::string::npos);
}
