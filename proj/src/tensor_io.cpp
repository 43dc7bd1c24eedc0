#include "maga/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "maga/error.hpp"

namespace maga {

namespace {

constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxRank = 8;

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  put_u64(out, bits);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw IoError("truncated tensor file: " + path);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (in.gcount() != 8) throw IoError("truncated tensor file: " + path);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::string shape_tag(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out;
}

}  // namespace

void write_magt(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write("MAGT", 4);
  put_u32(f, kVersion);
  put_u32(f, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t i = 0; i < t.rank(); ++i) put_u64(f, t.extent(i));
  for (std::size_t i = 0; i < t.numel(); ++i) put_f64(f, t[i]);
  if (!f) throw IoError("write failed: " + path);
}

Tensor read_magt(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, "MAGT", 4) != 0)
    throw IoError("bad magic in " + path);
  std::uint32_t version = get_u32(f, path);
  if (version != kVersion) throw IoError("unsupported version in " + path);
  std::uint32_t rank = get_u32(f, path);
  if (rank == 0 || rank > kMaxRank) throw IoError("bad rank in " + path);
  Shape shape(rank);
  std::size_t numel = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    std::uint64_t e = get_u64(f, path);
    if (e == 0 || e > (1ULL << 32)) throw IoError("bad extent in " + path);
    shape[i] = static_cast<std::size_t>(e);
    numel *= shape[i];
    if (numel > (1ULL << 32)) throw IoError("tensor too large in " + path);
  }
  std::vector<double> data(numel);
  for (std::size_t i = 0; i < numel; ++i)
    data[i] = std::bit_cast<double>(get_u64(f, path));
  try {
    return Tensor::from_data(std::move(shape), std::move(data));
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("invalid payload in ") + path + ": " + e.what());
  }
}

void save_checkpoint(const std::string& dir, const ParamStore& params, const std::string& config_text) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "tensors", ec);
  if (ec) throw IoError("cannot create checkpoint dir: " + dir);

  std::ofstream manifest(fs::path(dir) / "manifest.txt", std::ios::binary);
  if (!manifest) throw IoError("cannot open manifest for writing in " + dir);
  for (const std::string& name : params.names()) {
    const Tensor& t = params.get(name);
    write_magt((fs::path(dir) / "tensors" / (name + ".magt")).string(), t);
    manifest << name << ' ' << shape_tag(t.shape()) << " param\n";
  }
  if (!manifest) throw IoError("manifest write failed in " + dir);

  std::ofstream cfg(fs::path(dir) / "config.txt", std::ios::binary);
  if (!cfg) throw IoError("cannot open config for writing in " + dir);
  cfg << config_text;
  if (!cfg) throw IoError("config write failed in " + dir);
}

Checkpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(dir) / "manifest.txt", std::ios::binary);
  if (!manifest) throw IoError("cannot open manifest in " + dir);

  Checkpoint ck;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string name, shape, role;
    ss >> name >> shape >> role;
    if (name.empty() || shape.empty() || role != "param")
      throw IoError("malformed manifest line in " + dir + ": " + line);
    Tensor t = read_magt((fs::path(dir) / "tensors" / (name + ".magt")).string());
    if (shape_tag(t.shape()) != shape)
      throw IoError("manifest shape disagrees with tensor for " + name + " in " + dir);
    ck.params.add(name, std::move(t));
  }

  std::ifstream cfg(fs::path(dir) / "config.txt", std::ios::binary);
  if (!cfg) throw IoError("cannot open config in " + dir);
  std::ostringstream buf;
  buf << cfg.rdbuf();
  ck.config_text = buf.str();
  return ck;
}

}  // namespace maga
