#include "maga/image_io.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "maga/error.hpp"

namespace maga {

namespace {

std::uint8_t quantize(double v, const std::string& path) {
  if (v < 0.0 || v > 1.0) throw std::invalid_argument("pixel outside [0,1] writing " + path);
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

// Reads one PNM header token, skipping whitespace and # comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {}
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

struct PnmHeader {
  std::size_t w, h;
};

PnmHeader read_header(std::istream& in, const std::string& magic, const std::string& path) {
  std::string m = next_token(in);
  if (m != magic) throw IoError("bad magic in " + path + " (expected " + magic + ")");
  std::string ws = next_token(in), hs = next_token(in), maxs = next_token(in);
  std::size_t w = 0, h = 0;
  try {
    w = std::stoull(ws);
    h = std::stoull(hs);
  } catch (const std::exception&) {
    throw IoError("bad dimensions in " + path);
  }
  if (w == 0 || h == 0) throw IoError("bad dimensions in " + path);
  if (maxs != "255") throw IoError("unsupported maxval in " + path);
  return PnmHeader{w, h};
}

std::vector<std::uint8_t> read_payload(std::istream& in, std::size_t n, const std::string& path) {
  std::vector<std::uint8_t> bytes(n);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw IoError("truncated pixel data in " + path);
  return bytes;
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.extent(0) != 3)
    throw std::invalid_argument("write_ppm: image must be (3, H, W)");
  std::size_t h = image.extent(1), w = image.extent(2), hw = h * w;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "P6\n" << w << " " << h << "\n255\n";
  std::vector<std::uint8_t> bytes(3 * hw);
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < 3; ++c) bytes[i * 3 + c] = quantize(image[c * hw + i], path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

Tensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  PnmHeader hd = read_header(f, "P6", path);
  std::vector<std::uint8_t> bytes = read_payload(f, 3 * hd.w * hd.h, path);
  std::size_t hw = hd.w * hd.h;
  std::vector<double> img(3 * hw);
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < 3; ++c) img[c * hw + i] = bytes[i * 3 + c] / 255.0;
  return Tensor::from_data({3, hd.h, hd.w}, std::move(img));
}

void write_pgm(const std::string& path, const Tensor& gray) {
  if (gray.rank() != 2) throw std::invalid_argument("write_pgm: image must be (H, W)");
  std::size_t h = gray.extent(0), w = gray.extent(1);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  std::vector<std::uint8_t> bytes(h * w);
  for (std::size_t i = 0; i < h * w; ++i) bytes[i] = quantize(gray[i], path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

Tensor read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  PnmHeader hd = read_header(f, "P5", path);
  std::vector<std::uint8_t> bytes = read_payload(f, hd.w * hd.h, path);
  std::vector<double> img(hd.w * hd.h);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = bytes[i] / 255.0;
  return Tensor::from_data({hd.h, hd.w}, std::move(img));
}

void write_trimap(const std::string& path, const Tensor& trimap) {
  if (trimap.rank() != 2) throw std::invalid_argument("write_trimap: trimap must be (H, W)");
  std::size_t h = trimap.extent(0), w = trimap.extent(1);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  std::vector<std::uint8_t> bytes(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    double v = trimap[i];
    if (v == 0.0) bytes[i] = 0;
    else if (v == 0.5) bytes[i] = 128;
    else if (v == 1.0) bytes[i] = 255;
    else throw std::invalid_argument("write_trimap: values must be exactly 0, 0.5 or 1");
  }
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

Tensor read_trimap(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  PnmHeader hd = read_header(f, "P5", path);
  std::vector<std::uint8_t> bytes = read_payload(f, hd.w * hd.h, path);
  std::vector<double> tri(hd.w * hd.h);
  for (std::size_t i = 0; i < tri.size(); ++i) {
    if (bytes[i] == 0) tri[i] = 0.0;
    else if (bytes[i] == 128) tri[i] = 0.5;
    else if (bytes[i] == 255) tri[i] = 1.0;
    else
      throw std::invalid_argument("trimap " + path + " holds code " + std::to_string(bytes[i]) +
                                  "; only 0, 128, 255 are valid");
  }
  return Tensor::from_data({hd.h, hd.w}, std::move(tri));
}

}  // namespace maga
