#pragma once

#include <string>

#include "maga/tensor.hpp"

namespace maga {

// Binary PNM with maxval 255. Floats quantize as round(v * 255) on write and
// v / 255 on read. Trimaps use the exact code mapping 0 <-> 0, 128 <-> 0.5,
// 255 <-> 1; any other byte in a trimap file is rejected as invalid input.

void write_ppm(const std::string& path, const Tensor& image);  // (3, H, W) in [0,1]
Tensor read_ppm(const std::string& path);

void write_pgm(const std::string& path, const Tensor& gray);  // (H, W) in [0,1]
Tensor read_pgm(const std::string& path);

void write_trimap(const std::string& path, const Tensor& trimap);  // values in {0, 0.5, 1}
Tensor read_trimap(const std::string& path);

}  // namespace maga
