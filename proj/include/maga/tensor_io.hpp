#pragma once

#include <string>

#include "maga/adam.hpp"
#include "maga/tensor.hpp"

namespace maga {

// MAGT container, little-endian throughout:
//   bytes 0..3   magic "MAGT"
//   u32          version (1)
//   u32          rank
//   u64[rank]    extents
//   f64[numel]   payload, row-major
void write_magt(const std::string& path, const Tensor& t);
Tensor read_magt(const std::string& path);

// Checkpoint directory layout:
//   tensors/<name>.magt   one file per parameter
//   manifest.txt          "<name> <shape> param" per line, store order
//   config.txt            key=value lines describing the run
void save_checkpoint(const std::string& dir, const ParamStore& params, const std::string& config_text);

struct Checkpoint {
  ParamStore params;
  std::string config_text;
};

Checkpoint load_checkpoint(const std::string& dir);

}  // namespace maga
