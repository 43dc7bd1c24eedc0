#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "maga/block.hpp"
#include "maga/tensor.hpp"

namespace maga {

// A differentiable scalar problem: leaf inputs plus a loss builder over them.
// The builder runs both on tracked inputs (analytic pass) and on perturbed
// untracked copies (finite differences), so it must be a pure function.
struct FdProblem {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<Tensor(const std::vector<Tensor>&)> loss;
};

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t n_coords = 0;
  bool pass = false;
};

// Central differences with step h against tape gradients. Relative error per
// coordinate is |a - f| / max(|a|, |f|, 1e-8). max_coords_per_input == 0
// checks every coordinate; otherwise evenly spaced ones. corrupt_first shifts
// the first analytic coordinate, the negative control for the harness itself.
GradCheckResult check_problem(const FdProblem& p, double tol, double h = 1e-5,
                              std::size_t max_coords_per_input = 0, double corrupt_first = 0.0);

struct RegistryEntry {
  std::string name;
  std::function<FdProblem(std::uint64_t seed)> make;
};

// One fixture per differentiable op, plus composed fixtures for attention,
// the morphological reweight, and a full encoder block. Fixtures keep inputs
// away from kinks (relu, max ties, L1 zeros) so finite differences are valid.
const std::vector<RegistryEntry>& gradcheck_registry();

// Whole matting network at a small configuration: loss is a fixed random
// weighting of the predicted alpha, leaves are every parameter plus the
// input image, a few coordinates sampled per tensor.
GradCheckResult check_network(std::uint64_t seed, double tol = 1e-4,
                              std::size_t coords_per_tensor = 4);

// Full encoder block over an hp x wp token grid with generic (non-identity)
// weights; branch set and kernel size come from cfg.
FdProblem make_block_problem(const MagaConfig& cfg, std::uint64_t seed, std::size_t hp = 2,
                             std::size_t wp = 2);

}  // namespace maga
