#pragma once

#include <string>
#include <vector>

#include "maga/adam.hpp"
#include "maga/ops.hpp"
#include "maga/random.hpp"
#include "maga/tensor.hpp"

namespace maga {

// Tetris branch shapes over the query map. Enum order is the canonical
// branch order; descriptor layout and checkpoint naming both follow it.
//   Row     f_1xk(Q)
//   ColRow  f_1xk(f_kx1(Q))
//   Col     f_kx1(Q)
//   RowCol  f_kx1(f_1xk(Q))
enum class BranchKind { Row = 0, ColRow = 1, Col = 2, RowCol = 3 };

const char* branch_kind_name(BranchKind kind);

// Parses a comma list of branch names ("row,col,..."). Duplicates and unknown
// names are rejected; the result is sorted into canonical order.
std::vector<BranchKind> parse_branch_set(const std::string& text);

std::string branch_set_name(const std::vector<BranchKind>& branches);

struct MagaConfig {
  std::size_t dim = 32;
  std::size_t heads = 1;
  std::size_t kernel = 3;           // Tetris kernel extent k, odd
  std::size_t reweight_kernel = 3;  // 1-d kernel over the branch-major descriptor
  std::vector<BranchKind> branches = {BranchKind::Row, BranchKind::ColRow, BranchKind::Col,
                                      BranchKind::RowCol};
  void validate() const;
};

// One Tetris branch: depthwise convs applied in branch order over active
// sites. Row kernels are (C,1,k), col kernels (C,k,1); two-step branches
// take both.
Tensor tetris_branch(const Tensor& qmap, BranchKind kind, const std::vector<Tensor>& kernels,
                     const ActiveSiteMask& mask);

// Kernel shapes a branch expects, first-applied first.
std::vector<Shape> branch_kernel_shapes(BranchKind kind, std::size_t channels, std::size_t k);

struct ReweightResult {
  Tensor q_f;  // (C, Hp, Wp) winner across branches after gating by W_r
  Tensor w_r;  // (B*C) sigmoid confidence, branch-major
};

// Instance-norms each branch map, builds the branch-major std descriptor,
// runs it through the 1-d reweight kernel + sigmoid, scales each normalized
// branch by its confidence, then keeps the elementwise max across branches.
ReweightResult morpho_reweight(const std::vector<Tensor>& branch_maps, const Tensor& reweight_kernel);

// Multi-head softmax attention: per head, softmax(Q K^T / sqrt(D/h)) V,
// heads concatenated. No output projection here.
Tensor maga_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

// Appends one encoder block's parameters under `prefix.` to the store.
// use_maga controls whether the Tetris/reweight tensors exist.
void append_block_params(ParamStore& ps, const std::string& prefix, const MagaConfig& cfg,
                         bool use_maga, Rng& rng);

// Pre-norm residual block over (N, D) tokens arranged as an hp x wp grid.
// use_maga routes the query through the morphological gate before attention;
// otherwise this is a plain ViT block.
Tensor encoder_block(const Tensor& x, const ParamStore& ps, const std::string& prefix,
                     const MagaConfig& cfg, std::size_t hp, std::size_t wp, bool use_maga);

}  // namespace maga
