#pragma once

#include <set>
#include <string>
#include <vector>

#include "maga/adam.hpp"
#include "maga/block.hpp"
#include "maga/config.hpp"
#include "maga/synth.hpp"
#include "maga/tensor.hpp"

namespace maga {

// Desk-scale matting network: patch-embedded transformer trunk with MAGA
// blocks in front, a strided-conv detail branch, and a fusing decoder that
// walks back up to full resolution.
struct NetConfig {
  std::size_t height = 32, width = 32;
  std::size_t patch = 4;  // 4, 8 or 16; every detail level is consumed once
  std::size_t dim = 32;
  std::size_t depth = 2;
  std::size_t n_maga = 2;  // leading blocks that carry the morphological gate
  std::size_t heads = 1;
  std::size_t kernel = 3;
  std::size_t reweight_kernel = 3;
  std::vector<BranchKind> branches = {BranchKind::Row, BranchKind::ColRow, BranchKind::Col,
                                      BranchKind::RowCol};
  std::size_t c2 = 16, c4 = 32, c8 = 64;  // detail widths at H/2, H/4, H/8
  std::uint64_t seed = 0;
  bool composition_loss = false;

  void validate() const;
  MagaConfig block_config() const;
  std::size_t hp() const { return height / patch; }
  std::size_t wp() const { return width / patch; }
};

// Keys the train/eval/ablate/infer configs may use for the model.
std::set<std::string> net_config_keys();
NetConfig net_config_from_kv(const KvConfig& kv);
// Inverse of net_config_from_kv; feeds checkpoint config.txt.
void net_config_to_kv(const NetConfig& cfg, KvConfig& kv);

// Deterministic in cfg.seed; parameter order is the checkpoint order.
ParamStore init_matting_params(const NetConfig& cfg);

// image (3,H,W), trimap (H,W) -> alpha (1,H,W) in (0,1).
Tensor matting_forward(const ParamStore& ps, const NetConfig& cfg, const Tensor& image,
                       const Tensor& trimap);

// Alpha L1 over the trimap's unknown region (plus the composition term when
// enabled). Scalar; differentiable through ps when tracked.
Tensor matting_loss(const ParamStore& ps, const NetConfig& cfg, const SynthSample& sample);

// One AdamW step on the batch-mean loss. Returns the loss value.
double train_step(ParamStore& params, const NetConfig& cfg, const std::vector<SynthSample>& batch,
                  AdamState& opt);

}  // namespace maga
