#pragma once

#include <map>
#include <string>
#include <vector>

#include "maga/graph.hpp"
#include "maga/tensor.hpp"

namespace maga {

// Named parameter set with stable insertion order. Order defines checkpoint
// manifest order and the order leaves are registered on a tape, so keep
// construction deterministic.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value);
  void replace(const std::string& name, Tensor value);  // same shape required
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }

  // Copy of this store whose tensors are leaves on g.
  ParamStore tracked(Graph& g) const;

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor> by_name_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.1;  // decoupled
};

// First/second moment buffers keyed by parameter name, created on first use.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

// One AdamW update over every parameter in `params`, reading gradients for
// the tracked twins in `tracked_params` out of `grads`. Parameters the loss
// never touched get zero gradient and still decay.
void adam_step(ParamStore& params, const ParamStore& tracked_params, const Gradients& grads,
               AdamState& state);

}  // namespace maga
