#include "maga/graph.hpp"

#include <stdexcept>

namespace maga {

Tensor Graph::leaf(const Tensor& t) {
  Tensor out = t.detached();
  out.graph_ = this;
  out.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{"leaf", {}, nullptr, t.shape()});
  return out;
}

Tensor Graph::record(const char* op, Tensor value, std::vector<int> inputs, BackwardFn backward) {
  for (int id : inputs) {
    if (id >= static_cast<int>(nodes_.size())) throw std::logic_error("graph: input node from the future");
  }
  value.graph_ = this;
  value.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{op, std::move(inputs), std::move(backward), value.shape()});
  return value;
}

static void accumulate(Tensor& slot, const Tensor& g) {
  if (!slot.defined()) {
    slot = g;
    return;
  }
  if (!slot.same_shape(g)) throw std::logic_error("graph: gradient shape mismatch during accumulation");
  std::vector<double> sum(slot.numel());
  const double* a = slot.ptr();
  const double* b = g.ptr();
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = a[i] + b[i];
  slot = Tensor::from_data(slot.shape(), std::move(sum));
}

Gradients Graph::backward(const Tensor& loss) const {
  if (!loss.tracked() || loss.graph() != this) {
    throw std::invalid_argument("backward: loss is not a node of this graph");
  }
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  grads[loss.node()] = Tensor::full(loss.shape(), 1.0);
  for (int i = loss.node(); i >= 0; --i) {
    if (!grads[i].defined()) continue;
    const Node& node = nodes_[i];
    if (!node.backward) continue;
    std::vector<Tensor> input_grads = node.backward(grads[i]);
    if (input_grads.size() != node.inputs.size()) {
      throw std::logic_error(std::string("graph: backward of ") + node.op + " returned wrong arity");
    }
    for (std::size_t j = 0; j < node.inputs.size(); ++j) {
      int id = node.inputs[j];
      if (id < 0) continue;
      accumulate(grads[id], input_grads[j]);
    }
  }
  return Gradients(std::move(grads), this);
}

Tensor Gradients::at(const Tensor& t) const {
  if (!t.tracked() || t.graph() != graph_) {
    throw std::invalid_argument("gradients: tensor is not tracked on this graph");
  }
  const Tensor& g = by_node_[static_cast<std::size_t>(t.node())];
  if (!g.defined()) return Tensor::zeros(t.shape());
  return g;
}

namespace detail {
Graph* common_graph(std::initializer_list<const Tensor*> ts) {
  Graph* g = nullptr;
  for (const Tensor* t : ts) {
    if (!t->tracked()) continue;
    if (g == nullptr) {
      g = t->graph();
    } else if (g != t->graph()) {
      throw std::invalid_argument("op: inputs belong to different graphs");
    }
  }
  return g;
}
}  // namespace detail

}  // namespace maga
