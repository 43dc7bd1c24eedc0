#pragma once

#include <functional>
#include <initializer_list>
#include <vector>

#include "maga/tensor.hpp"

namespace maga {

/// Gradient of one scalar loss with respect to every node of a graph.
/// Leaves never reached by the loss report a zero gradient.
class Gradients {
 public:
  Tensor at(const Tensor& t) const;

 private:
  explicit Gradients(std::vector<Tensor> by_node, const Graph* graph)
      : by_node_(std::move(by_node)), graph_(graph) {}
  std::vector<Tensor> by_node_;
  const Graph* graph_;
  friend class Graph;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so creation
/// order is a valid topological order. Single-threaded per instance.
class Graph {
 public:
  using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Registers t's values as a tracked leaf and returns the tracked handle.
  Tensor leaf(const Tensor& t);

  /// Used by op implementations: appends a node whose backward maps the
  /// output gradient to one gradient per entry of `inputs` (id -1 marks a
  /// constant input whose gradient is discarded).
  Tensor record(const char* op, Tensor value, std::vector<int> inputs, BackwardFn backward);

  /// Reverse accumulation from a scalar loss on this graph.
  Gradients backward(const Tensor& loss) const;

  std::size_t node_count() const { return nodes_.size(); }
  const char* op_name(std::size_t i) const { return nodes_[i].op; }

 private:
  struct Node {
    const char* op;
    std::vector<int> inputs;
    BackwardFn backward;
    Shape shape;
  };
  std::vector<Node> nodes_;
};

namespace detail {
/// The single graph shared by a set of op inputs, or nullptr when all are
/// untracked. Two distinct graphs in one op is a usage error.
Graph* common_graph(std::initializer_list<const Tensor*> ts);
}  // namespace detail

}  // namespace maga
