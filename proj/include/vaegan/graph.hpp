#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "vaegan/tensor.hpp"

namespace vaegan {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only tape for reverse-mode differentiation.
///
/// Nodes are recorded in evaluation order, so every node's inputs have smaller
/// ids and the node list is a topological order. backward() walks it in
/// reverse. A node created by stop_gradient() never requires a gradient, so
/// nothing upstream of it receives a contribution through it.
class Graph {
 public:
  /// Accumulates into input gradients via Graph::accumulate.
  using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Record an op. The node requires grad iff any input does; the backward
  /// closure is dropped otherwise.
  Var record(const char* op, std::initializer_list<Var> inputs, Tensor value, BackwardFn backward);
  Var record(const char* op, std::span<const Var> inputs, Tensor value, BackwardFn backward);

  Var stop_gradient(Var v);

  /// Reverse pass from a scalar root. Gradients from any previous call are
  /// discarded first. When `wrt` is non-empty, propagation is pruned to nodes
  /// that lie on some path between a `wrt` node and the root; gradients of
  /// those `wrt` nodes are unaffected by the pruning.
  void backward(Var root, std::span<const Var> wrt = {});

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  bool is_stop_marked(Var v) const { return nodes_[v.id()].stop_mark; }
  const char* op_name(Var v) const { return nodes_[v.id()].op; }

  /// Gradient of the last backward root w.r.t. v; all zeros if none flowed.
  Tensor grad(Var v) const;
  bool has_grad(Var v) const { return nodes_[v.id()].has_grad; }

  /// For backward closures: true when node `id` should receive a gradient
  /// during the current pass.
  bool wants_grad(std::size_t id) const {
    return nodes_[id].requires_grad && (pass_mask_.empty() || pass_mask_[id]);
  }
  /// Adds g into node `id`'s gradient. No-op when !wants_grad(id).
  void accumulate(std::size_t id, Tensor g);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    const char* op = "";
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool stop_mark = false;
    bool has_grad = false;
  };

  // deque: value() references stay valid while nodes are appended.
  std::deque<Node> nodes_;
  std::vector<char> pass_mask_;
};

}  // namespace vaegan
