#include "vaegan/graph.hpp"

#include <stdexcept>

namespace vaegan {

const Tensor& Var::value() const { return graph_->value(id_); }

Var Graph::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(const char* op, std::initializer_list<Var> inputs, Tensor value,
                  BackwardFn backward) {
  return record(op, std::span<const Var>(inputs.begin(), inputs.size()), std::move(value),
                std::move(backward));
}

Var Graph::record(const char* op, std::span<const Var> inputs, Tensor value, BackwardFn backward) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (&v.graph() != this) throw std::logic_error("input belongs to another graph");
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::stop_gradient(Var v) {
  Node n;
  n.op = "stop_gradient";
  n.value = nodes_[v.id()].value;
  n.inputs.push_back(v.id());
  n.stop_mark = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Graph::accumulate(std::size_t id, Tensor g) {
  if (!wants_grad(id)) return;
  Node& n = nodes_[id];
  if (g.shape() != n.value.shape())
    throw ShapeError(std::string("gradient shape mismatch at op ") + n.op + ": " +
                     shape_str(g.shape()) + " vs " + shape_str(n.value.shape()));
  if (!n.has_grad) {
    n.grad = std::move(g);
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

void Graph::backward(Var root, std::span<const Var> wrt) {
  if (&root.graph() != this) throw std::logic_error("root belongs to another graph");
  if (nodes_[root.id()].value.numel() != 1)
    throw ShapeError("backward root must be scalar, got " + shape_str(nodes_[root.id()].value.shape()));

  for (auto& n : nodes_) {
    n.grad = Tensor();
    n.has_grad = false;
  }

  pass_mask_.clear();
  if (!wrt.empty()) {
    // Forward sweep: mark nodes whose value depends (through gradient-carrying
    // edges) on some wrt node.
    pass_mask_.assign(nodes_.size(), 0);
    for (const Var& v : wrt) pass_mask_[v.id()] = 1;
    for (std::size_t i = 0; i <= root.id(); ++i) {
      if (pass_mask_[i] || !nodes_[i].requires_grad) continue;
      for (auto in : nodes_[i].inputs)
        if (pass_mask_[in]) {
          pass_mask_[i] = 1;
          break;
        }
    }
  }

  if (!wants_grad(root.id())) return;
  nodes_[root.id()].grad = Tensor(nodes_[root.id()].value.shape(), 1.0);
  nodes_[root.id()].has_grad = true;

  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
  }
  pass_mask_.clear();
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  return n.has_grad ? n.grad : Tensor::zeros_like(n.value);
}

}  // namespace vaegan
