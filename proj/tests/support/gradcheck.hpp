#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "vaegan/graph.hpp"
#include "vaegan/ops.hpp"
#include "vaegan/rng.hpp"
#include "vaegan/tensor.hpp"

namespace vaegan::testing {

/// Builds a scalar from leaves bound to `inputs`.
using ScalarFn = std::function<Var(Graph&, const std::vector<Var>&)>;

struct GradCheck {
  double rel_error = 0.0;
  double analytic_norm = 0.0;
  std::size_t coordinates = 0;
  /// Coordinates whose difference step had to shrink.
  std::size_t shrunk = 0;
};

inline double norm_rel_error(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  const double scale = std::max({std::sqrt(na), std::sqrt(nn), 1e-300});
  return std::sqrt(diff) / scale;
}

inline double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Graph g;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(g.leaf(t, true));
  return f(g, leaves).value().item();
}

/// Analytic gradient of f against central differences, over every
/// coordinate (or `max_coords` sampled ones per input), as a norm-wise
/// relative error.
inline GradCheck check_gradient(const ScalarFn& f, std::vector<Tensor> inputs, double eps = 1e-5,
                                std::size_t max_coords = 0, std::uint64_t sample_seed = 0) {
  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(g.leaf(t, true));
    const Var out = f(g, leaves);
    g.backward(out);
    for (const auto& v : leaves) {
      const Tensor gr = g.grad(v);
      analytic.emplace_back(gr.data().begin(), gr.data().end());
    }
  }
  Rng pick(sample_seed);
  std::vector<double> a, n;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<std::size_t> coords(inputs[i].numel());
    for (std::size_t j = 0; j < coords.size(); ++j) coords[j] = j;
    if (max_coords && coords.size() > max_coords) {
      pick.shuffle(coords);
      coords.resize(max_coords);
    }
    for (std::size_t j : coords) {
      const double orig = inputs[i][j];
      inputs[i][j] = orig + eps;
      const double up = evaluate(f, inputs);
      inputs[i][j] = orig - eps;
      const double down = evaluate(f, inputs);
      inputs[i][j] = orig;
      a.push_back(analytic[i][j]);
      n.push_back((up - down) / (2.0 * eps));
    }
  }
  GradCheck r;
  r.rel_error = norm_rel_error(a, n);
  r.coordinates = a.size();
  double s = 0.0;
  for (double v : a) s += v * v;
  r.analytic_norm = std::sqrt(s);
  return r;
}

/// Contracts an arbitrary-shaped output with fixed random weights so every
/// output element contributes to the checked scalar.
inline Var project(Graph& g, Var out, std::uint64_t seed) {
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return sum(mul(out, g.constant(rng.normal_tensor(out.shape()))));
}

inline Tensor uniform_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

/// Values bounded away from zero by at least `gap`, for ops with a kink at 0.
inline Tensor away_from_zero(Rng& rng, Shape shape, double gap) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) {
    const double m = gap + rng.uniform();
    v = rng.bernoulli(0.5) ? m : -m;
  }
  return t;
}

}  // namespace vaegan::testing
