#include <cmath>
#include <vector>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "vaegan/layers.hpp"

using namespace vaegan;
using vaegan::testing::check_gradient;
using vaegan::testing::project;

namespace {

Network small_net(std::size_t cond) {
  return Network("t",
                 {LayerSpec::conv_down(3, 3, 2), LayerSpec::batch_norm(), LayerSpec::relu(),
                  LayerSpec::conv_up(2, 5, 2), LayerSpec::tanh(), LayerSpec::reshape({2 * 4 * 4}),
                  LayerSpec::dense(5, cond > 0), LayerSpec::batch_norm(), LayerSpec::sigmoid(), LayerSpec::dense(2)},
                 {2, 4, 4}, cond);
}

}  // namespace

TEST_CASE("dense examples") {
  Graph g;
  Rng rng(1);
  auto x = g.constant(rng.normal_tensor({3, 2}));
  auto y = dense(x, g.constant(Tensor({2, 2}, {1, 0, 0, 1})), g.constant(Tensor::zeros({2})));
  CHECK(y.value() == x.value());

  auto z = dense(g.constant(Tensor({1, 2}, {1, 2})), g.constant(Tensor({2, 1}, {1, 1})), g.constant(Tensor({1}, {0.5})));
  CHECK(z.value() == Tensor({1, 1}, {3.5}));
  CHECK_THROWS_AS(dense(x, g.constant(Tensor({3, 1})), std::nullopt), ShapeError);
}

TEST_CASE("dense passes finite differences") {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto r = check_gradient(
        [&](Graph& g, const std::vector<Var>& v) { return project(g, dense(v[0], v[1], v[2]), seed); },
        {rng.normal_tensor({4, 3}), rng.normal_tensor({3, 2}), rng.normal_tensor({2})});
    CHECK(r.rel_error < 1e-4);
  }
}

TEST_CASE("batch norm of a constant input returns the shift") {
  Graph g;
  BatchNormState st(2);
  auto x = g.constant(Tensor({4, 2, 2, 2}, 3.25));
  auto y = batch_norm(x, g.constant(Tensor({2}, {1.7, 0.3})), g.constant(Tensor({2}, {0.5, -1.0})), st,
                      BnMode::train);
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 4; ++i) CHECK(y.value()[(n * 2 + c) * 4 + i] == (c == 0 ? 0.5 : -1.0));
}

TEST_CASE("batch norm of a normalized input is nearly the identity") {
  Graph g;
  BatchNormState st(1);
  Tensor x({4, 1}, {-1.5, -0.5, 0.5, 1.5});
  const double sd = std::sqrt(1.25);
  for (auto& v : x.data()) v /= sd;
  auto y = batch_norm(g.constant(x), g.constant(Tensor({1}, 1.0)), g.constant(Tensor({1}, 0.0)), st, BnMode::train);
  for (std::size_t i = 0; i < 4; ++i) CHECK(y.value()[i] == doctest::Approx(x[i]).epsilon(1e-5));
}

TEST_CASE("batch norm training statistics") {
  Rng rng(2);
  Graph g;
  BatchNormState st(3);
  Tensor x = rng.normal_tensor({8, 3, 4, 4});
  for (auto& v : x.data()) v = 2.0 + 3.0 * v;
  auto y = batch_norm(g.constant(x), g.constant(Tensor({3}, 1.0)), g.constant(Tensor({3}, 0.0)), st, BnMode::train);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t i = 0; i < 16; ++i) {
        const double v = y.value()[(n * 3 + c) * 16 + i];
        s += v;
        s2 += v * v;
      }
    const double mean = s / 128.0, var = s2 / 128.0 - mean * mean;
    CHECK(std::abs(mean) < 1e-10);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
  // One update from (0, 1) with momentum 0.9.
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(st.running_mean[c] != 0.0);
    CHECK(st.running_var[c] > 1.0);
  }
}

TEST_CASE("batch norm running statistics follow the momentum rule") {
  BatchNormState st(1);
  BatchStats s{Tensor({1}, {2.0}), Tensor({1}, {3.0}), 4};
  st.update(s);
  CHECK(st.running_mean[0] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(st.running_var[0] == doctest::Approx(0.9 + 0.1 * 3.0 * 4.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("batch norm eval mode is pure and train_frozen leaves state alone") {
  Rng rng(3);
  BatchNormState st(2);
  st.running_mean = Tensor({2}, {0.5, -0.25});
  st.running_var = Tensor({2}, {2.0, 0.5});
  const BatchNormState before = st;
  Tensor x = rng.normal_tensor({3, 2});
  Tensor first, second;
  {
    Graph g;
    first = batch_norm(g.constant(x), g.constant(Tensor({2}, 1.0)), g.constant(Tensor({2}, 0.0)), st, BnMode::eval).value();
  }
  {
    Graph g;
    second = batch_norm(g.constant(x), g.constant(Tensor({2}, 1.0)), g.constant(Tensor({2}, 0.0)), st, BnMode::eval).value();
    batch_norm(g.constant(x), g.constant(Tensor({2}, 1.0)), g.constant(Tensor({2}, 0.0)), st, BnMode::train_frozen);
  }
  CHECK(bit_identical(first, second));
  CHECK(st.running_mean == before.running_mean);
  CHECK(st.running_var == before.running_var);
  CHECK(first[0] == doctest::Approx((x[0] - 0.5) / std::sqrt(2.0 + 1e-5)));
}

TEST_CASE("activations") {
  Graph g;
  auto x = g.constant(Tensor({3}, {-1.0, 0.0, 2.0}));
  CHECK(activation(LayerKind::relu, x).value() == Tensor({3}, {0.0, 0.0, 2.0}));
  CHECK(activation(LayerKind::sigmoid, x).value()[1] == 0.5);
  CHECK(activation(LayerKind::tanh, x).value()[2] == std::tanh(2.0));
  CHECK_THROWS(activation(LayerKind::dense, x));

  auto z = g.leaf(Tensor({3}, {-1.0, 0.0, 2.0}), true);
  g.backward(sum(relu(z)));
  CHECK(g.grad(z) == Tensor({3}, {0.0, 0.0, 1.0}));
}

TEST_CASE("shape plan matches every layer's actual output") {
  Network net = small_net(2);
  Rng rng(4);
  auto params = net.init_params(rng);
  Tensor x = rng.normal_tensor({3, 2, 4, 4});
  Tensor a({3, 2}, {1, 0, 0, 1, 1, 1});
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    Graph g;
    Network::Tap tap{i, {}};
    auto y = net.forward(g, bind_params(g, params, false), g.constant(x), BnMode::train_frozen, g.constant(a), &tap);
    Shape expect{3};
    expect.insert(expect.end(), net.output_shape(i).begin(), net.output_shape(i).end());
    CHECK(tap.value.shape() == expect);
    CHECK(y.shape() == Shape{3, 2});
  }
  CHECK(net.output_shape(2) == Shape{3, 2, 2});
  CHECK(net.output_shape(3) == Shape{2, 4, 4});
}

TEST_CASE("parameters and initialization") {
  Network net = small_net(2);
  const auto shapes = net.param_shapes();
  CHECK(shapes.at("0.weight") == Shape{3, 2, 3, 3});
  CHECK(shapes.count("0.bias") == 0);
  CHECK(shapes.at("3.weight") == Shape{3, 2, 5, 5});
  CHECK(shapes.at("3.bias") == Shape{2});
  CHECK(shapes.at("6.weight") == Shape{2 * 4 * 4 + 2, 5});
  CHECK(shapes.at("1.gain") == Shape{3});

  Rng rng(5);
  auto p = net.init_params(rng);
  CHECK(p.at("1.gain") == Tensor({3}, 1.0));
  CHECK(p.at("1.shift") == Tensor({3}, 0.0));
  CHECK(p.at("3.bias") == Tensor({2}, 0.0));
  double s2 = 0.0;
  const Tensor& w = p.at("6.weight");
  for (double v : w.data()) s2 += v * v;
  CHECK(std::sqrt(s2 / static_cast<double>(w.numel())) == doctest::Approx(0.02).epsilon(0.1));

  CHECK_THROWS(Network("bad", {LayerSpec::reshape({7})}, {2, 4, 4}));
  CHECK_THROWS(Network("bad", {LayerSpec::conv_down(2, 3, 2)}, {8}));
}

TEST_CASE("a whole network passes finite differences") {
  Network net = small_net(2);
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto params = net.init_params(rng);
    std::vector<std::string> names;
    std::vector<Tensor> inputs;
    for (const auto& [name, t] : params) {
      names.push_back(name);
      Tensor u = rng.normal_tensor(t.shape());
      for (std::size_t i = 0; i < u.numel(); ++i) u[i] = t[i] + 0.3 * u[i];
      inputs.push_back(u);
    }
    inputs.push_back(rng.normal_tensor({4, 2, 4, 4}));
    const Tensor a({4, 2}, {1, 0, 0, 1, 1, 1, 0, 0});
    auto r = check_gradient(
        [&](Graph& g, const std::vector<Var>& v) {
          BoundParams bp;
          for (std::size_t i = 0; i < names.size(); ++i) bp.emplace(names[i], v[i]);
          return project(g, net.forward(g, bp, v.back(), BnMode::train_frozen, g.constant(a)), seed);
        },
        inputs, 1e-5, 40, seed);
    CHECK(r.rel_error < 1e-4);
  }
}
