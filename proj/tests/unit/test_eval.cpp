#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "vaegan/eval.hpp"

using namespace vaegan;

namespace {

Tensor binary_rows(Rng& rng, std::size_t m, std::size_t a) {
  Tensor t({m, a});
  for (auto& v : t.data()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return t;
}

// "Images" that carry the requested attribute row verbatim.
Tensor as_images(const Tensor& attrs) { return attrs.reshaped({attrs.dim(0), 1, 1, attrs.dim(1)}); }

Tensor as_rows(const Tensor& images) { return images.reshaped({images.dim(0), images.numel() / images.dim(0)}); }

const AttributedDataset& corpus() {
  static const AttributedDataset d = [] {
    SyntheticSpec s;
    s.count = 400;
    return generate_synthetic(s);
  }();
  return d;
}

}  // namespace

TEST_CASE("a perfect generator scores cosine 1 and MSE 0") {
  Rng rng(1);
  Tensor attrs = binary_rows(rng, 12, 4);
  for (std::size_t i = 1; i < 12; ++i) attrs.at({i, i % 4}) = 1.0;
  for (std::size_t j = 0; j < 4; ++j) attrs.at({0, j}) = 0.0;
  const auto s = score_conditional([](const Tensor& a, Rng&) { return as_images(a); }, as_rows, attrs, 3, 4, 9);
  CHECK(s.cosine_mean == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.mse_mean == 0.0);
  CHECK(s.mse_std == 0.0);
  CHECK(s.excluded_rows == 1);
  CHECK(s.runs == 4);
  CHECK(s.run_cosine.size() == 4);
}

TEST_CASE("constant one-half predictions give MSE of a quarter per attribute") {
  Rng rng(2);
  const Tensor attrs = binary_rows(rng, 10, 5);
  const auto s = score_conditional([](const Tensor& a, Rng&) { return as_images(a); },
                                   [](const Tensor& x) { return Tensor({x.dim(0), 5}, 0.5); }, attrs, 2, 3, 0);
  CHECK(s.mse_mean == doctest::Approx(0.25 * 5).epsilon(1e-15));
  CHECK(s.mse_std == 0.0);
  for (double c : s.run_cosine) CHECK((c >= -1.0 && c <= 1.0));
}

TEST_CASE("best-of-samples cosine and first-sample MSE") {
  const Tensor attrs({1, 2}, {1.0, 0.0});
  int call = 0;
  auto gen = [&](const Tensor& a, Rng&) {
    ++call;
    return Tensor({1, 1, 1, 2}, call % 2 == 1 ? std::vector<double>{0.0, 1.0} : std::vector<double>{1.0, 0.0});
    (void)a;
  };
  const auto s = score_conditional(gen, as_rows, attrs, 2, 1, 0);
  CHECK(s.cosine_mean == 1.0);
  CHECK(s.mse_mean == 2.0);
}

TEST_CASE("scores are deterministic and a model matches itself") {
  Rng r(3);
  const Tensor attrs = binary_rows(r, 6, 3);
  auto noisy = [](const Tensor& a, Rng& rng) {
    Tensor t = as_images(a);
    for (auto& v : t.data()) v = std::clamp(v + 0.3 * rng.normal(), 0.0, 1.0);
    return t;
  };
  const auto a = score_conditional(noisy, as_rows, attrs, 4, 5, 11);
  const auto b = score_conditional(noisy, as_rows, attrs, 4, 5, 11);
  CHECK(a.run_cosine == b.run_cosine);
  CHECK(a.run_mse == b.run_mse);
  CHECK(a.mse_std > 0.0);

  const auto rep = compare_models({{"a", noisy}, {"b", noisy}}, as_rows, attrs, 4, 5, 11);
  REQUIRE(rep.rows.size() == 2);
  CHECK(rep.rows[0].score.run_mse == rep.rows[1].score.run_mse);
  CHECK(rep.rows[0].score.run_cosine == a.run_cosine);
}

TEST_CASE("reports") {
  Rng r(4);
  const Tensor attrs = binary_rows(r, 6, 3);
  auto perfect = [](const Tensor& a, Rng&) { return as_images(a); };
  auto flat = [](const Tensor& a, Rng&) { return Tensor({a.dim(0), 1, 1, a.dim(1)}, 0.5); };
  const auto one = compare_models({{"solo", perfect}}, as_rows, attrs, 2, 2, 0);
  CHECK(one.rows.size() == 1);
  const std::string csv = one.to_csv();
  CHECK(csv.rfind("model,cosine_mean,cosine_std,mse_mean,mse_std,runs,samples_per_vector\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
  CHECK(csv.find("solo,") != std::string::npos);

  const auto two = compare_models({{"flat", flat}, {"perfect", perfect}}, as_rows, attrs, 2, 2, 0);
  CHECK(two.rows[0].model == "perfect");
  CHECK(two.to_text().find("not on the scale") != std::string::npos);
  CHECK_THROWS(compare_models({}, as_rows, attrs));
  CHECK_THROWS(score_conditional(perfect, as_rows, attrs, 0, 1, 0));
}

TEST_CASE("binary cross-entropy") {
  Graph g;
  auto p = g.constant(Tensor({2, 2}, {0.5, 0.5, 0.9, 0.2}));
  auto t = g.constant(Tensor({2, 2}, {1, 0, 1, 0}));
  const double expect = (2 * -std::log(0.5) - std::log(0.9) - std::log(0.8)) / 2.0;
  CHECK(binary_cross_entropy(p, t).value().item() == doctest::Approx(expect).epsilon(1e-14));
  CHECK(std::isfinite(binary_cross_entropy(g.constant(Tensor({1, 1}, 0.0)), g.constant(Tensor({1, 1}, 1.0))).value().item()));
}

TEST_CASE("regressor learns the synthetic attributes") {
  RegressorConfig cfg;
  cfg.steps = 300;
  const Regressor reg0 = [&] {
    RegressorConfig c = cfg;
    return train_regressor(corpus(), c);
  }();
  Regressor reg = reg0;
  SyntheticSpec s;
  s.count = 200;
  s.seed = 55;
  const auto test = generate_synthetic(s);
  const auto acc = regressor_accuracy(reg, test);
  REQUIRE(acc.size() == 3);
  for (double a : acc) CHECK(a >= 0.9);

  const Tensor p = reg.predict(test.images);
  CHECK(p.shape() == Shape{200, 3});
  for (double v : p.data()) CHECK((v > 0.0 && v < 1.0));
  CHECK(bit_identical(reg.predict(test.images, 7), p));

  Regressor back = Regressor::from_checkpoint(decode_checkpoint(encode_checkpoint(reg.to_checkpoint())));
  CHECK(back.attribute_names() == reg.attribute_names());
  CHECK(bit_identical(back.predict(test.images), p));

  // Dataset images requested with their own attributes score exactly the
  // regressor's own error on them.
  const Tensor images = test.images.slice_rows(0, 20);
  const Tensor attrs = test.attributes.slice_rows(0, 20);
  const auto score = score_conditional([&](const Tensor&, Rng&) { return images; }, regressor_predictor(reg), attrs, 1, 1, 0);
  const Tensor pred = reg.predict(images);
  double se = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) se += (pred[i] - attrs[i]) * (pred[i] - attrs[i]);
  CHECK(score.mse_mean == doctest::Approx(se / 20.0).epsilon(1e-12));
}

TEST_CASE("conditional generator respects the model") {
  ModelConfig m;
  m.resolution = 16;
  m.scale = 0.125;
  m.attr_count = 3;
  VaeGan model(m, 1);
  auto gen = conditional_generator(model);
  Rng a(5), b(5);
  const Tensor attrs({2, 3}, {1, 0, 1, 0, 1, 0});
  const Tensor x = gen(attrs, a);
  CHECK(x.shape() == Shape{2, 3, 16, 16});
  CHECK(bit_identical(x, gen(attrs, b)));
}
