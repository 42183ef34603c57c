#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "vaegan/attributes.hpp"

using namespace vaegan;

namespace {

// Multiples of 2^-10 in [-4, 4): every partial sum of up to a few thousand
// of these is exact in double precision.
Tensor dyadic_codes(Rng& rng, std::size_t n, std::size_t d) {
  Tensor t({n, d});
  for (auto& v : t.data()) v = static_cast<double>(static_cast<long>(rng.below(8192)) - 4096) / 1024.0;
  return t;
}

std::vector<double> random_labels(Rng& rng, std::size_t n) {
  std::vector<double> l(n);
  for (auto& v : l) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  l[0] = 1.0;
  l[1] = 0.0;
  return l;
}

AttributeVector with_direction(std::vector<double> dir) {
  AttributeVector v;
  const std::size_t d = dir.size();
  v.direction = Tensor({d}, std::move(dir));
  v.with_count = v.without_count = 1;
  return v;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.resolution = 16;
  m.scale = 0.125;
  return m;
}

}  // namespace

TEST_CASE("two-point class means") {
  Tensor codes({4, 2}, {1, 0, 1, 0, 0, 0, 0, 0});
  const std::vector<double> labels{1, 1, 0, 0};
  auto v = attribute_vector_from_codes(codes, labels, 2, "bright_disk");
  CHECK(v.direction == Tensor({2}, {1, 0}));
  CHECK(v.with_count == 2);
  CHECK(v.without_count == 2);
  CHECK(v.attribute_index == 2);
  CHECK(v.attribute_name == "bright_disk");
}

TEST_CASE("a class with no members is an error") {
  Tensor codes({3, 2}, 1.0);
  const std::vector<double> all{1, 1, 1}, none{0, 0, 0}, odd{1, 0.5, 0};
  CHECK_THROWS_WITH_AS(attribute_vector_from_codes(codes, all), doctest::Contains("without"), DataError);
  CHECK_THROWS_AS(attribute_vector_from_codes(codes, none), DataError);
  CHECK_THROWS_AS(attribute_vector_from_codes(codes, odd), std::invalid_argument);
  const std::vector<double> short_labels{1, 0};
  CHECK_THROWS_AS(attribute_vector_from_codes(codes, short_labels), ShapeError);
}

TEST_CASE("class means equal a brute-force two-pass mean") {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Tensor codes = dyadic_codes(rng, 20, 5);
    const auto labels = random_labels(rng, 20);
    const auto v = attribute_vector_from_codes(codes, labels);
    std::vector<std::size_t> with, without;
    for (std::size_t i = 0; i < 20; ++i) (labels[i] == 1.0 ? with : without).push_back(i);
    for (std::size_t j = 0; j < 5; ++j) {
      double a = 0.0, b = 0.0;
      for (std::size_t i : with) a += codes.at({i, j});
      for (std::size_t i : without) b += codes.at({i, j});
      CHECK(v.direction[j] == a / static_cast<double>(with.size()) - b / static_cast<double>(without.size()));
    }
  }
}

TEST_CASE("exact_sum is correctly rounded and order-free") {
  const std::vector<double> v{1e16, 1.0, -1e16, 1.0};
  CHECK(exact_sum(v) == 2.0);
  std::vector<double> w{0.1, 0.2, 0.3, 1e-17, -0.6};
  const double ref = exact_sum(w);
  std::sort(w.begin(), w.end());
  do CHECK(exact_sum(w) == ref);
  while (std::next_permutation(w.begin(), w.end()));
  CHECK(exact_sum(std::vector<double>{}) == 0.0);
}

TEST_CASE("row order does not change the direction") {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    const Tensor codes = rng.normal_tensor({40, 6});
    const auto labels = random_labels(rng, 40);
    const auto ref = attribute_vector_from_codes(codes, labels);
    std::vector<std::size_t> perm(40);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Tensor pc({40, 6});
    std::vector<double> pl(40);
    for (std::size_t i = 0; i < 40; ++i) {
      for (std::size_t j = 0; j < 6; ++j) pc.at({i, j}) = codes.at({perm[i], j});
      pl[i] = labels[perm[i]];
    }
    CHECK(bit_identical(attribute_vector_from_codes(pc, pl).direction, ref.direction));
  }
}

TEST_CASE("negated labels give the exact negation") {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(200 + seed);
    const Tensor codes = rng.normal_tensor({30, 4});
    auto labels = random_labels(rng, 30);
    const auto v = attribute_vector_from_codes(codes, labels);
    for (auto& l : labels) l = 1.0 - l;
    const auto u = attribute_vector_from_codes(codes, labels);
    for (std::size_t j = 0; j < 4; ++j) CHECK(u.direction[j] == -v.direction[j]);
    CHECK(u.with_count == v.without_count);
  }
}

TEST_CASE("apply_attribute examples") {
  const auto v = with_direction({1, 0});
  CHECK(apply_attribute(Tensor({2}, {0, 3}), v, 2.0) == Tensor({2}, {2, 3}));
  Rng rng(3);
  const Tensor z = rng.normal_tensor({5, 2});
  CHECK(apply_attribute(z, with_direction({0.3, -1.7}), 0.0) == z);
  const Tensor rows = apply_attribute(Tensor({2, 2}, {0, 0, 1, 1}), v, 1.0);
  CHECK(rows == Tensor({2, 2}, {1, 0, 2, 1}));
  CHECK_THROWS_AS(apply_attribute(Tensor({3}), v, 1.0), ShapeError);
}

TEST_CASE("apply_attribute is linear on exactly representable values") {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(300 + seed);
    const Tensor z = dyadic_codes(rng, 4, 6);
    const Tensor d = dyadic_codes(rng, 1, 6).reshaped({6});
    AttributeVector v = with_direction(std::vector<double>(d.data().begin(), d.data().end()));
    CHECK(apply_attribute(apply_attribute(z, v, 1.0), v, -1.0) == z);
    const double a = static_cast<double>(rng.below(16)) / 4.0, b = -static_cast<double>(rng.below(16)) / 8.0;
    CHECK(apply_attribute(apply_attribute(z, v, a), v, b) == apply_attribute(z, v, a + b));
  }
}

TEST_CASE("dataset directions, edits and reconstructions") {
  VaeGan model(tiny_model(), 5);
  SyntheticSpec spec;
  spec.count = 40;
  const auto data = generate_synthetic(spec);
  const auto v = compute_attribute_vector(data, model, 0);
  CHECK(v.attribute_name == "bright_disk");
  CHECK(v.direction.shape() == Shape{model.config().latent()});
  CHECK(v.with_count + v.without_count == 40);

  std::vector<std::size_t> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(6);
  rng.shuffle(perm);
  CHECK(bit_identical(compute_attribute_vector(data.subset(perm), model, 0).direction, v.direction));

  const Tensor x = data.image_batch({0, 1, 2});
  CHECK(bit_identical(edit_images(model, x, v, 0.0), reconstruct_images(model, x)));
  CHECK_FALSE(bit_identical(edit_images(model, x, v, 1.0), reconstruct_images(model, x)));
  CHECK_THROWS(compute_attribute_vector(data, model, 7));
}

TEST_CASE("attribute vectors survive storage") {
  AttributeVector v = with_direction({0.1, -2.5, 3.0});
  v.attribute_index = 1;
  v.attribute_name = "vertical_bar";
  v.with_count = 7;
  v.without_count = 9;
  CheckpointFile f;
  f.header["kind"] = "attrvec";
  store_attribute_vector(f, v);
  const CheckpointFile back = decode_checkpoint(encode_checkpoint(f));
  CHECK(load_attribute_vector(back, 1) == v);
  CHECK_THROWS_AS(load_attribute_vector(back, 0), CheckpointError);
}
