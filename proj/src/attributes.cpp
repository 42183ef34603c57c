#include "vaegan/attributes.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace vaegan {

void AttributeVector::validate(std::size_t latent_dim) const {
  if (direction.rank() != 1 || direction.dim(0) != latent_dim)
    throw ShapeError("attribute vector " + shape_str(direction.shape()) + " does not match latent width " +
                     std::to_string(latent_dim));
  if (with_count < 1 || without_count < 1) throw std::invalid_argument("attribute vector class counts must be >= 1");
}

double exact_sum(std::span<const double> values) {
  // Shewchuk's non-overlapping partials, rounded once at the end.
  std::vector<double> partials;
  for (double x : values) {
    std::size_t i = 0;
    for (double y : partials) {
      if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[i++] = lo;
      x = hi;
    }
    partials.resize(i);
    partials.push_back(x);
  }
  if (partials.empty()) return 0.0;
  std::size_t n = partials.size() - 1;
  double hi = partials[n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials[--n];
    hi = x + y;
    const double yr = hi - x;
    lo = y - yr;
    if (lo != 0.0) break;
  }
  // Half-way case: round in the direction of the remaining partials.
  if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

AttributeVector attribute_vector_from_codes(const Tensor& codes, std::span<const double> labels,
                                            std::size_t attribute_index, std::string name) {
  if (codes.rank() != 2) throw ShapeError("codes must be N x d_z, got " + shape_str(codes.shape()));
  const std::size_t n = codes.dim(0);
  const std::size_t d = codes.dim(1);
  if (labels.size() != n) throw ShapeError("label count does not match code rows");
  std::vector<std::size_t> with, without;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == 1.0) with.push_back(i);
    else if (labels[i] == 0.0) without.push_back(i);
    else throw std::invalid_argument("attribute labels must be 0/1");
  }
  const std::string what = name.empty() ? "attribute " + std::to_string(attribute_index) : "attribute '" + name + "'";
  if (with.empty()) throw DataError("no samples with " + what);
  if (without.empty()) throw DataError("no samples without " + what);

  auto class_mean = [&](const std::vector<std::size_t>& rows, std::size_t j) {
    std::vector<double> col(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) col[r] = codes[rows[r] * d + j];
    return exact_sum(col) / static_cast<double>(rows.size());
  };
  AttributeVector v;
  v.attribute_index = attribute_index;
  v.attribute_name = std::move(name);
  v.direction = Tensor(Shape{d});
  for (std::size_t j = 0; j < d; ++j) v.direction[j] = class_mean(with, j) - class_mean(without, j);
  v.with_count = with.size();
  v.without_count = without.size();
  return v;
}

Tensor posterior_means(VaeGan& model, const AttributedDataset& data, std::size_t chunk) {
  const std::size_t n = data.size();
  if (n == 0) throw DataError("dataset is empty");
  const bool conditional = model.config().attr_count > 0;
  std::vector<double> out;
  out.reserve(n * model.config().latent());
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, n - begin));
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor x = data.image_batch(idx);
    const Tensor a = conditional ? data.attribute_batch(idx) : Tensor();
    const Tensor mu = encode_eval(model, x, conditional ? &a : nullptr).mu;
    out.insert(out.end(), mu.data().begin(), mu.data().end());
  }
  return Tensor(Shape{n, model.config().latent()}, std::move(out));
}

AttributeVector compute_attribute_vector(const AttributedDataset& data, VaeGan& model, std::size_t attr_idx) {
  if (attr_idx >= data.attr_count())
    throw std::out_of_range("attribute index " + std::to_string(attr_idx) + " out of range");
  const Tensor codes = posterior_means(model, data);
  std::vector<double> labels(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) labels[i] = data.attributes[i * data.attr_count() + attr_idx];
  return attribute_vector_from_codes(codes, labels, attr_idx, data.attribute_names[attr_idx]);
}

Tensor apply_attribute(const Tensor& z, const AttributeVector& vec, double alpha) {
  const std::size_t d = vec.direction.numel();
  if (vec.direction.rank() != 1 || z.rank() < 1 || z.rank() > 2 || z.shape().back() != d)
    throw ShapeError("apply_attribute: code " + shape_str(z.shape()) + " vs direction " +
                     shape_str(vec.direction.shape()));
  Tensor out = z;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = z[i] + alpha * vec.direction[i % d];
  return out;
}

Tensor reconstruct_images(VaeGan& model, const Tensor& x, const Tensor* attrs) {
  return decode_eval(model, encode_eval(model, x, attrs).mu, attrs);
}

Tensor edit_images(VaeGan& model, const Tensor& x, const AttributeVector& vec, double alpha, const Tensor* attrs) {
  vec.validate(model.config().latent());
  const Tensor mu = encode_eval(model, x, attrs).mu;
  return decode_eval(model, apply_attribute(mu, vec, alpha), attrs);
}

void store_attribute_vector(CheckpointFile& file, const AttributeVector& vec) {
  const std::string key = "attrvec/" + std::to_string(vec.attribute_index);
  file.tensors.insert_or_assign(key, vec.direction);
  file.header[key + ".name"] = vec.attribute_name;
  file.header[key + ".with_count"] = std::to_string(vec.with_count);
  file.header[key + ".without_count"] = std::to_string(vec.without_count);
}

AttributeVector load_attribute_vector(const CheckpointFile& file, std::size_t attribute_index) {
  const std::string key = "attrvec/" + std::to_string(attribute_index);
  auto t = file.tensors.find(key);
  if (t == file.tensors.end()) throw CheckpointError("no attribute vector " + key);
  auto header = [&](const std::string& k) {
    auto it = file.header.find(key + "." + k);
    if (it == file.header.end()) throw CheckpointError("attribute vector lacks '" + k + "'");
    return it->second;
  };
  AttributeVector v;
  v.attribute_index = attribute_index;
  v.attribute_name = header("name");
  v.direction = t->second;
  try {
    v.with_count = std::stoull(header("with_count"));
    v.without_count = std::stoull(header("without_count"));
  } catch (const std::logic_error&) {
    throw CheckpointError("attribute vector counts are malformed");
  }
  if (v.direction.rank() != 1) throw CheckpointError("attribute vector is not rank 1");
  return v;
}

}  // namespace vaegan
