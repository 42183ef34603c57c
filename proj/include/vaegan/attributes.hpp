#pragma once

#include <cstddef>
#include <string>

#include "vaegan/checkpoint.hpp"
#include "vaegan/data.hpp"
#include "vaegan/models.hpp"
#include "vaegan/tensor.hpp"

namespace vaegan {

/// Mean latent code of samples with an attribute minus the mean of those
/// without it.
struct AttributeVector {
  std::size_t attribute_index = 0;
  std::string attribute_name;
  Tensor direction;  // [d_z]
  std::size_t with_count = 0;
  std::size_t without_count = 0;

  void validate(std::size_t latent_dim) const;

  friend bool operator==(const AttributeVector&, const AttributeVector&) = default;
};

/// Correctly rounded sum; the result does not depend on the order of `values`.
double exact_sum(std::span<const double> values);

/// Direction from precomputed codes (N x d_z) and a 0/1 label per row. Each
/// coordinate's mean is an exactly rounded sum divided by the class count,
/// so the result is invariant to row order.
AttributeVector attribute_vector_from_codes(const Tensor& codes, std::span<const double> labels,
                                            std::size_t attribute_index = 0, std::string name = {});

/// Posterior means of every image, in eval mode, `chunk` rows at a time.
Tensor posterior_means(VaeGan& model, const AttributedDataset& data, std::size_t chunk = 64);

/// Encodes the dataset with posterior means and splits by attribute attr_idx.
AttributeVector compute_attribute_vector(const AttributedDataset& data, VaeGan& model, std::size_t attr_idx);

/// z + alpha * direction, applied to a single code [d_z] or to every row of
/// an N x d_z matrix.
Tensor apply_attribute(const Tensor& z, const AttributeVector& vec, double alpha);

/// decode(mu(x)): the reconstruction path used by edits.
Tensor reconstruct_images(VaeGan& model, const Tensor& x, const Tensor* attrs = nullptr);

/// decode(apply_attribute(mu(x), vec, alpha)).
Tensor edit_images(VaeGan& model, const Tensor& x, const AttributeVector& vec, double alpha,
                   const Tensor* attrs = nullptr);

/// Stored as tensor "attrvec/<index>" plus header keys "attrvec/<index>.*".
void store_attribute_vector(CheckpointFile& file, const AttributeVector& vec);
AttributeVector load_attribute_vector(const CheckpointFile& file, std::size_t attribute_index);

}  // namespace vaegan
