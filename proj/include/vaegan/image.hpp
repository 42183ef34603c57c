#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vaegan/tensor.hpp"

namespace vaegan {

/// round((v + 1) / 2 * 255) with halves away from zero, clamped to [0, 255].
std::uint8_t pixel_byte(double v);
/// Inverse map from a byte to [-1, 1].
double byte_value(std::uint8_t b);

/// Binary PPM ("P6") for 3-channel and PGM ("P5") for 1-channel C x H x W
/// images, maxval 255.
std::vector<std::uint8_t> encode_pnm(const Tensor& image);
Tensor decode_pnm(std::span<const std::uint8_t> bytes);

void write_pnm(const std::filesystem::path& path, const Tensor& image);
Tensor read_pnm(const std::filesystem::path& path);

/// Tiles N x C x H x W images into a grid with ceil(sqrt(N)) columns; unused
/// cells are black.
Tensor montage(const Tensor& images);

/// Places images side by side: the result is C x H x (k * W).
Tensor side_by_side(std::span<const Tensor> images);

}  // namespace vaegan
