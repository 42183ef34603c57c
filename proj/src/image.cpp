#include "vaegan/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "vaegan/data.hpp"

namespace vaegan {

std::uint8_t pixel_byte(double v) {
  if (std::isnan(v)) throw std::domain_error("NaN pixel");
  const double scaled = std::round((v + 1.0) * 0.5 * 255.0);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

double byte_value(std::uint8_t b) { return 2.0 * static_cast<double>(b) / 255.0 - 1.0; }

std::vector<std::uint8_t> encode_pnm(const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
    throw ShapeError("image must be 1 x H x W or 3 x H x W, got " + shape_str(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const std::string head = std::string(c == 3 ? "P6" : "P5") + "\n" + std::to_string(w) + " " + std::to_string(h) +
                           "\n255\n";
  std::vector<std::uint8_t> out(head.begin(), head.end());
  out.reserve(out.size() + c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) out.push_back(pixel_byte(image[(k * h + y) * w + x]));
  return out;
}

Tensor decode_pnm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t += static_cast<char>(bytes[pos++]);
    if (t.empty()) throw DataError("truncated image header");
    return t;
  };
  auto number = [&]() {
    const std::string t = token();
    if (t.find_first_not_of("0123456789") != std::string::npos || t.size() > 9)
      throw DataError("bad image header field '" + t + "'");
    return static_cast<std::size_t>(std::stoul(t));
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P6") throw DataError("unsupported image magic '" + magic + "'");
  const std::size_t c = magic == "P6" ? 3 : 1;
  const std::size_t w = number(), h = number(), maxval = number();
  if (w == 0 || h == 0) throw DataError("image has zero extent");
  if (maxval != 255) throw DataError("only maxval 255 is supported");
  if (pos >= bytes.size()) throw DataError("truncated image");
  ++pos;  // single whitespace before the raster
  if (bytes.size() - pos != c * h * w)
    throw DataError("image raster has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                    std::to_string(c * h * w));
  Tensor out(Shape{c, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) out[(k * h + y) * w + x] = byte_value(bytes[pos++]);
  return out;
}

void write_pnm(const std::filesystem::path& path, const Tensor& image) {
  const auto bytes = encode_pnm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_pnm(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Tensor montage(const Tensor& images) {
  if (images.rank() != 4) throw ShapeError("montage needs N x C x H x W, got " + shape_str(images.shape()));
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  const std::size_t rows = (n + cols - 1) / cols;
  Tensor out(Shape{c, rows * h, cols * w}, -1.0);
  const std::size_t ow = cols * w;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r0 = (i / cols) * h, c0 = (i % cols) * w;
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          out[(k * rows * h + r0 + y) * ow + c0 + x] = images[((i * c + k) * h + y) * w + x];
  }
  return out;
}

Tensor side_by_side(std::span<const Tensor> images) {
  if (images.empty()) throw std::invalid_argument("side_by_side needs at least one image");
  const Shape& s = images[0].shape();
  if (s.size() != 3) throw ShapeError("side_by_side needs C x H x W images");
  for (const auto& im : images)
    if (im.shape() != s) throw ShapeError("side_by_side images differ in shape");
  const std::size_t c = s[0], h = s[1], w = s[2], k = images.size();
  Tensor out(Shape{c, h, k * w});
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out[(ch * h + y) * k * w + i * w + x] = images[i][(ch * h + y) * w + x];
  return out;
}

}  // namespace vaegan
