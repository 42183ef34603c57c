#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "vaegan/data.hpp"
#include "vaegan/image.hpp"
#include "vaegan/rng.hpp"

using namespace vaegan;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

Tensor random_bytes_image(Rng& rng, std::size_t c, std::size_t h, std::size_t w) {
  Tensor t({c, h, w});
  for (auto& v : t.data()) v = byte_value(static_cast<std::uint8_t>(rng.below(256)));
  return t;
}

}  // namespace

TEST_CASE("pixel byte mapping") {
  CHECK(pixel_byte(-1.0) == 0);
  CHECK(pixel_byte(1.0) == 255);
  CHECK(pixel_byte(0.0) == 128);
  CHECK(pixel_byte(-3.0) == 0);
  CHECK(pixel_byte(7.5) == 255);
  CHECK(pixel_byte(std::numeric_limits<double>::infinity()) == 255);
  CHECK(pixel_byte(-std::numeric_limits<double>::infinity()) == 0);
  CHECK_THROWS(pixel_byte(std::nan("")));
  for (int b = 0; b < 256; ++b) CHECK(pixel_byte(byte_value(static_cast<std::uint8_t>(b))) == b);
  CHECK(byte_value(0) == -1.0);
  CHECK(byte_value(255) == 1.0);
}

TEST_CASE("PPM and PGM layout") {
  const Tensor rgb({3, 1, 2}, {1, -1, -1, 1, -1, -1});
  const auto ppm = encode_pnm(rgb);
  const auto expect = bytes_of(std::string("P6\n2 1\n255\n") + std::string("\xff\x00\x00\x00\xff\x00", 6));
  CHECK(ppm == expect);
  const auto pgm = encode_pnm(Tensor({1, 2, 1}, {-1, 1}));
  CHECK(pgm == bytes_of(std::string("P5\n1 2\n255\n") + std::string("\x00\xff", 2)));
  CHECK_THROWS_AS(encode_pnm(Tensor({2, 2, 2})), ShapeError);
  CHECK_THROWS_AS(encode_pnm(Tensor({4, 4})), ShapeError);
}

TEST_CASE("byte-exact round trips") {
  Rng rng(9);
  for (std::size_t c : {1u, 3u}) {
    const Tensor im = random_bytes_image(rng, c, 5, 7);
    const auto enc = encode_pnm(im);
    const Tensor back = decode_pnm(enc);
    CHECK(bit_identical(back, im));
    CHECK(encode_pnm(back) == enc);
  }
  const auto dir = std::filesystem::temp_directory_path() / "vaegan_test_image";
  std::filesystem::create_directories(dir);
  const Tensor im = random_bytes_image(rng, 3, 4, 4);
  write_pnm(dir / "a.ppm", im);
  CHECK(bit_identical(read_pnm(dir / "a.ppm"), im));
  std::filesystem::remove_all(dir);
}

TEST_CASE("header comments are accepted and damage is rejected") {
  const Tensor t = decode_pnm(bytes_of(std::string("P5 # grey\n2 1 255\n") + std::string("\x00\xff", 2)));
  CHECK(t == Tensor({1, 1, 2}, {-1, 1}));
  CHECK_THROWS_AS(decode_pnm(bytes_of("P3\n1 1\n255\n0 0 0")), DataError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P5\n1 1\n65535\n\x00\x00")), DataError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P5\n2 2\n255\n\x00")), DataError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P5\n1 1\n255\n\x00\x00")), DataError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P5\n0 1\n255\n")), DataError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P6\n1")), DataError);
  CHECK_THROWS_AS(read_pnm("/nonexistent/x.ppm"), DataError);
}

TEST_CASE("montage grid") {
  Tensor imgs({5, 1, 2, 2});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) imgs[i * 4 + j] = static_cast<double>(i) / 10.0;
  const Tensor m = montage(imgs);
  CHECK(m.shape() == Shape{1, 4, 6});
  CHECK(m.at({0, 0, 0}) == 0.0);
  CHECK(m.at({0, 1, 5}) == 0.2);
  CHECK(m.at({0, 2, 2}) == 0.4);
  CHECK(m.at({0, 3, 5}) == -1.0);
  CHECK(montage(Tensor({1, 3, 4, 4})).shape() == Shape{3, 4, 4});
  CHECK(montage(Tensor({4, 3, 4, 4})).shape() == Shape{3, 8, 8});
  CHECK_THROWS_AS(montage(Tensor({3, 4, 4})), ShapeError);
}

TEST_CASE("side by side") {
  const std::vector<Tensor> ims{Tensor({1, 1, 2}, {1, 2}), Tensor({1, 1, 2}, {3, 4})};
  CHECK(side_by_side(ims) == Tensor({1, 1, 4}, {1, 2, 3, 4}));
  const std::vector<Tensor> bad{Tensor({1, 1, 2}), Tensor({1, 2, 1})};
  CHECK_THROWS_AS(side_by_side(bad), ShapeError);
  CHECK_THROWS(side_by_side(std::vector<Tensor>{}));
}
