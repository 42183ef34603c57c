#include "vaegan/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "vaegan/rng.hpp"

namespace vaegan {

std::optional<std::size_t> AttributedDataset::attribute_index(const std::string& name) const {
  auto it = std::find(attribute_names.begin(), attribute_names.end(), name);
  if (it == attribute_names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - attribute_names.begin());
}

Tensor AttributedDataset::image_batch(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw DataError("empty index list");
  const std::size_t row = images.numel() / images.dim(0);
  Shape s = images.shape();
  s[0] = indices.size();
  Tensor out(s);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= size()) throw DataError("sample index out of range");
    std::copy_n(images.ptr() + indices[k] * row, row, out.ptr() + k * row);
  }
  return out;
}

Tensor AttributedDataset::attribute_batch(const std::vector<std::size_t>& indices) const {
  if (attr_count() == 0) return Tensor();
  const std::size_t a = attr_count();
  Tensor out({indices.size(), a});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= size()) throw DataError("sample index out of range");
    std::copy_n(attributes.ptr() + indices[k] * a, a, out.ptr() + k * a);
  }
  return out;
}

AttributedDataset AttributedDataset::subset(const std::vector<std::size_t>& indices) const {
  AttributedDataset out;
  out.images = image_batch(indices);
  out.attributes = attribute_batch(indices);
  out.attribute_names = attribute_names;
  out.split = split;
  return out;
}

void AttributedDataset::validate() const {
  if (images.rank() != 4) throw DataError("images must be N x C x H x W, got " + shape_str(images.shape()));
  for (double v : images.data())
    if (!(v >= -1.0 && v <= 1.0)) throw DataError("image value outside [-1, 1]");
  if (attr_count() == 0) {
    if (!attributes.empty()) throw DataError("attribute values without names");
    return;
  }
  if (attributes.rank() != 2 || attributes.dim(0) != size() || attributes.dim(1) != attr_count())
    throw DataError("attribute matrix " + shape_str(attributes.shape()) + " inconsistent with " +
                    std::to_string(size()) + " images and " + std::to_string(attr_count()) + " names");
  for (double v : attributes.data())
    if (v != 0.0 && v != 1.0) throw DataError("attribute values must be 0 or 1");
}

const std::vector<std::string>& synthetic_attribute_catalog() {
  static const std::vector<std::string> names{"bright_disk",    "vertical_bar", "large_shape",
                                              "horizontal_bar", "corner_mark",  "light_background"};
  return names;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("line " + std::to_string(lineno) + ": expected key=value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

void SyntheticSpec::validate() const {
  if (resolution != 16 && resolution != 32 && resolution != 64)
    throw DataError("synthetic resolution must be 16, 32 or 64");
  if (channels != 1 && channels != 3) throw DataError("synthetic channels must be 1 or 3");
  if (attributes.size() > 8) throw DataError("at most 8 synthetic attributes");
  if (count == 0) throw DataError("synthetic count must be positive");
  const auto& cat = synthetic_attribute_catalog();
  for (std::size_t i = 0; i < attributes.size(); ++i) {
    if (std::find(cat.begin(), cat.end(), attributes[i]) == cat.end())
      throw DataError("unknown synthetic attribute '" + attributes[i] + "'");
    if (std::find(attributes.begin(), attributes.begin() + i, attributes[i]) != attributes.begin() + i)
      throw DataError("duplicate synthetic attribute '" + attributes[i] + "'");
  }
}

SyntheticSpec SyntheticSpec::parse(const std::string& text) {
  SyntheticSpec s;
  for (const auto& [k, v] : parse_key_values(text)) {
    try {
      if (k == "resolution") s.resolution = std::stoul(v);
      else if (k == "channels") s.channels = std::stoul(v);
      else if (k == "count") s.count = std::stoul(v);
      else if (k == "seed") s.seed = std::stoull(v);
      else if (k == "split") {
        if (v != "train" && v != "test") throw DataError("split must be train or test");
        s.split = v == "train" ? Split::train : Split::test;
      } else if (k == "attributes") {
        s.attributes.clear();
        std::istringstream in(v);
        std::string name;
        while (std::getline(in, name, ','))
          if (!name.empty()) s.attributes.push_back(name);
      } else {
        throw DataError("unknown synthetic spec key '" + k + "'");
      }
    } catch (const std::logic_error&) {
      throw DataError("bad value for synthetic spec key '" + k + "': " + v);
    }
  }
  s.validate();
  return s;
}

std::string SyntheticSpec::to_text() const {
  std::ostringstream os;
  os << "resolution=" << resolution << "\nchannels=" << channels << "\ncount=" << count << "\nseed=" << seed
     << "\nsplit=" << (split == Split::train ? "train" : "test") << "\nattributes=";
  for (std::size_t i = 0; i < attributes.size(); ++i) os << (i ? "," : "") << attributes[i];
  os << "\n";
  return os.str();
}

AttributedDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t R = spec.resolution, N = spec.count, A = spec.attributes.size();
  const double r = static_cast<double>(R);
  Rng rng(spec.seed);

  AttributedDataset out;
  out.images = Tensor({N, spec.channels, R, R});
  out.attributes = A ? Tensor({N, A}) : Tensor();
  out.attribute_names = spec.attributes;
  out.split = spec.split;

  auto has = [&](std::size_t n, const char* name) {
    auto it = std::find(spec.attributes.begin(), spec.attributes.end(), name);
    return it != spec.attributes.end() && out.attributes.at({n, static_cast<std::size_t>(it - spec.attributes.begin())}) == 1.0;
  };

  Tensor canvas({3, R, R});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t a = 0; a < A; ++a) out.attributes.at({n, a}) = rng.bernoulli(0.5) ? 1.0 : 0.0;

    // Jitter is drawn unconditionally so every sample consumes the same
    // number of variates.
    const double cx = r / 2 + (rng.uniform() * 2 - 1) * r / 8;
    const double cy = r / 2 + (rng.uniform() * 2 - 1) * r / 8;
    const double radius = (has(n, "large_shape") ? 0.30 : 0.18) * r * (1.0 + (rng.uniform() * 2 - 1) * 0.08);
    const std::size_t bar_w = std::max<std::size_t>(1, R / 8);
    const std::size_t span = R - 2 * (R / 8) - bar_w + 1;
    const std::size_t vbar_x = R / 8 + static_cast<std::size_t>(rng.below(span));
    const std::size_t hbar_y = R / 8 + static_cast<std::size_t>(rng.below(span));
    const std::size_t mark_off = static_cast<std::size_t>(rng.below(2));

    const double bg = has(n, "light_background") ? -0.6 : -1.0;
    std::fill(canvas.data().begin(), canvas.data().end(), bg);
    const double bright = has(n, "bright_disk") ? 0.9 : -0.2;
    for (std::size_t y = 0; y < R; ++y)
      for (std::size_t x = 0; x < R; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
        if (dx * dx + dy * dy <= radius * radius) {
          canvas.at({0, y, x}) = bright;
          canvas.at({1, y, x}) = 0.5;
        }
        if (has(n, "vertical_bar") && x >= vbar_x && x < vbar_x + bar_w) canvas.at({2, y, x}) = 0.6;
        if (has(n, "horizontal_bar") && y >= hbar_y && y < hbar_y + bar_w) canvas.at({2, y, x}) = 0.6;
        if (has(n, "corner_mark") && x >= mark_off && x < mark_off + bar_w && y >= mark_off && y < mark_off + bar_w)
          canvas.at({2, y, x}) = 1.0;
      }

    const std::size_t plane = R * R;
    double* dst = out.images.ptr() + n * spec.channels * plane;
    if (spec.channels == 3) {
      std::copy_n(canvas.ptr(), 3 * plane, dst);
    } else {
      for (std::size_t i = 0; i < plane; ++i)
        dst[i] = (canvas[i] + canvas[plane + i] + canvas[2 * plane + i]) / 3.0;
    }
  }
  return out;
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void put_be32(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                         static_cast<char>(v)};
  os.write(bytes, 4);
}

// Returns extents and the payload offset.
std::pair<std::vector<std::uint32_t>, std::size_t> parse_idx_header(const std::vector<unsigned char>& b,
                                                                     std::uint32_t magic, const std::string& what) {
  if (b.size() < 4) throw DataError(what + ": truncated header");
  if (be32(b, 0) != magic) {
    std::ostringstream os;
    os << what << ": bad magic 0x" << std::hex << be32(b, 0) << ", expected 0x" << magic;
    throw DataError(os.str());
  }
  const std::size_t ndim = magic & 0xff;
  if (b.size() < 4 + 4 * ndim) throw DataError(what + ": truncated header");
  std::vector<std::uint32_t> ext(ndim);
  std::size_t total = 1;
  for (std::size_t d = 0; d < ndim; ++d) {
    ext[d] = be32(b, 4 + 4 * d);
    if (ext[d] == 0) throw DataError(what + ": zero extent");
    total *= ext[d];
  }
  const std::size_t off = 4 + 4 * ndim;
  if (b.size() - off < total) throw DataError(what + ": truncated payload");
  if (b.size() - off > total) throw DataError(what + ": payload longer than extents");
  return {ext, off};
}

}  // namespace

AttributedDataset load_idx(const std::filesystem::path& images, const std::optional<std::filesystem::path>& labels) {
  const auto ib = read_file(images);
  const auto [ext, off] = parse_idx_header(ib, 0x00000803, images.string());
  const std::size_t n = ext[0], h = ext[1], w = ext[2];
  AttributedDataset out;
  out.images = Tensor({n, 1, h, w});
  for (std::size_t i = 0; i < n * h * w; ++i) out.images[i] = 2.0 * ib[off + i] / 255.0 - 1.0;

  if (labels) {
    const auto lb = read_file(*labels);
    const auto [lext, loff] = parse_idx_header(lb, 0x00000801, labels->string());
    if (lext[0] != n) throw DataError("label count " + std::to_string(lext[0]) + " != image count " + std::to_string(n));
    std::size_t classes = 0;
    for (std::size_t i = 0; i < n; ++i) classes = std::max<std::size_t>(classes, lb[loff + i] + 1u);
    out.attributes = Tensor({n, classes});
    for (std::size_t i = 0; i < n; ++i) out.attributes.at({i, lb[loff + i]}) = 1.0;
    for (std::size_t k = 0; k < classes; ++k) out.attribute_names.push_back("label_" + std::to_string(k));
  }
  out.validate();
  return out;
}

void write_idx(const AttributedDataset& data, const std::filesystem::path& images,
               const std::optional<std::filesystem::path>& labels) {
  data.validate();
  if (data.images.dim(1) != 1) throw DataError("write_idx supports single-channel images only");
  const std::size_t n = data.size(), h = data.images.dim(2), w = data.images.dim(3);
  {
    std::ofstream os(images, std::ios::binary);
    if (!os) throw DataError("cannot write " + images.string());
    put_be32(os, 0x00000803);
    put_be32(os, static_cast<std::uint32_t>(n));
    put_be32(os, static_cast<std::uint32_t>(h));
    put_be32(os, static_cast<std::uint32_t>(w));
    for (double v : data.images.data()) {
      const double p = std::round((v + 1.0) * 127.5);
      os.put(static_cast<char>(static_cast<unsigned char>(std::clamp(p, 0.0, 255.0))));
    }
  }
  if (labels) {
    if (data.attr_count() == 0) throw DataError("no labels to write");
    std::ofstream os(*labels, std::ios::binary);
    if (!os) throw DataError("cannot write " + labels->string());
    put_be32(os, 0x00000801);
    put_be32(os, static_cast<std::uint32_t>(n));
    const std::size_t a = data.attr_count();
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = data.attributes.ptr() + i * a;
      os.put(static_cast<char>(std::max_element(row, row + a) - row));
    }
  }
}

std::vector<std::vector<std::size_t>> batch_iterator(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                     std::uint64_t epoch) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (batch_size > n) throw std::invalid_argument("batch_size " + std::to_string(batch_size) +
                                                  " exceeds dataset size " + std::to_string(n));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, epoch));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b + batch_size <= n; b += batch_size)
    batches.emplace_back(order.begin() + b, order.begin() + b + batch_size);
  return batches;
}

}  // namespace vaegan
