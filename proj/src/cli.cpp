#include "vaegan/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "vaegan/attributes.hpp"
#include "vaegan/checkpoint.hpp"
#include "vaegan/eval.hpp"
#include "vaegan/image.hpp"

namespace vaegan {
namespace fs = std::filesystem;

namespace {

enum Cmd : unsigned {
  c_train = 1,
  c_sample = 2,
  c_reconstruct = 4,
  c_attrvec = 8,
  c_edit = 16,
  c_eval = 32,
};
constexpr unsigned c_any = 63;
constexpr unsigned c_data = c_train | c_reconstruct | c_attrvec | c_edit | c_eval;
constexpr unsigned c_loads = c_sample | c_reconstruct | c_attrvec | c_edit;

enum class Arity { single, multi, flag };

struct KeyDef {
  const char* key;
  unsigned commands;
  Arity arity;
  const char* help;
};

const KeyDef kKeys[] = {
    {"preset", c_train, Arity::single, "smoke, desk or paper (resolution, scale, steps, batch)"},
    {"mode", c_train, Arity::single, "vae, vae-disl, vaegan or gan"},
    {"gamma", c_train, Arity::single, "weight of the reconstruction term in the decoder update"},
    {"lr", c_train, Arity::single, "RMSProp learning rate"},
    {"batch", c_train, Arity::single, "mini-batch size"},
    {"steps", c_train, Arity::single, "training steps"},
    {"seed", c_any, Arity::single, "random seed"},
    {"llike", c_train, Arity::single, "reconstruction likelihood: pixel or disl"},
    {"gan_terms", c_train, Arity::single, "two or three discriminator terms"},
    {"dec_gan_style", c_train, Arity::single, "saturating or non-saturating decoder GAN loss"},
    {"pretrain_steps", c_train, Arity::single, "GAN steps before the discriminator freezes (vae-disl)"},
    {"rms_rho", c_train, Arity::single, "RMSProp decay"},
    {"rms_eps", c_train, Arity::single, "RMSProp epsilon"},
    {"telemetry_every", c_train, Arity::single, "steps between telemetry lines"},
    {"checkpoint_every", c_train, Arity::single, "steps between periodic checkpoints (0 = final only)"},
    {"time_budget", c_train, Arity::single, "wall-clock budget in seconds (0 = none)"},
    {"wall_clock", c_train, Arity::flag, "record wall-clock seconds in the telemetry CSV"},
    {"resume", c_train, Arity::single, "checkpoint to continue from"},
    {"res", c_train, Arity::single, "image resolution"},
    {"channels", c_train, Arity::single, "image channels (synthetic data)"},
    {"scale", c_train, Arity::single, "network width scale"},
    {"latent_dim", c_train, Arity::single, "latent width (0 = 128 * scale)"},
    {"conditional", c_train, Arity::flag, "condition the networks on the attributes"},
    {"data", c_data, Arity::single, "'synthetic' or an IDX image file"},
    {"labels", c_data, Arity::single, "IDX label file"},
    {"count", c_data, Arity::single, "synthetic sample count"},
    {"attributes", c_data, Arity::single, "comma-separated synthetic attributes"},
    {"data_seed", c_data, Arity::single, "synthetic generator seed"},
    {"checkpoint", c_loads, Arity::single, "training checkpoint"},
    {"n", c_sample, Arity::single, "number of samples"},
    {"condition", c_sample | c_reconstruct | c_edit, Arity::single,
     "comma-separated 0/1 attributes for conditional models"},
    {"input", c_reconstruct | c_edit, Arity::multi, "PPM/PGM input images (default: synthetic test split)"},
    {"attr", c_attrvec | c_edit, Arity::single, "attribute name"},
    {"vector", c_edit, Arity::single, "attribute vector file"},
    {"alpha", c_edit, Arity::single, "attribute vector step"},
    {"checkpoints", c_eval, Arity::multi, "conditional checkpoints to compare"},
    {"regressor", c_eval, Arity::single, "trained regressor file"},
    {"train_regressor", c_eval, Arity::flag, "train a regressor on the synthetic training split"},
    {"regressor_steps", c_eval, Arity::single, "regressor training steps"},
    {"regressor_scale", c_eval, Arity::single, "regressor width scale"},
    {"regressor_count", c_eval, Arity::single, "regressor training images"},
    {"regressor_out", c_eval, Arity::single, "where to save a trained regressor"},
    {"runs", c_eval, Arity::single, "repeated scoring runs"},
    {"samples", c_eval, Arity::single, "samples per attribute vector"},
    {"out", c_any, Arity::single, "output directory (attrvec: output file)"},
};

struct CommandDef {
  const char* name;
  Cmd id;
  const char* help;
};

const CommandDef kCommands[] = {
    {"train", c_train, "train a model"},
    {"sample", c_sample, "decode prior samples"},
    {"reconstruct", c_reconstruct, "reconstruct images through the encoder and decoder"},
    {"attrvec", c_attrvec, "compute an attribute vector"},
    {"edit", c_edit, "add an attribute vector to latent codes"},
    {"eval", c_eval, "score conditional models with an attribute regressor"},
};

std::map<std::string, std::string> defaults(Cmd cmd) {
  std::map<std::string, std::string> d;
  d["seed"] = "0";
  if (cmd & c_data) {
    d["data"] = "synthetic";
    d["labels"] = "";
    d["count"] = "200";
    d["attributes"] = "bright_disk,vertical_bar,large_shape";
    d["data_seed"] = "1";
  }
  switch (cmd) {
    case c_train:
      d.insert({{"preset", "smoke"},          {"mode", "vaegan"},         {"gamma", "1"},
                {"lr", "0.0003"},             {"gan_terms", "three"},     {"dec_gan_style", "non-saturating"},
                {"pretrain_steps", "0"},      {"rms_rho", "0.9"},         {"rms_eps", "1e-08"},
                {"telemetry_every", "10"},    {"checkpoint_every", "0"},  {"time_budget", "0"},
                {"wall_clock", "false"},      {"resume", ""},             {"channels", "3"},
                {"latent_dim", "0"},          {"conditional", "false"},   {"out", "run"}});
      break;
    case c_sample:
      d.insert({{"checkpoint", ""}, {"n", "16"}, {"condition", ""}, {"out", "samples"}});
      break;
    case c_reconstruct:
      d.insert({{"checkpoint", ""}, {"input", ""}, {"condition", ""}, {"out", "reconstructions"}});
      d["count"] = "16";
      break;
    case c_attrvec:
      d.insert({{"checkpoint", ""}, {"attr", ""}, {"out", "attrvec.vgcp"}});
      break;
    case c_edit:
      d.insert({{"checkpoint", ""}, {"vector", ""}, {"attr", ""}, {"alpha", "1"}, {"input", ""}, {"condition", ""},
                {"out", "edits"}});
      d["count"] = "8";
      break;
    case c_eval:
      d.insert({{"checkpoints", ""},
                {"regressor", ""},
                {"train_regressor", "false"},
                {"regressor_steps", "400"},
                {"regressor_scale", "0.125"},
                {"regressor_count", "2000"},
                {"regressor_out", ""},
                {"runs", "5"},
                {"samples", "10"},
                {"out", "eval"}});
      break;
  }
  return d;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw std::runtime_error("cannot create directory " + p.string() + ": " + ec.message());
}

const char* image_ext(std::size_t channels) { return channels == 3 ? ".ppm" : ".pgm"; }

std::string numbered(const char* prefix, std::size_t i, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%03zu%s", prefix, i, suffix);
  return buf;
}

/// Centers images in a canvas whose side is the next multiple of 8.
AttributedDataset pad_to_multiple_of_8(AttributedDataset data) {
  const auto s = data.images.shape();
  const std::size_t h = s[2], w = s[3];
  const std::size_t side = (std::max(h, w) + 7) / 8 * 8;
  if (side == h && side == w) return data;
  const std::size_t oy = (side - h) / 2, ox = (side - w) / 2;
  Tensor out(Shape{s[0], s[1], side, side}, -1.0);
  for (std::size_t p = 0; p < s[0] * s[1]; ++p)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[(p * side + oy + y) * side + ox + x] = data.images[(p * h + y) * w + x];
  data.images = std::move(out);
  return data;
}

SyntheticSpec synthetic_spec(const RunConfig& cfg, std::size_t resolution, std::size_t channels) {
  SyntheticSpec spec;
  spec.resolution = resolution;
  spec.channels = channels;
  spec.attributes = cfg.list("attributes");
  spec.count = cfg.u64("count");
  spec.seed = cfg.u64("data_seed");
  spec.validate();
  return spec;
}

/// The configured dataset; with a model, resolution and channels come from it.
AttributedDataset load_dataset(const RunConfig& cfg, const ModelConfig* model, Split split, std::size_t res,
                               std::size_t channels) {
  AttributedDataset data;
  if (cfg.str("data") == "synthetic") {
    SyntheticSpec spec = synthetic_spec(cfg, model ? model->resolution : res, model ? model->channels : channels);
    if (split == Split::test) spec = test_split(spec);
    data = generate_synthetic(spec);
  } else {
    std::optional<fs::path> labels;
    if (!cfg.str("labels").empty()) labels = cfg.str("labels");
    data = pad_to_multiple_of_8(load_idx(cfg.str("data"), labels));
    data.split = split;
  }
  data.validate();
  if (model) {
    const Shape expect{model->channels, model->resolution, model->resolution};
    if (Shape(data.images.shape().begin() + 1, data.images.shape().end()) != expect)
      throw DataError("dataset images " + shape_str(data.images.shape()) + " do not fit the model's " +
                      shape_str(expect));
    if (model->attr_count && model->attr_count != data.attr_count())
      throw DataError("conditional model expects " + std::to_string(model->attr_count) + " attributes, data has " +
                      std::to_string(data.attr_count()));
  }
  return data;
}

/// N x A condition rows from --condition, repeated for every image.
Tensor condition_rows(const RunConfig& cfg, const ModelConfig& mc, std::size_t n) {
  const auto items = cfg.list("condition");
  if (items.size() != mc.attr_count)
    throw UsageError("conditional model needs --condition with " + std::to_string(mc.attr_count) + " 0/1 values");
  Tensor out(Shape{n, mc.attr_count});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < mc.attr_count; ++j) {
      if (items[j] != "0" && items[j] != "1") throw UsageError("--condition values must be 0 or 1");
      out[i * mc.attr_count + j] = items[j] == "1" ? 1.0 : 0.0;
    }
  return out;
}

TrainingState load_encoder_checkpoint(const RunConfig& cfg) {
  if (cfg.str("checkpoint").empty()) throw UsageError("--checkpoint is required");
  TrainingState s = load_checkpoint(cfg.str("checkpoint"));
  if (s.config.mode == TrainMode::gan)
    throw DataError("checkpoint has no encoder: a GAN-only model cannot reconstruct or encode images");
  return s;
}

/// Images from --input files, or else the synthetic/IDX test split.
std::pair<Tensor, std::optional<Tensor>> input_images(const RunConfig& cfg, const ModelConfig& mc) {
  const auto files = cfg.list("input");
  if (files.empty()) {
    const AttributedDataset data = load_dataset(cfg, &mc, Split::test, 0, 0);
    std::optional<Tensor> attrs;
    if (mc.attr_count) attrs = data.attributes;
    return {data.images, attrs};
  }
  std::vector<Tensor> images;
  const Shape expect{mc.channels, mc.resolution, mc.resolution};
  for (const auto& f : files) {
    Tensor im = read_pnm(f);
    if (im.shape() != expect)
      throw DataError(f + ": image " + shape_str(im.shape()) + " does not fit the model's " + shape_str(expect));
    Shape s = im.shape();
    s.insert(s.begin(), 1);
    images.push_back(im.reshaped(s));
  }
  std::optional<Tensor> attrs;
  if (mc.attr_count) attrs = condition_rows(cfg, mc, images.size());
  return {concat_rows(images), attrs};
}

Tensor image_at(const Tensor& batch, std::size_t i) {
  const auto& s = batch.shape();
  return batch.slice_rows(i, i + 1).reshaped({s[1], s[2], s[3]});
}

// ---------------------------------------------------------------- commands

int cmd_train(RunConfig& cfg, std::ostream& out) {
  finalize_train_config(cfg);
  const TrainConfig tc = train_config(cfg);
  const fs::path dir = cfg.str("out");
  out << cfg.echo() << std::flush;
  ensure_dir(dir);
  write_text(dir / "config.txt", cfg.echo());

  TrainingState state;
  if (!cfg.str("resume").empty()) {
    state = load_checkpoint(cfg.str("resume"));
    state.config.max_steps = tc.max_steps;
    state.config.time_budget_seconds = tc.time_budget_seconds;
    state.config.telemetry_every = tc.telemetry_every;
    state.config.checkpoint_every = tc.checkpoint_every;
  }
  const ModelConfig* known = cfg.str("resume").empty() ? nullptr : &state.model.config();
  const AttributedDataset data = load_dataset(cfg, known, Split::train, cfg.u64("res"), cfg.u64("channels"));
  if (cfg.str("resume").empty()) {
    ModelConfig mc;
    mc.resolution = data.images.dim(2);
    mc.channels = data.images.dim(1);
    mc.scale = cfg.real("scale");
    mc.latent_dim = cfg.u64("latent_dim");
    if (cfg.flag("conditional")) {
      if (data.attr_count() == 0) throw UsageError("--conditional needs a dataset with attributes");
      mc.attr_count = data.attr_count();
    }
    state = init_training(tc, mc);
  }

  const fs::path csv_path = dir / "telemetry.csv";
  const bool append = !cfg.str("resume").empty() && fs::exists(csv_path);
  std::ofstream csv(csv_path, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  if (!append) csv << "step,l_prior,l_llike,l_gan_dis,l_gan_dec,wall_seconds\n";
  const bool wall = cfg.flag("wall_clock");

  TrainCallbacks cb;
  cb.telemetry = [&](std::uint64_t step, const LossBundle& l, double seconds) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%" PRIu64 ",%.17g,%.17g,%.17g,%.17g,%.17g\n", step, l.l_prior, l.l_llike,
                  l.l_gan_dis, l.l_gan_dec, wall ? seconds : 0.0);
    csv << buf << std::flush;
    std::snprintf(buf, sizeof buf, "step %" PRIu64 "  l_prior %.6g  l_llike %.6g  l_gan_dis %.6g  l_gan_dec %.6g  (%.1fs)\n",
                  step, l.l_prior, l.l_llike, l.l_gan_dis, l.l_gan_dec, seconds);
    out << buf << std::flush;
  };
  cb.checkpoint = [&](const TrainingState& s) {
    save_checkpoint(dir / ("checkpoint-" + std::to_string(s.step) + ".vgcp"), s);
  };
  train_loop(state, data, cb);
  save_checkpoint(dir / "checkpoint.vgcp", state);
  out << "wrote " << (dir / "checkpoint.vgcp").string() << " at step " << state.step << "\n";
  return exit_ok;
}

int cmd_sample(RunConfig& cfg, std::ostream& out) {
  out << cfg.echo() << std::flush;
  if (cfg.str("checkpoint").empty()) throw UsageError("--checkpoint is required");
  TrainingState s = load_checkpoint(cfg.str("checkpoint"));
  const ModelConfig& mc = s.model.config();
  const std::size_t n = cfg.u64("n");
  if (n == 0) throw UsageError("--n must be positive");
  Rng rng(cfg.u64("seed"));
  const Tensor z = rng.normal_tensor({n, mc.latent()});
  std::optional<Tensor> attrs;
  if (mc.attr_count) {
    if (cfg.list("condition").empty()) {
      attrs = Tensor(Shape{n, mc.attr_count});
      for (auto& v : attrs->data()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    } else {
      attrs = condition_rows(cfg, mc, n);
    }
  }
  const Tensor images = decode_eval(s.model, z, attrs ? &*attrs : nullptr);
  const fs::path dir = cfg.str("out");
  ensure_dir(dir);
  const char* ext = image_ext(mc.channels);
  for (std::size_t i = 0; i < n; ++i) write_pnm(dir / numbered("sample_", i, ext), image_at(images, i));
  write_pnm(dir / (std::string("montage") + ext), montage(images));
  out << "wrote " << n << " samples and a montage to " << dir.string() << "\n";
  return exit_ok;
}

int cmd_reconstruct(RunConfig& cfg, std::ostream& out) {
  out << cfg.echo() << std::flush;
  TrainingState s = load_encoder_checkpoint(cfg);
  const ModelConfig& mc = s.model.config();
  auto [x, attrs] = input_images(cfg, mc);
  const Tensor recon = reconstruct_images(s.model, x, attrs ? &*attrs : nullptr);
  const fs::path dir = cfg.str("out");
  ensure_dir(dir);
  double se = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) se += (x[i] - recon[i]) * (x[i] - recon[i]);
  const char* ext = image_ext(mc.channels);
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    const Tensor pair[] = {image_at(x, i), image_at(recon, i)};
    write_pnm(dir / numbered("pair_", i, ext), side_by_side(pair));
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "pixel mse %.6g\n", se / static_cast<double>(x.numel()));
  out << "wrote " << x.dim(0) << " pairs to " << dir.string() << "; " << buf;
  return exit_ok;
}

int cmd_attrvec(RunConfig& cfg, std::ostream& out) {
  out << cfg.echo() << std::flush;
  TrainingState s = load_encoder_checkpoint(cfg);
  const AttributedDataset data = load_dataset(cfg, &s.model.config(), Split::train, 0, 0);
  const auto idx = data.attribute_index(cfg.str("attr"));
  if (!idx) throw UsageError("unknown attribute '" + cfg.str("attr") + "'");
  const AttributeVector vec = compute_attribute_vector(data, s.model, *idx);
  CheckpointFile f;
  f.header["kind"] = "attrvec";
  f.header["latent_dim"] = std::to_string(s.model.config().latent());
  store_attribute_vector(f, vec);
  const fs::path path = cfg.str("out");
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  write_checkpoint_file(path, f);
  out << "wrote attribute vector '" << vec.attribute_name << "' (" << vec.with_count << " with, "
      << vec.without_count << " without) to " << path.string() << "\n";
  return exit_ok;
}

int cmd_edit(RunConfig& cfg, std::ostream& out) {
  out << cfg.echo() << std::flush;
  TrainingState s = load_encoder_checkpoint(cfg);
  if (cfg.str("vector").empty()) throw UsageError("--vector is required");
  const CheckpointFile f = read_checkpoint_file(cfg.str("vector"));
  if (f.header.count("kind") == 0 || f.header.at("kind") != "attrvec")
    throw DataError(cfg.str("vector") + " is not an attribute vector file");
  std::vector<std::size_t> indices;
  for (const auto& [name, t] : f.tensors)
    if (name.starts_with("attrvec/")) indices.push_back(std::stoull(name.substr(8)));
  std::optional<AttributeVector> vec;
  for (std::size_t i : indices) {
    AttributeVector v = load_attribute_vector(f, i);
    if (cfg.str("attr").empty() ? indices.size() == 1 : v.attribute_name == cfg.str("attr")) vec = std::move(v);
  }
  if (!vec)
    throw UsageError(cfg.str("attr").empty() ? "vector file holds several vectors; choose one with --attr"
                                             : "unknown attribute '" + cfg.str("attr") + "'");
  const ModelConfig& mc = s.model.config();
  auto [x, attrs] = input_images(cfg, mc);
  const Tensor* a = attrs ? &*attrs : nullptr;
  const Tensor recon = reconstruct_images(s.model, x, a);
  const Tensor edited = edit_images(s.model, x, *vec, cfg.real("alpha"), a);
  const fs::path dir = cfg.str("out");
  ensure_dir(dir);
  const std::string ext = image_ext(mc.channels);
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    write_pnm(dir / numbered("edit_", i, ("_original" + ext).c_str()), image_at(x, i));
    write_pnm(dir / numbered("edit_", i, ("_reconstruction" + ext).c_str()), image_at(recon, i));
    write_pnm(dir / numbered("edit_", i, ("_edited" + ext).c_str()), image_at(edited, i));
  }
  out << "wrote " << x.dim(0) << " edits of '" << vec->attribute_name << "' to " << dir.string() << "\n";
  return exit_ok;
}

int cmd_eval(RunConfig& cfg, std::ostream& out) {
  out << cfg.echo() << std::flush;
  const auto paths = cfg.list("checkpoints");
  if (paths.empty()) throw UsageError("--checkpoints is required");
  std::vector<TrainingState> states;
  for (const auto& p : paths) {
    states.push_back(load_checkpoint(p));
    const ModelConfig& mc = states.back().model.config();
    if (mc.attr_count == 0) throw DataError(p + " is not a conditional model");
    if (mc.resolution != states.front().model.config().resolution ||
        mc.channels != states.front().model.config().channels ||
        mc.attr_count != states.front().model.config().attr_count)
      throw DataError(p + " does not share the image shape and attributes of " + paths.front());
  }
  const ModelConfig& mc = states.front().model.config();

  Regressor reg;
  if (!cfg.str("regressor").empty()) {
    reg = Regressor::from_checkpoint(read_checkpoint_file(cfg.str("regressor")));
  } else if (cfg.flag("train_regressor")) {
    RunConfig rc = cfg;
    rc.values["count"] = cfg.str("regressor_count");
    const AttributedDataset train = load_dataset(rc, &mc, Split::train, 0, 0);
    RegressorConfig rcfg;
    rcfg.steps = cfg.u64("regressor_steps");
    rcfg.scale = cfg.real("regressor_scale");
    rcfg.seed = cfg.u64("seed");
    reg = train_regressor(train, rcfg);
    if (!cfg.str("regressor_out").empty()) write_checkpoint_file(cfg.str("regressor_out"), reg.to_checkpoint());
  } else {
    throw UsageError("pass --regressor or --train-regressor");
  }
  if (reg.attr_count() != mc.attr_count) throw DataError("regressor and models disagree on the attribute count");

  const AttributedDataset test = load_dataset(cfg, &mc, Split::test, 0, 0);
  std::vector<NamedGenerator> gens;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < states.size(); ++i) {
    std::string name = fs::path(paths[i]).stem().string();
    if (name == "checkpoint") name = fs::path(paths[i]).parent_path().filename().string();
    if (name.empty() || seen.count(name)) name += "#" + std::to_string(i);
    seen.insert(name);
    gens.push_back({name, conditional_generator(states[i].model)});
  }
  const ComparisonReport report = compare_models(gens, regressor_predictor(reg), test.attributes,
                                                 cfg.u64("samples"), cfg.u64("runs"), cfg.u64("seed"));
  const fs::path dir = cfg.str("out");
  ensure_dir(dir);
  write_text(dir / "report.csv", report.to_csv());
  write_text(dir / "report.txt", report.to_text());
  out << report.to_text();
  return exit_ok;
}

}  // namespace

bool RunConfig::has(const std::string& key) const { return values.count(key) != 0; }

bool RunConfig::is_explicit(const std::string& key) const {
  return std::find(explicit_keys.begin(), explicit_keys.end(), key) != explicit_keys.end();
}

const std::string& RunConfig::str(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end()) throw UsageError("setting '" + key + "' does not apply to " + command);
  return it->second;
}

std::uint64_t RunConfig::u64(const std::string& key) const {
  const std::string& v = str(key);
  std::uint64_t out = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size() || v.empty())
    throw UsageError(key + " must be a non-negative integer, got '" + v + "'");
  return out;
}

double RunConfig::real(const std::string& key) const {
  try {
    return parse_double(str(key));
  } catch (const UsageError&) {
    throw;
  } catch (const std::invalid_argument&) {
    throw UsageError(key + " must be a number, got '" + str(key) + "'");
  }
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError(key + " must be true or false, got '" + v + "'");
}

std::vector<std::string> RunConfig::list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(str(key));
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string RunConfig::echo() const {
  std::string s = "# vaegan " + command + "\n";
  for (const auto& [k, v] : values) s += k + "=" + v + "\n";
  return s;
}

Preset preset(const std::string& name) {
  if (name == "smoke") return {16, 0.125, 500, 16};
  if (name == "desk") return {32, 0.25, 5000, 32};
  if (name == "paper") return {64, 1.0, std::numeric_limits<std::uint64_t>::max(), 64};
  throw UsageError("unknown preset '" + name + "' (expected smoke, desk, paper)");
}

void finalize_train_config(RunConfig& cfg) {
  TrainMode mode;
  try {
    mode = parse_mode(cfg.str("mode"));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (mode == TrainMode::gan) {
    if (cfg.is_explicit("llike"))
      throw UsageError("--llike does not apply to --mode gan: the GAN has no encoder and no reconstruction term");
    cfg.values.erase("llike");
    if (!cfg.is_explicit("gan_terms")) cfg.values["gan_terms"] = "two";
  } else if (!cfg.is_explicit("llike")) {
    cfg.values["llike"] = mode == TrainMode::vae ? "pixel" : "disl";
  }
  if (mode == TrainMode::vae_frozen_dis && !cfg.is_explicit("pretrain_steps"))
    cfg.values["pretrain_steps"] = std::to_string(cfg.u64("steps") / 2);
  train_config(cfg).validate();
}

TrainConfig train_config(const RunConfig& cfg) {
  std::map<std::string, std::string> kv{
      {"mode", cfg.str("mode")},
      {"gamma", cfg.str("gamma")},
      {"learning_rate", cfg.str("lr")},
      {"batch_size", cfg.str("batch")},
      {"max_steps", cfg.str("steps")},
      {"seed", cfg.str("seed")},
      {"gan_terms", cfg.str("gan_terms")},
      {"dec_gan_style", cfg.str("dec_gan_style")},
      {"pretrain_steps", cfg.str("pretrain_steps")},
      {"rms_rho", cfg.str("rms_rho")},
      {"rms_eps", cfg.str("rms_eps")},
      {"telemetry_every", cfg.str("telemetry_every")},
      {"checkpoint_every", cfg.str("checkpoint_every")},
      {"time_budget_seconds", cfg.str("time_budget")},
  };
  if (cfg.has("llike")) kv["llike"] = cfg.str("llike");
  try {
    return TrainConfig::from_key_values(kv);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

SyntheticSpec test_split(SyntheticSpec spec) {
  spec.split = Split::test;
  spec.seed = derive_seed(spec.seed, 0x7e57);
  return spec;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"VAE/GAN training and evaluation with a learned similarity metric", "vaegan"};
  app.require_subcommand(1, 1);
  std::map<std::string, std::string> config_paths;
  std::map<std::string, std::map<std::string, std::string>> singles;
  std::map<std::string, std::map<std::string, std::vector<std::string>>> multis;
  std::map<std::string, std::map<std::string, bool>> flags;
  std::map<std::string, std::map<std::string, CLI::Option*>> options;

  for (const auto& c : kCommands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_paths[c.name], "key=value configuration file");
    for (const auto& k : kKeys) {
      if (!(k.commands & c.id)) continue;
      const std::string f = flag_name(k.key);
      CLI::Option* o = nullptr;
      switch (k.arity) {
        case Arity::single: o = sub->add_option(f, singles[c.name][k.key], k.help); break;
        case Arity::multi: o = sub->add_option(f, multis[c.name][k.key], k.help)->delimiter(','); break;
        case Arity::flag: o = sub->add_flag(f, flags[c.name][k.key], k.help); break;
      }
      options[c.name][k.key] = o;
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? exit_ok : exit_usage;
  }

  const CommandDef* chosen = nullptr;
  for (const auto& c : kCommands)
    if (app.got_subcommand(c.name)) chosen = &c;

  RunConfig cfg;
  cfg.command = chosen->name;
  try {
    cfg.values = defaults(chosen->id);
    std::map<std::string, std::string> from_file;
    if (!config_paths[cfg.command].empty()) {
      for (const auto& [k, v] : parse_key_values(read_text(config_paths[cfg.command]))) {
        const bool known = std::any_of(std::begin(kKeys), std::end(kKeys), [&](const KeyDef& d) {
          return d.key == k && (d.commands & chosen->id);
        });
        if (!known)
          throw UsageError("config key '" + k + "' does not apply to " + cfg.command);
        from_file[k] = v;
      }
    }
    std::map<std::string, std::string> from_flags;
    for (const auto& [key, opt] : options[cfg.command]) {
      if (opt->count() == 0) continue;
      if (singles[cfg.command].count(key)) from_flags[key] = singles[cfg.command][key];
      else if (multis[cfg.command].count(key)) from_flags[key] = join(multis[cfg.command][key]);
      else from_flags[key] = flags[cfg.command][key] ? "true" : "false";
    }
    if (chosen->id == c_train) {
      std::string name = cfg.values["preset"];
      if (from_file.count("preset")) name = from_file["preset"];
      if (from_flags.count("preset")) name = from_flags["preset"];
      const Preset p = preset(name);
      cfg.values["preset"] = name;
      cfg.values["res"] = std::to_string(p.resolution);
      cfg.values["scale"] = format_double(p.scale);
      cfg.values["steps"] = std::to_string(p.steps);
      cfg.values["batch"] = std::to_string(p.batch);
    }
    for (const auto* layer : {&from_file, &from_flags})
      for (const auto& [k, v] : *layer) {
        cfg.values[k] = v;
        if (!cfg.is_explicit(k)) cfg.explicit_keys.push_back(k);
      }

    switch (chosen->id) {
      case c_train: return cmd_train(cfg, out);
      case c_sample: return cmd_sample(cfg, out);
      case c_reconstruct: return cmd_reconstruct(cfg, out);
      case c_attrvec: return cmd_attrvec(cfg, out);
      case c_edit: return cmd_edit(cfg, out);
      case c_eval: return cmd_eval(cfg, out);
    }
  } catch (const NumericalError& e) {
    err << "vaegan " << cfg.command << ": numerical failure: " << e.what() << "\n";
    return exit_numerical;
  } catch (const UsageError& e) {
    err << "vaegan " << cfg.command << ": " << e.what() << "\n";
    return exit_usage;
  } catch (const DataError& e) {
    err << "vaegan " << cfg.command << ": " << e.what() << "\n";
    return exit_data;
  } catch (const CheckpointError& e) {
    err << "vaegan " << cfg.command << ": " << e.what() << "\n";
    return exit_data;
  } catch (const ShapeError& e) {
    err << "vaegan " << cfg.command << ": " << e.what() << "\n";
    return exit_data;
  } catch (const std::invalid_argument& e) {
    err << "vaegan " << cfg.command << ": " << e.what() << "\n";
    return exit_usage;
  } catch (const std::exception& e) {
    err << "vaegan " << cfg.command << ": " << e.what() << "\n";
    return exit_data;
  }
  return exit_usage;
}

}  // namespace vaegan
