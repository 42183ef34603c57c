#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "doctest.h"
#include "support/end_to_end.hpp"
#include "vaegan/checkpoint.hpp"
#include "vaegan/data.hpp"
#include "vaegan/training.hpp"

using namespace vaegan;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model(std::size_t attrs = 0) {
  ModelConfig m;
  m.resolution = 16;
  m.scale = 0.125;
  m.attr_count = attrs;
  return m;
}

TrainConfig tiny_config(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.batch_size = 8;
  c.max_steps = 20;
  c.seed = 3;
  c.llike = mode == TrainMode::vae ? LlikeVariant::pixel : LlikeVariant::dis_l;
  if (mode == TrainMode::gan) c.gan_terms = GanTerms::two;
  if (mode == TrainMode::vae_frozen_dis) c.pretrain_steps = 2;
  return c;
}

const AttributedDataset& corpus() {
  static const AttributedDataset d = [] {
    SyntheticSpec s;
    s.count = 64;
    return generate_synthetic(s);
  }();
  return d;
}

Tensor batch_of(std::size_t first, std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = first + i;
  return corpus().image_batch(idx);
}

bool all_bitwise_zero(const NamedTensors& grads) {
  for (const auto& [name, t] : grads)
    for (double v : t.data())
      if (std::bit_cast<std::uint64_t>(v) != 0) return false;
  return true;
}

bool any_nonzero(const NamedTensors& grads) {
  for (const auto& [name, t] : grads)
    for (double v : t.data())
      if (v != 0.0) return true;
  return false;
}

std::vector<std::uint8_t> snapshot(const TrainingState& s) { return encode_checkpoint(to_checkpoint(s)); }

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("vaegan_training_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("rmsprop examples") {
  Tensor p({1}, {1.0}), g({1}, {1.0}), r({1}, {0.0});
  rmsprop_update(p, g, r, 0.1, 0.9, 0.0);
  CHECK(std::abs(r[0] - 0.1) < 1e-15);
  CHECK(std::abs((1.0 - p[0]) - 0.31623) < 1e-5);
  CHECK(std::abs((1.0 - p[0]) - 0.1 / std::sqrt(0.1)) < 1e-12);

  Tensor q({2}, {0.5, -2.0}), zero({2}, {0.0, 0.0}), acc({2}, {0.4, 1.0});
  rmsprop_update(q, zero, acc, 0.1, 0.9, 1e-8);
  CHECK(q == Tensor({2}, {0.5, -2.0}));
  CHECK(acc[0] == 0.9 * 0.4);
  CHECK(acc[1] == 0.9);
  for (double v : acc.data()) CHECK(v >= 0.0);
}

TEST_CASE("step paths") {
  auto c = tiny_config(TrainMode::vae_frozen_dis);
  c.pretrain_steps = 3;
  CHECK(step_path(c, 0) == StepPath::gan);
  CHECK(step_path(c, 2) == StepPath::gan);
  CHECK(step_path(c, 3) == StepPath::vae_frozen_dis);
  CHECK(step_path(tiny_config(TrainMode::vae), 0) == StepPath::vae);
  CHECK(step_path(tiny_config(TrainMode::vaegan), 9) == StepPath::vaegan);
  CHECK(step_path(tiny_config(TrainMode::gan), 9) == StepPath::gan);
}

TEST_CASE("config validation and key-value round trip") {
  TrainConfig c = tiny_config(TrainMode::vaegan);
  c.gamma = 0.3;
  c.learning_rate = 1.0 / 3.0;
  CHECK_NOTHROW(c.validate());
  CHECK(TrainConfig::from_key_values(c.to_key_values()) == c);

  auto bad = c;
  bad.gamma = 0.0;
  CHECK_THROWS(bad.validate());
  bad = tiny_config(TrainMode::vae);
  bad.llike = LlikeVariant::dis_l;
  CHECK_THROWS(bad.validate());
  bad = tiny_config(TrainMode::gan);
  bad.gan_terms = GanTerms::three;
  CHECK_THROWS(bad.validate());
  bad = tiny_config(TrainMode::vaegan);
  bad.pretrain_steps = 5;
  CHECK_THROWS(bad.validate());
  bad = tiny_config(TrainMode::vaegan);
  bad.batch_size = 1;
  CHECK_THROWS(bad.validate());

  CHECK(parse_mode("vae-disl") == TrainMode::vae_frozen_dis);
  CHECK_THROWS(parse_mode("vaegan2"));
  CHECK(parse_double(format_double(0.1 + 0.2)) == 0.1 + 0.2);

  const ModelConfig m = tiny_model(2);
  CHECK(model_config_from_key_values(model_config_key_values(m)) == m);
}

TEST_CASE("routing yields bitwise zeros") {
  for (auto llike : {LlikeVariant::dis_l, LlikeVariant::pixel})
    for (int seed = 0; seed < 3; ++seed) {
      VaeGan model(tiny_model(), 10 + seed);
      auto cfg = tiny_config(TrainMode::vaegan);
      cfg.llike = llike;
      Rng rng(seed);
      StepGraph sg = build_step_graph(model, cfg, StepPath::vaegan, batch_of(8 * seed, 8), nullptr, rng);
      CHECK(all_bitwise_zero(sg.gradient(sg.l_gan_dis, NetworkId::enc)));
      CHECK(all_bitwise_zero(sg.gradient(sg.l_gan_dec, NetworkId::enc)));
      CHECK(all_bitwise_zero(sg.gradient(sg.l_llike, NetworkId::dis)));
      CHECK(all_bitwise_zero(sg.gradient(sg.l_prior, NetworkId::dec)));
      CHECK(all_bitwise_zero(sg.gradient(sg.l_prior, NetworkId::dis)));
      // The same graph does carry the routed gradients.
      CHECK(any_nonzero(sg.gradient(sg.l_gan_dis, NetworkId::dis)));
      CHECK(any_nonzero(sg.gradient(sg.l_llike, NetworkId::enc)));
      CHECK(any_nonzero(sg.gradient(sg.l_prior, NetworkId::enc)));
    }
}

TEST_CASE("gamma scales only the decoder's likelihood gradient") {
  const Tensor batch = batch_of(0, 8);
  VaeGan base(tiny_model(), 21);
  auto run = [&](double gamma) {
    VaeGan m = base;
    auto cfg = tiny_config(TrainMode::vaegan);
    cfg.gamma = gamma;
    Rng rng(4);
    return compute_step_gradients(m, cfg, StepPath::vaegan, batch, nullptr, rng);
  };
  const StepGradients one = run(1.0), two = run(2.0);
  for (const auto& [name, g] : one.dec_llike) {
    CHECK(bit_identical(g, two.dec_llike.at(name)));
    const Tensor& gan = one.dec_gan.at(name);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      CHECK(one.apply.at(NetworkId::dec).at(name)[i] == g[i] + gan[i]);
      CHECK(two.apply.at(NetworkId::dec).at(name)[i] == 2.0 * g[i] + gan[i]);
    }
  }
  for (auto id : {NetworkId::enc, NetworkId::dis})
    for (const auto& [name, g] : one.apply.at(id)) CHECK(bit_identical(g, two.apply.at(id).at(name)));
}

TEST_CASE("one train_step applies exactly one update to every trained tensor") {
  for (auto mode : {TrainMode::vae, TrainMode::vaegan, TrainMode::gan}) {
    TrainingState s = init_training(tiny_config(mode), tiny_model());
    TrainingState ref = s;
    const Tensor batch = batch_of(8, 8);
    train_step(s, batch);
    CHECK(s.step == 1);

    StepGradients grads = compute_step_gradients(ref.model, ref.config, step_path(ref.config, 0), batch, nullptr, ref.rng);
    for (auto& [id, named] : grads.apply)
      for (auto& [name, g] : named) {
        Tensor p = ref.model.params().network(id).at(name);
        Tensor r = ref.rms.at(id).at(name);
        rmsprop_update(p, g, r, ref.config.learning_rate, ref.config.rms_rho, ref.config.rms_eps);
        CHECK(bit_identical(p, s.model.params().network(id).at(name)));
        CHECK(bit_identical(r, s.rms.at(id).at(name)));
      }
    CHECK(s.rng == ref.rng);
  }
}

TEST_CASE("a zero learning rate leaves parameters bit-identical") {
  auto cfg = tiny_config(TrainMode::vaegan);
  cfg.learning_rate = 0.0;
  TrainingState s = init_training(cfg, tiny_model());
  const ParameterStore before = s.model.params();
  train_step(s, batch_of(0, 8));
  CHECK(s.model.params() == before);
  CHECK(any_nonzero(s.rms.at(NetworkId::dis)));
}

TEST_CASE("mode lattice") {
  const Tensor batch = batch_of(16, 8);
  {
    TrainingState s = init_training(tiny_config(TrainMode::vae), tiny_model());
    const NamedTensors dis = s.model.params().network(NetworkId::dis);
    const auto bn = s.model.dis().bn_states();
    for (int i = 0; i < 3; ++i) train_step(s, batch);
    CHECK(s.model.params().network(NetworkId::dis) == dis);
    for (const auto& [layer, st] : s.model.dis().bn_states()) CHECK(st.running_mean == bn.at(layer).running_mean);
    CHECK_FALSE(any_nonzero(s.rms.at(NetworkId::dis)));
  }
  {
    TrainingState s = init_training(tiny_config(TrainMode::gan), tiny_model());
    const NamedTensors enc = s.model.params().network(NetworkId::enc);
    const NamedTensors dis = s.model.params().network(NetworkId::dis);
    for (int i = 0; i < 3; ++i) train_step(s, batch);
    CHECK(s.model.params().network(NetworkId::enc) == enc);
    CHECK(s.model.params().network(NetworkId::dis) != dis);
  }
  {
    TrainingState s = init_training(tiny_config(TrainMode::vae_frozen_dis), tiny_model());
    const NamedTensors enc = s.model.params().network(NetworkId::enc);
    const NamedTensors dis0 = s.model.params().network(NetworkId::dis);
    train_step(s, batch);
    train_step(s, batch);
    CHECK(s.model.params().network(NetworkId::enc) == enc);
    const NamedTensors dis = s.model.params().network(NetworkId::dis);
    CHECK(dis != dis0);
    const NamedTensors dec = s.model.params().network(NetworkId::dec);
    const auto bn = s.model.dis().bn_states();
    for (int i = 0; i < 3; ++i) train_step(s, batch);
    CHECK(s.model.params().network(NetworkId::dis) == dis);
    for (const auto& [layer, st] : s.model.dis().bn_states()) CHECK(st.running_var == bn.at(layer).running_var);
    CHECK(s.model.params().network(NetworkId::enc) != enc);
    CHECK(s.model.params().network(NetworkId::dec) != dec);
  }
}

TEST_CASE("zero steps leave the initialized state untouched") {
  auto cfg = tiny_config(TrainMode::vaegan);
  cfg.max_steps = 0;
  TrainingState s = init_training(cfg, tiny_model());
  const auto before = snapshot(s);
  int calls = 0;
  train_loop(s, corpus(), {[&](std::uint64_t, const LossBundle&, double) { ++calls; }, {}});
  CHECK(snapshot(s) == before);
  CHECK(calls == 0);
}

TEST_CASE("identical seeds give bitwise-identical telemetry") {
  auto run = [] {
    auto cfg = tiny_config(TrainMode::vaegan);
    cfg.telemetry_every = 1;
    TrainingState s = init_training(cfg, tiny_model());
    std::vector<double> trace;
    train_loop(s, corpus(), {[&](std::uint64_t step, const LossBundle& l, double) {
                               trace.push_back(static_cast<double>(step));
                               for (double v : {l.l_prior, l.l_llike, l.l_gan_dis, l.l_gan_dec}) trace.push_back(v);
                             },
                             {}});
    return trace;
  };
  const auto a = run(), b = run();
  REQUIRE(a.size() == 20 * 5);
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("checkpoint round trip is exact") {
  const fs::path dir = scratch("roundtrip");
  TrainingState s = init_training(tiny_config(TrainMode::vaegan), tiny_model(3));
  s.model.set_feature_tap(s.model.feature_tap() - 1);
  SyntheticSpec spec;
  spec.count = 16;
  const auto data = generate_synthetic(spec);
  const Tensor attrs = data.attributes.slice_rows(0, 8);
  train_step(s, data.image_batch({0, 1, 2, 3, 4, 5, 6, 7}), &attrs);
  save_checkpoint(dir / "a.vgcp", s);
  TrainingState t = load_checkpoint(dir / "a.vgcp");
  CHECK(t.model.params() == s.model.params());
  CHECK(t.rms == s.rms);
  CHECK(t.rng == s.rng);
  CHECK(t.step == s.step);
  CHECK(t.config == s.config);
  CHECK(t.model.config() == s.model.config());
  CHECK(t.model.feature_tap() == s.model.feature_tap());
  for (const auto& [layer, st] : s.model.dis().bn_states())
    CHECK(bit_identical(t.model.dis().bn_states().at(layer).running_var, st.running_var));
  save_checkpoint(dir / "b.vgcp", t);
  auto read = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  CHECK(read(dir / "a.vgcp") == read(dir / "b.vgcp"));
}

TEST_CASE("damaged checkpoints are rejected") {
  TrainingState s = init_training(tiny_config(TrainMode::vae), tiny_model());
  const auto bytes = snapshot(s);
  CHECK(from_checkpoint(decode_checkpoint(bytes)).step == 0);

  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  CHECK_THROWS_WITH_AS(decode_checkpoint(flipped), doctest::Contains("checksum"), CheckpointError);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 9);
  CHECK_THROWS_WITH_AS(decode_checkpoint(truncated), doctest::Contains("truncated"), CheckpointError);

  auto version = bytes;
  version[4] = 2;
  CHECK_THROWS_WITH_AS(decode_checkpoint(version), doctest::Contains("version"), CheckpointError);

  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(magic), CheckpointError);

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), CheckpointError);

  CheckpointFile f = to_checkpoint(s);
  f.tensors.erase(f.tensors.begin());
  CHECK_THROWS_AS(from_checkpoint(f), CheckpointError);
  f = to_checkpoint(s);
  f.tensors.begin()->second = Tensor({1}, 0.0);
  CHECK_THROWS_AS(from_checkpoint(f), CheckpointError);
  f = to_checkpoint(s);
  f.tensors.emplace("stray", Tensor({1}, 0.0));
  CHECK_THROWS_AS(from_checkpoint(f), CheckpointError);
}

TEST_CASE("resuming from a checkpoint reproduces the unbroken run") {
  const fs::path dir = scratch("resume");
  auto cfg = tiny_config(TrainMode::vaegan);
  cfg.max_steps = 100;
  cfg.checkpoint_every = 50;
  TrainingState full = init_training(cfg, tiny_model());
  train_loop(full, corpus(), {{}, [&](const TrainingState& s) {
                                if (s.step == 50) save_checkpoint(dir / "half.vgcp", s);
                              }});
  TrainingState resumed = load_checkpoint(dir / "half.vgcp");
  CHECK(resumed.step == 50);
  train_loop(resumed, corpus());
  CHECK(resumed.step == 100);
  CHECK(snapshot(resumed) == snapshot(full));
}

TEST_CASE("training rejects mismatched data") {
  TrainingState s = init_training(tiny_config(TrainMode::vae), tiny_model(2));
  CHECK_THROWS_AS(train_loop(s, corpus()), DataError);
  TrainingState t = init_training(tiny_config(TrainMode::vae), tiny_model());
  SyntheticSpec big;
  big.resolution = 32;
  big.count = 16;
  CHECK_THROWS_AS(train_loop(t, generate_synthetic(big)), DataError);
}

TEST_CASE("full-step gradients pass finite differences") {
  using testing::LossTerm;
  struct Case {
    StepPath path;
    LossTerm term;
    NetworkId id;
  };
  const Case cases[] = {
      {StepPath::vae, LossTerm::prior, NetworkId::enc},      {StepPath::vae, LossTerm::llike, NetworkId::enc},
      {StepPath::vae, LossTerm::llike, NetworkId::dec},      {StepPath::vaegan, LossTerm::llike, NetworkId::dec},
      {StepPath::vaegan, LossTerm::gan_dis, NetworkId::dis}, {StepPath::vaegan, LossTerm::gan_dec, NetworkId::dec},
  };
  for (int seed = 0; seed < 2; ++seed)
    for (const auto& c : cases) {
      VaeGan model(tiny_model(), 30 + seed);
      auto cfg = tiny_config(c.path == StepPath::vae ? TrainMode::vae : TrainMode::vaegan);
      auto r = testing::check_step_gradient(model, cfg, c.path, batch_of(8 * seed, 4), nullptr, Rng(seed),
                                            c.term, c.id, 3, seed);
      CHECK(r.rel_error < 1e-3);
    }
}
