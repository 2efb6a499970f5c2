#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fdvae/error.hpp"
#include "fdvae/metrics.hpp"
#include "fdvae/trainer.hpp"

using namespace fdvae;

namespace {

CorpusSplit small_split(std::size_t train_size, std::size_t templates = 4, std::size_t segments = 3) {
  SyntheticSpec spec;
  spec.templates = templates;
  spec.segments = segments;
  spec.train_size = train_size;
  spec.dev_size = 20;
  spec.test_size = 20;
  const auto c = generate_synthetic(spec);
  const auto vocab = Vocabulary::build(c.train, 1000);
  return encode_split(vocab, c.train, c.dev, c.test, "synthetic");
}

TrainConfig small_config(const CorpusSplit& split) {
  TrainConfig c;
  c.model.vocab_size = 0;
  for (const auto* s : {&split.train, &split.dev, &split.test})
    for (const auto& x : *s)
      for (auto id : x) c.model.vocab_size = std::max(c.model.vocab_size, id + 1);
  c.model.embed_dim = 8;
  c.model.encoder_hidden = 12;
  c.model.decoder_hidden = 12;
  c.model.latent_dim = 4;
  c.batch_size = 16;
  c.epochs = 2;
  c.learning_rate = 3e-3;
  c.seed = 5;
  return c;
}

std::vector<double> flatten(const std::vector<NamedTensor>& ts) {
  std::vector<double> out;
  for (const auto& t : ts) out.insert(out.end(), t.tensor.data().begin(), t.tensor.data().end());
  return out;
}

NamedTensor param(std::vector<double> values, std::vector<double> grad) {
  const std::size_t n = values.size();
  Tensor t = Tensor::from({n}, std::move(values), true);
  t.zero_grad();
  std::copy(grad.begin(), grad.end(), t.mutable_grad().begin());
  return {"p", t};
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<NamedTensor> ps{param({1.0, -2.0}, {0.0, 0.0})};
  AdamState state;
  adam_step(ps, state, {});
  EXPECT_EQ(ps[0].tensor[0], 1.0);
  EXPECT_EQ(ps[0].tensor[1], -2.0);
  EXPECT_EQ(state.timestep, 1u);
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  std::vector<NamedTensor> ps{param({0.0, 0.0, 0.0}, {3.0, -0.02, 40.0})};
  AdamState state;
  AdamOptions o;
  o.learning_rate = 0.01;
  adam_step(ps, state, o);
  EXPECT_NEAR(ps[0].tensor[0], -0.01, 1e-8);
  EXPECT_NEAR(ps[0].tensor[1], 0.01, 1e-6);
  EXPECT_NEAR(ps[0].tensor[2], -0.01, 1e-8);
  ASSERT_EQ(state.first_moment.size(), 1u);
  EXPECT_EQ(state.first_moment[0].size(), 3u);
}

TEST(Adam, MinimisesParabola) {
  Tensor x = Tensor::from({1}, {1.0}, true);
  std::vector<NamedTensor> ps{{"x", x}};
  AdamState state;
  AdamOptions o;
  o.learning_rate = 0.1;
  for (int i = 0; i < 50; ++i) {
    x.zero_grad();
    Tape tape;
    tape.backward(tape.sum(tape.mul(x, x)));
    adam_step(ps, state, o);
  }
  EXPECT_LT(std::abs(x[0]), 0.5);
}

TEST(Adam, NonFiniteGradientNamesParameterAndChangesNothing) {
  std::vector<NamedTensor> ps{param({1.0}, {0.5}), param({2.0}, {std::nan("")})};
  ps[1].name = "decoder.output.bias";
  AdamState state;
  try {
    adam_step(ps, state, {});
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("decoder.output.bias"), std::string::npos);
  }
  EXPECT_EQ(ps[0].tensor[0], 1.0);
  EXPECT_EQ(ps[1].tensor[0], 2.0);
  EXPECT_EQ(state.timestep, 0u);
}

TEST(ClipGradients, ScalesToMaxNorm) {
  std::vector<NamedTensor> ps{param({0, 0}, {3.0, 0.0}), param({0}, {4.0})};
  EXPECT_DOUBLE_EQ(clip_gradients(ps, 1.0), 5.0);
  EXPECT_NEAR(ps[0].tensor.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(ps[1].tensor.grad()[0], 0.8, 1e-15);
  std::vector<NamedTensor> small{param({0}, {0.5})};
  clip_gradients(small, 1.0);
  EXPECT_EQ(small[0].tensor.grad()[0], 0.5);
}

TEST(TrainConfig, JsonRoundTripAndUnknownKeys) {
  TrainConfig c;
  c.alpha = 0.5;
  c.free_bits = 2.0;
  c.free_bits_mode = FreeBitsMode::per_dimension;
  c.model.latent_dim = 7;
  nlohmann::json j = c;
  const TrainConfig back = j.get<TrainConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  j["alpah"] = 1.0;
  EXPECT_THROW(j.get<TrainConfig>(), ConfigError);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.keep_prob = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.alpha = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  EXPECT_EQ(c.resolved_warmup(25), 250u);
  c.warmup_steps = 7;
  EXPECT_EQ(c.resolved_warmup(25), 7u);
}

TEST(Train, ZeroLearningRateKeepsInitialisation) {
  const auto split = small_split(60);
  auto c = small_config(split);
  c.epochs = 1;
  c.learning_rate = 0.0;
  const auto init = initial_params(c);
  const auto r = train(split, c);
  EXPECT_EQ(flatten(r.params.all_tensors()), flatten(init.all_tensors()));
}

TEST(Train, SameSeedSameEverything) {
  const auto split = small_split(80);
  auto c = small_config(split);
  const auto a = train(split, c), b = train(split, c);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i)
    EXPECT_EQ(to_json(a.log[i], false).dump(), to_json(b.log[i], false).dump());
  EXPECT_EQ(flatten(a.params.all_tensors()), flatten(b.params.all_tensors()));
  c.seed = 6;
  EXPECT_NE(flatten(train(split, c).params.all_tensors()), flatten(a.params.all_tensors()));
}

TEST(Train, ReconstructionFallsOverFirstEpochs) {
  const auto split = small_split(500);
  auto c = small_config(split);
  c.epochs = 5;
  c.alpha = 0.0;
  const auto r = train(split, c);
  ASSERT_EQ(r.log.size(), 5u);
  for (std::size_t e = 1; e < 5; ++e) EXPECT_LT(r.log[e].reconstruction, r.log[e - 1].reconstruction) << e;
  EXPECT_LT(r.log[4].total, r.log[0].total);
}

TEST(Train, LogRecordsFieldsAndWritesNdjson) {
  const auto split = small_split(60);
  auto c = small_config(split);
  c.epochs = 2;
  c.alpha = 0.1;
  c.keep_prob = 0.7;
  const auto r = train(split, c);
  ASSERT_EQ(r.log.size(), 2u);
  for (const auto& l : r.log) {
    EXPECT_EQ(l.phase, "vae");
    EXPECT_GT(l.fraternal_penalty, 0.0);
    EXPECT_GE(l.kl_raw, 0.0);
    EXPECT_TRUE(std::isfinite(l.dev_nelbo));
  }
  const auto path = std::filesystem::temp_directory_path() / "fdvae_test_trainer_log.ndjson";
  write_log(path, r.log, false);
  std::ifstream is(path);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"epoch", "reconstruction", "kl_raw", "kl_effective", "beta", "fraternal_penalty", "total"})
      EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_FALSE(j.contains("wall_time"));
    ++lines;
  }
  EXPECT_EQ(lines, 2u);
}

TEST(Pretrain, ZeroEpochsPassThrough) {
  const auto split = small_split(40);
  auto c = small_config(split);
  c.pretrain_epochs = 0;
  const auto init = initial_params(c);
  const auto out = pretrain_then_reset(split, c, init.clone());
  EXPECT_EQ(flatten(out.all_tensors()), flatten(init.all_tensors()));
}

TEST(Pretrain, ResetKeepsEncoderRedrawsDecoder) {
  const auto split = small_split(60);
  auto c = small_config(split);
  c.pretrain_epochs = 1;
  std::vector<EpochLog> log;
  auto params = initial_params(c);
  const auto out = pretrain_then_reset(split, c, params.clone(), &log);
  ASSERT_FALSE(log.empty());
  EXPECT_EQ(log.front().phase, "pretrain");
  EXPECT_EQ(log.back().event, "decoder_reset");

  // Reset alone on a trained-looking snapshot: encoder bitwise equal, every
  // decoder tensor changed (biases start at zero, so shift everything first).
  auto trained = out.clone();
  for (const auto& t : trained.decoder_tensors()) {
    Tensor c = t.tensor;
    for (auto& v : c.mutable_data()) v += 0.25;
  }
  auto snapshot = trained.clone();
  reset_decoder(snapshot, 99);
  EXPECT_EQ(flatten(snapshot.encoder_tensors()), flatten(trained.encoder_tensors()));
  const auto before = trained.decoder_tensors(), after = snapshot.decoder_tensors();
  for (std::size_t i = 0; i < before.size(); ++i)
    EXPECT_NE(flatten({before[i]}), flatten({after[i]})) << before[i].name;

  // Pretraining did move the encoder.
  EXPECT_NE(flatten(out.encoder_tensors()), flatten(params.encoder_tensors()));
}

TEST(Pretrain, FullRunLogsPhaseBoundary) {
  const auto split = small_split(60);
  auto c = small_config(split);
  c.pretrain_epochs = 1;
  c.epochs = 1;
  const auto r = train(split, c);
  bool saw_reset = false, saw_vae = false;
  for (const auto& l : r.log) {
    saw_reset = saw_reset || l.event == "decoder_reset";
    saw_vae = saw_vae || l.phase == "vae";
  }
  EXPECT_TRUE(saw_reset);
  EXPECT_TRUE(saw_vae);
}

TEST(Pretrain, EncoderSeparatesTemplateClasses) {
  SyntheticSpec spec;
  spec.templates = 2;
  spec.segments = 1;
  spec.train_size = 300;
  spec.dev_size = 20;
  spec.test_size = 0;
  const auto corpus = generate_synthetic(spec);
  const auto vocab = Vocabulary::build(corpus.train, 1000);
  const auto split = encode_split(vocab, corpus.train, corpus.dev, {}, "synthetic");
  auto c = small_config(split);
  c.pretrain_epochs = 3;
  const auto params = pretrain_then_reset(split, c, initial_params(c));
  const auto post = collect_posteriors(params, split.train);

  // Mean silhouette over the two classes, Euclidean distance between means.
  const std::size_t n = post.n, k = post.k;
  auto dist = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += std::pow(post.mu_at(a, i) - post.mu_at(b, i), 2);
    return std::sqrt(s);
  };
  double total = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    double same = 0.0, other = 0.0;
    std::size_t n_same = 0, n_other = 0;
    for (std::size_t b = 0; b < n; ++b) {
      if (a == b) continue;
      if (corpus.train_labels[a][0] == corpus.train_labels[b][0]) {
        same += dist(a, b);
        ++n_same;
      } else {
        other += dist(a, b);
        ++n_other;
      }
    }
    const double ai = same / n_same, bi = other / n_other;
    total += (bi - ai) / std::max(ai, bi);
  }
  EXPECT_GT(total / n, 0.0);
}

TEST(Train, EmptySplitRejected) {
  CorpusSplit empty;
  TrainConfig c;
  c.model.vocab_size = 10;
  EXPECT_THROW(train(empty, c), InputError);
}
