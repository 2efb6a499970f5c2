#include <gtest/gtest.h>

#include <cmath>

#include "fdvae/error.hpp"
#include "fdvae/grad_check.hpp"
#include "fdvae/objectives.hpp"

using namespace fdvae;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 6;
  c.embed_dim = 4;
  c.encoder_hidden = 4;
  c.decoder_hidden = 4;
  c.latent_dim = 2;
  c.init_scale = 0.5;
  return c;
}

Batch tiny_batch() {
  Batch b;
  b.sentences = {{4, 5, 4}, {5}, {4, 4, 5, 5}};
  return b;
}

GaussianPosterior posterior(std::vector<double> mu, std::vector<double> lv, bool grad = false) {
  const std::size_t k = mu.size();
  return {Tensor::from({k, 1}, std::move(mu), grad), Tensor::from({k, 1}, std::move(lv), grad)};
}

// log N(z; mu, exp(lv)) per dimension, summed.
double log_gauss(const std::vector<double>& z, const std::vector<double>& mu, const std::vector<double>& lv) {
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i)
    s += -0.5 * (std::log(2.0 * M_PI) + lv[i] + (z[i] - mu[i]) * (z[i] - mu[i]) / std::exp(lv[i]));
  return s;
}

}  // namespace

TEST(Anneal, LinearThenFlat) {
  const AnnealSchedule s{10};
  EXPECT_EQ(anneal_weight(0, s), 0.0);
  EXPECT_EQ(anneal_weight(5, s), 0.5);
  EXPECT_EQ(anneal_weight(10, s), 1.0);
  EXPECT_EQ(anneal_weight(1000, s), 1.0);
  double prev = 0.0;
  for (std::size_t t = 0; t < 30; ++t) {
    EXPECT_GE(anneal_weight(t, s), prev);
    prev = anneal_weight(t, s);
  }
  EXPECT_THROW(anneal_weight(1, AnnealSchedule{0}), ConfigError);
}

TEST(Kl, ClosedFormCases) {
  Tape tape;
  EXPECT_EQ(kl_diag_gaussian(tape, posterior({0, 0, 0}, {0, 0, 0})).per_sentence.item(), 0.0);
  const auto at_one = kl_diag_gaussian(tape, posterior({1, 1, 1}, {0, 0, 0}));
  for (double v : at_one.per_dim.data()) EXPECT_EQ(v, 0.5);
  EXPECT_EQ(at_one.per_sentence.item(), 1.5);
}

TEST(Kl, NonNegativeAndZeroOnlyAtPrior) {
  Rng rng(1);
  Tape tape;
  for (int i = 0; i < 200; ++i) {
    const double m = rng.uniform(-3, 3), l = rng.uniform(-4, 4);
    const double v = kl_diag_gaussian(tape, posterior({m}, {l})).per_sentence.item();
    EXPECT_GT(v, 0.0);
  }
}

TEST(Kl, MatchesMonteCarlo) {
  Rng rng(2);
  Tape tape;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> mu(3), lv(3);
    for (auto& m : mu) m = rng.uniform(-1.5, 1.5);
    for (auto& l : lv) l = rng.uniform(-1.5, 1.0);
    const double closed = kl_diag_gaussian(tape, posterior(mu, lv)).per_sentence.item();
    const std::vector<double> zero(3, 0.0);
    double acc = 0.0;
    const int n = 100000;
    for (int s = 0; s < n; ++s) {
      std::vector<double> z(3);
      for (std::size_t i = 0; i < 3; ++i) z[i] = mu[i] + std::exp(0.5 * lv[i]) * rng.normal();
      acc += log_gauss(z, mu, lv) - log_gauss(z, zero, zero);
    }
    EXPECT_NEAR(acc / n, closed, 0.01 * closed);
  }
}

TEST(Kl, GradientCheck) {
  const auto q = posterior({0.3, -1.2}, {0.4, -0.6}, true);
  const auto report = grad_check([&](Tape& t) { return kl_diag_gaussian(t, q).per_sentence; },
                                 {{"mu", q.mu}, {"logvar", q.logvar}});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(FreeBits, Values) {
  Tape tape;
  EXPECT_EQ(free_bits(tape, Tensor::scalar(10.0), 8.0).item(), 10.0);
  EXPECT_EQ(free_bits(tape, Tensor::scalar(3.0), 8.0).item(), 8.0);
  for (double kl : {0.0, 0.4, 7.0}) EXPECT_EQ(free_bits(tape, Tensor::scalar(kl), 0.0).item(), kl);
  EXPECT_THROW(free_bits(tape, Tensor::scalar(1.0), -1.0), ConfigError);
}

TEST(FreeBits, GradientAtTheKink) {
  for (double kl : {2.0 - 1e-9, 1.0, 0.0}) {
    const Tensor x = Tensor::scalar(kl, true);
    Tape tape;
    tape.backward(free_bits(tape, x, 2.0));
    EXPECT_EQ(x.grad()[0], 0.0) << kl;
  }
  for (double kl : {2.0 + 1e-9, 5.0}) {
    const Tensor x = Tensor::scalar(kl, true);
    Tape tape;
    tape.backward(free_bits(tape, x, 2.0));
    EXPECT_EQ(x.grad()[0], 1.0) << kl;
  }
}

TEST(FreeBits, BelowThresholdNoGradientReachesModel) {
  Rng rng(3);
  const auto p = VaeParams::init(tiny_config(), rng);
  const Batch batch = tiny_batch();
  ObjectiveConfig reconstruction_only;
  reconstruction_only.beta = 0.0;
  ObjectiveConfig clamped;
  clamped.beta = 1.0;
  clamped.free_bits = 1000.0;  // far above any KL here
  Rng n1(4);
  const StepNoise noise = sample_step_noise(batch, 2, 1.0, n1);
  auto grads = [&](const ObjectiveConfig& c) {
    auto q = p.clone();
    Tape tape;
    const auto loss = elbo_step(tape, batch, c, q, noise);
    tape.backward(loss.total);
    std::vector<double> g;
    for (const auto& t : q.all_tensors()) g.insert(g.end(), t.tensor.grad().begin(), t.tensor.grad().end());
    return std::make_pair(loss, g);
  };
  const auto [la, ga] = grads(reconstruction_only);
  const auto [lb, gb] = grads(clamped);
  EXPECT_EQ(lb.kl_effective, 1000.0);
  EXPECT_LT(lb.kl_raw, 1000.0);
  ASSERT_EQ(ga.size(), gb.size());
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_NEAR(ga[i], gb[i], 1e-13);
}

TEST(FreeBits, PerDimensionMode) {
  Rng rng(5);
  const auto p = VaeParams::init(tiny_config(), rng);
  const Batch batch = tiny_batch();
  Rng n1(6);
  const StepNoise noise = sample_step_noise(batch, 2, 1.0, n1);
  ObjectiveConfig c;
  c.free_bits = 4.0;
  c.free_bits_mode = FreeBitsMode::per_dimension;
  Tape tape;
  const auto loss = elbo_step(tape, batch, c, p, noise);
  const auto q = encode(tape, p, batch);
  const auto kl = kl_diag_gaussian(tape, q);
  double expected = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    double m = 0.0;
    for (std::size_t b = 0; b < 3; ++b) m += kl.per_dim.at(i, b) / 3.0;
    expected += std::max(m, 2.0);
  }
  EXPECT_NEAR(loss.kl_effective, expected, 1e-12);
}

TEST(Fraternal, PenaltyMatchesDirectRecomputation) {
  Rng rng(7);
  const auto p = VaeParams::init(tiny_config(), rng);
  const Batch batch = tiny_batch();
  Rng mr(8);
  std::vector<MaskPair> masks;
  for (std::size_t b = 0; b < batch.size(); ++b) masks.push_back(sample_mask_pair(batch.length(b) + 1, 0.5, mr));
  const Tensor z = Tensor::from({2, 3}, {0.2, -0.4, 1.0, 0.7, 0.1, -0.3});
  Tape tape;
  const auto r = fraternal_pass(tape, p, z, batch, masks);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Tensor zb = Tensor::from({2, 1}, {z.at(0, b), z.at(1, b)});
    const auto h1 = decode_teacher_forced(tape, p, zb, batch.sentences[b], &masks[b].keep);
    const auto h2 = decode_teacher_forced(tape, p, zb, batch.sentences[b], &masks[b].complement);
    double sq = 0.0;
    for (std::size_t i = 0; i < h1.hidden.numel(); ++i) sq += std::pow(h1.hidden[i] - h2.hidden[i], 2);
    const double steps = static_cast<double>(batch.length(b) + 1);
    EXPECT_NEAR(r.penalty[b], sq / (steps * 4.0), 1e-12);
    EXPECT_NEAR(r.mean_log_likelihood[b], 0.5 * (h1.log_likelihood.item() + h2.log_likelihood.item()), 1e-12);
  }
}

TEST(Fraternal, SymmetricUnderSwappingMasks) {
  Rng rng(9);
  const auto p = VaeParams::init(tiny_config(), rng);
  const Batch batch = tiny_batch();
  Rng mr(10);
  std::vector<MaskPair> masks, swapped;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    masks.push_back(sample_mask_pair(batch.length(b) + 1, 0.6, mr));
    swapped.push_back({masks.back().complement, masks.back().keep});
  }
  const Tensor z = Tensor::from({2, 3}, {0.5, 0.5, -0.5, 0.1, 0.2, 0.3});
  Tape tape;
  const auto a = fraternal_pass(tape, p, z, batch, masks);
  const auto b = fraternal_pass(tape, p, z, batch, swapped);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(a.penalty[i], b.penalty[i], 1e-15);
    EXPECT_NEAR(a.mean_log_likelihood[i], b.mean_log_likelihood[i], 1e-12);
  }
}

TEST(Fraternal, ZeroDecoderGivesZeroPenalty) {
  Rng rng(11);
  auto p = VaeParams::init(tiny_config(), rng);
  for (const auto& t : p.decoder_tensors()) {
    Tensor c = t.tensor;
    for (auto& v : c.mutable_data()) v = 0.0;
  }
  Rng mr(12);
  Tape tape;
  const auto r = fraternal_pass(tape, p, Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}), tiny_batch(), 0.5, mr);
  for (double v : r.penalty.data()) EXPECT_EQ(v, 0.0);
}

TEST(Fraternal, MaskCountMismatch) {
  Rng rng(13);
  const auto p = VaeParams::init(tiny_config(), rng);
  Tape tape;
  EXPECT_THROW(fraternal_pass(tape, p, Tensor::zeros({2, 3}), tiny_batch(), std::vector<MaskPair>{}),
               DimensionError);
}

TEST(ElboStep, AutoencoderLimitIsPlainNll) {
  Rng rng(14);
  const auto p = VaeParams::init(tiny_config(), rng);
  const Batch batch = tiny_batch();
  Rng nr(15);
  const StepNoise noise = sample_step_noise(batch, 2, 1.0, nr);
  ObjectiveConfig c;
  c.beta = 0.0;
  Tape tape;
  const auto loss = elbo_step(tape, batch, c, p, noise);
  const auto q = encode(tape, p, batch);
  const auto z = reparameterize(tape, q, noise.eps).z;
  const auto ll = decode_teacher_forced(tape, p, z, batch).log_likelihood;
  double nll = 0.0;
  for (double v : ll.data()) nll -= v / 3.0;
  EXPECT_NEAR(loss.total_value, nll, 1e-12);
  EXPECT_EQ(loss.fraternal_penalty, 0.0);
}

TEST(ElboStep, StandardNegativeElbo) {
  Rng rng(16);
  const auto p = VaeParams::init(tiny_config(), rng);
  const Batch batch = tiny_batch();
  Rng nr(17);
  const StepNoise noise = sample_step_noise(batch, 2, 1.0, nr);
  ObjectiveConfig c;
  Tape tape;
  const auto loss = elbo_step(tape, batch, c, p, noise);
  EXPECT_NEAR(loss.total_value, loss.reconstruction + loss.kl_raw, 1e-12);
  EXPECT_LE(loss.reconstruction, loss.total_value);
  EXPECT_GE(loss.kl_raw, 0.0);
}

TEST(ElboStep, TotalDecomposes) {
  Rng rng(18);
  const auto p = VaeParams::init(tiny_config(), rng);
  const Batch batch = tiny_batch();
  Rng nr(19);
  const StepNoise noise = sample_step_noise(batch, 2, 0.7, nr);
  ObjectiveConfig c;
  c.beta = 0.5;
  c.free_bits = 1.0;
  c.fraternal = true;
  c.alpha = 0.3;
  c.keep_prob = 0.7;
  Tape tape;
  const auto loss = elbo_step(tape, batch, c, p, noise);
  EXPECT_NEAR(loss.total_value, loss.reconstruction + 0.5 * loss.kl_effective + 0.3 * loss.fraternal_penalty,
              1e-12);
  EXPECT_GE(loss.kl_effective, 1.0);
  EXPECT_GT(loss.fraternal_penalty, 0.0);

  // α = 0 keeps the twin-mean reconstruction and drops the penalty from the total.
  c.alpha = 0.0;
  Tape t2;
  const auto zero = elbo_step(t2, batch, c, p, noise);
  EXPECT_EQ(zero.reconstruction, loss.reconstruction);
  EXPECT_NEAR(zero.total_value, zero.reconstruction + 0.5 * zero.kl_effective, 1e-12);
}

TEST(ElboStep, DeterministicUnderFrozenNoise) {
  Rng rng(20);
  const auto p = VaeParams::init(tiny_config(), rng);
  const Batch batch = tiny_batch();
  Rng nr(21);
  const StepNoise noise = sample_step_noise(batch, 2, 0.7, nr);
  ObjectiveConfig c;
  c.fraternal = true;
  c.alpha = 0.1;
  c.keep_prob = 0.7;
  Tape a, b;
  EXPECT_EQ(elbo_step(a, batch, c, p, noise).total_value, elbo_step(b, batch, c, p, noise).total_value);
}

TEST(ElboStep, FullConfigGradientCheck) {
  Rng rng(22);
  const auto p = VaeParams::init(tiny_config(), rng);
  const Batch batch = tiny_batch();
  Rng nr(23);
  const StepNoise noise = sample_step_noise(batch, 2, 0.7, nr);
  ObjectiveConfig c;
  c.beta = 0.5;
  c.free_bits = 0.01;  // below the KL so the kl term stays on the smooth branch
  c.fraternal = true;
  c.alpha = 0.1;
  c.keep_prob = 0.7;
  const auto report = grad_check([&](Tape& t) { return elbo_step(t, batch, c, p, noise).total; },
                                 p.all_tensors());
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(ObjectiveConfig, Validation) {
  ObjectiveConfig c;
  c.alpha = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.beta = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.keep_prob = 2.0;
  EXPECT_THROW(c.validate(), ConfigError);
}
