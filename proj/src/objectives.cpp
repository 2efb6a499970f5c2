#include "fdvae/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "fdvae/error.hpp"

namespace fdvae {

double anneal_weight(std::size_t step, const AnnealSchedule& schedule) {
  if (schedule.warmup_steps == 0) throw ConfigError("anneal warmup_steps must be positive");
  return std::min(static_cast<double>(step) / static_cast<double>(schedule.warmup_steps), 1.0);
}

KlTerms kl_diag_gaussian(Tape& tape, const GaussianPosterior& q) {
  if (q.mu.shape() != q.logvar.shape()) {
    throw DimensionError("kl: mu " + shape_string(q.mu.shape()) + " vs logvar " +
                         shape_string(q.logvar.shape()));
  }
  const Tensor mu = q.mu.rank() == 2 ? q.mu : tape.reshape(q.mu, {q.mu.numel(), 1});
  const Tensor logvar = q.logvar.rank() == 2 ? q.logvar : tape.reshape(q.logvar, {q.logvar.numel(), 1});
  const Tensor inner =
      tape.sub(tape.add_scalar(tape.add(tape.mul(mu, mu), tape.exp(logvar)), -1.0), logvar);
  KlTerms kl;
  kl.per_dim = tape.scale(inner, 0.5);
  kl.per_sentence = tape.sum_rows(kl.per_dim);
  return kl;
}

Tensor free_bits(Tape& tape, const Tensor& kl, double lambda) {
  if (lambda < 0.0) throw ConfigError("free bits threshold must be non-negative");
  return tape.maximum_const(kl, lambda);
}

// ---------------------------------------------------------------------------
// Fraternal dropout

namespace {

/// Per-sentence ‖H' − H''‖² / (steps · d).
Tensor hidden_distance(Tape& tape, const DecodeResult& a, const DecodeResult& b, const Batch& batch) {
  const std::size_t T = a.steps, n = batch.size();
  const std::size_t d = a.hidden.front().rows();
  std::vector<Tensor> diffs;
  diffs.reserve(T);
  for (std::size_t t = 0; t < T; ++t) diffs.push_back(tape.sub(a.hidden[t], b.hidden[t]));
  std::vector<double> weights(T * n);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t bi = 0; bi < n; ++bi) {
      const double steps = static_cast<double>(batch.length(bi) + 1);
      weights[t * n + bi] = a.step_weight[t * n + bi] / (steps * static_cast<double>(d));
    }
  const Tensor diff = tape.concat_columns(diffs);
  const Tensor sq = tape.scale_columns(tape.mul(diff, diff), weights);
  return tape.sum_rows(tape.reshape(tape.sum_rows(sq), {T, n}));
}

std::vector<std::vector<double>> keep_masks(const std::vector<MaskPair>& masks, bool complement) {
  std::vector<std::vector<double>> out;
  out.reserve(masks.size());
  for (const auto& m : masks) out.push_back(complement ? m.complement : m.keep);
  return out;
}

void check_masks(const Batch& batch, const std::vector<MaskPair>& masks) {
  if (masks.size() != batch.size()) {
    throw DimensionError("fraternal: " + std::to_string(masks.size()) + " mask pairs for a batch of " +
                         std::to_string(batch.size()));
  }
}

}  // namespace

FraternalResult fraternal_pass(Tape& tape, const VaeParams& params, const Tensor& z, const Batch& batch,
                               const std::vector<MaskPair>& masks) {
  check_masks(batch, masks);
  const auto keep = keep_masks(masks, false);
  const auto drop = keep_masks(masks, true);
  const DecodeResult first = decode_teacher_forced(tape, params, z, batch, &keep);
  const DecodeResult second = decode_teacher_forced(tape, params, z, batch, &drop);
  FraternalResult r;
  r.mean_log_likelihood = tape.scale(tape.add(first.log_likelihood, second.log_likelihood), 0.5);
  r.penalty = hidden_distance(tape, first, second, batch);
  return r;
}

FraternalResult fraternal_pass(Tape& tape, const VaeParams& params, const Tensor& z, const Batch& batch,
                               double keep_prob, Rng& rng) {
  std::vector<MaskPair> masks;
  for (std::size_t b = 0; b < batch.size(); ++b)
    masks.push_back(sample_mask_pair(batch.length(b) + 1, keep_prob, rng));
  return fraternal_pass(tape, params, z, batch, masks);
}

// ---------------------------------------------------------------------------
// ELBO

void ObjectiveConfig::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
  if (!(free_bits >= 0.0)) throw ConfigError("free_bits must be non-negative");
  if (!(alpha >= 0.0)) throw ConfigError("fraternal alpha must be non-negative, got " + std::to_string(alpha));
  if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) throw ConfigError("keep_prob must lie in [0, 1]");
}

StepNoise sample_step_noise(const Batch& batch, std::size_t latent_dim, double keep_prob, Rng& rng) {
  StepNoise noise;
  noise.eps = rng.normals(latent_dim * batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b)
    noise.masks.push_back(sample_mask_pair(batch.length(b) + 1, keep_prob, rng));
  return noise;
}

LossBreakdown elbo_step(Tape& tape, const Batch& batch, const ObjectiveConfig& config,
                        const VaeParams& params, const StepNoise& noise) {
  config.validate();
  const std::size_t n = batch.size(), k = params.config.latent_dim;
  const double inv_n = 1.0 / static_cast<double>(n);

  const GaussianPosterior q = encode(tape, params, batch);
  const Tensor z = config.deterministic_z ? q.mu : reparameterize(tape, q, noise.eps).z;

  Tensor log_lik;  // [1 × B]
  Tensor penalty;  // scalar, batch mean
  if (config.fraternal && !config.deterministic_z) {
    const auto fr = fraternal_pass(tape, params, z, batch, noise.masks);
    log_lik = fr.mean_log_likelihood;
    penalty = tape.scale(tape.sum(fr.penalty), inv_n);
  } else {
    log_lik = decode_teacher_forced(tape, params, z, batch).log_likelihood;
  }
  const Tensor reconstruction = tape.scale(tape.sum(log_lik), -inv_n);

  const KlTerms kl = kl_diag_gaussian(tape, q);
  const Tensor kl_raw = tape.scale(tape.sum(kl.per_sentence), inv_n);
  Tensor kl_effective = kl_raw;
  if (config.free_bits > 0.0) {
    if (config.free_bits_mode == FreeBitsMode::total) {
      kl_effective = free_bits(tape, kl_raw, config.free_bits);
    } else {
      kl_effective = tape.sum(free_bits(tape, tape.mean_columns(kl.per_dim),
                                        config.free_bits / static_cast<double>(k)));
    }
  }
  const double beta = config.deterministic_z ? 0.0 : config.beta;

  LossBreakdown out;
  out.total = tape.add(reconstruction, tape.scale(kl_effective, beta));
  if (penalty.defined()) out.total = tape.add(out.total, tape.scale(penalty, config.alpha));
  out.reconstruction = reconstruction.item();
  out.kl_raw = kl_raw.item();
  out.kl_effective = kl_effective.item();
  out.beta = beta;
  out.fraternal_penalty = penalty.defined() ? penalty.item() : 0.0;
  out.total_value = out.total.item();
  return out;
}

LossBreakdown elbo_step(Tape& tape, const Batch& batch, const ObjectiveConfig& config,
                        const VaeParams& params, Rng& rng) {
  return elbo_step(tape, batch, config, params,
                   sample_step_noise(batch, params.config.latent_dim, config.keep_prob, rng));
}

}  // namespace fdvae
