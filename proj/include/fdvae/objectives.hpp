#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fdvae/corpus.hpp"
#include "fdvae/layers.hpp"
#include "fdvae/model.hpp"
#include "fdvae/rng.hpp"
#include "fdvae/tensor.hpp"

namespace fdvae {

/// Linear KL warm-up: β(t) = min(t / warmup_steps, 1).
struct AnnealSchedule {
  std::size_t warmup_steps = 1;
};

double anneal_weight(std::size_t step, const AnnealSchedule& schedule);

struct KlTerms {
  Tensor per_dim;       // [k × B]: ½(μ² + exp(logvar) − 1 − logvar)
  Tensor per_sentence;  // [1 × B]
};

/// KL(q(z|x) ‖ N(0, I)) in closed form, per dimension and per sentence.
KlTerms kl_diag_gaussian(Tape& tape, const GaussianPosterior& posterior);

/// max(kl, λ). Below the threshold the term is constant and passes no gradient.
Tensor free_bits(Tape& tape, const Tensor& kl, double lambda);

enum class FreeBitsMode {
  total,          // max(mean KL, λ)
  per_dimension,  // Σ_i max(mean KL_i, λ / k)
};

struct FraternalResult {
  Tensor mean_log_likelihood;  // [1 × B]: ½(ll' + ll'')
  Tensor penalty;              // [1 × B]: ‖H' − H''‖² / (steps · d) per sentence
};

/// Two teacher-forced passes with the same z, one under each half of the
/// mask pair. masks[b] covers the (length + 1) decoder inputs of sentence b.
FraternalResult fraternal_pass(Tape& tape, const VaeParams& params, const Tensor& z, const Batch& batch,
                               const std::vector<MaskPair>& masks);
FraternalResult fraternal_pass(Tape& tape, const VaeParams& params, const Tensor& z, const Batch& batch,
                               double keep_prob, Rng& rng);

struct ObjectiveConfig {
  double beta = 1.0;
  double free_bits = 0.0;  // λ; 0 disables
  FreeBitsMode free_bits_mode = FreeBitsMode::total;
  /// Twin passes under complementary word-dropout masks; otherwise a
  /// single unmasked pass and keep_prob is unused.
  bool fraternal = false;
  double alpha = 0.0;  // weight of the hidden-state penalty
  double keep_prob = 1.0;
  /// Autoencoder mode: z = μ, no sampling.
  bool deterministic_z = false;

  void validate() const;
};

/// Everything random in one training step, drawn up front so it can be frozen.
struct StepNoise {
  std::vector<double> eps;      // row-major [k × B]
  std::vector<MaskPair> masks;  // one per sentence
};

StepNoise sample_step_noise(const Batch& batch, std::size_t latent_dim, double keep_prob, Rng& rng);

/// Batch means of every term; `total` carries the graph for backward().
struct LossBreakdown {
  double reconstruction = 0.0;
  double kl_raw = 0.0;
  double kl_effective = 0.0;
  double beta = 0.0;
  double fraternal_penalty = 0.0;
  double total_value = 0.0;
  Tensor total;
};

/// total = reconstruction + β·kl_effective + α·fraternal_penalty, all
/// averaged over the batch.
LossBreakdown elbo_step(Tape& tape, const Batch& batch, const ObjectiveConfig& config,
                        const VaeParams& params, const StepNoise& noise);
LossBreakdown elbo_step(Tape& tape, const Batch& batch, const ObjectiveConfig& config,
                        const VaeParams& params, Rng& rng);

}  // namespace fdvae
