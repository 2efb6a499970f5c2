#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdvae/corpus.hpp"
#include "fdvae/grad_check.hpp"
#include "fdvae/model.hpp"
#include "fdvae/objectives.hpp"

namespace fdvae {

struct TrainConfig {
  ModelConfig model;  // vocab_size is filled in from the corpus
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 16;
  std::size_t epochs = 20;
  /// KL warm-up length in optimizer steps; 0 means ten epochs' worth.
  std::size_t warmup_steps = 0;
  double free_bits = 0.0;  // λ, 0 = off
  FreeBitsMode free_bits_mode = FreeBitsMode::total;
  double alpha = 0.1;  // fraternal weight, 0 = off
  double keep_prob = 0.7;
  std::size_t pretrain_epochs = 0;
  double clip_norm = 0.0;  // global gradient-norm clip, 0 = off
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t resolved_warmup(std::size_t batches_per_epoch) const;
  ObjectiveConfig objective(double beta) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Unknown keys are rejected so typos surface as config errors.
void from_json(const nlohmann::json& j, TrainConfig& c);

struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::size_t timestep = 0;
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update from each parameter's grad buffer. Throws
/// TrainingError naming the parameter when a gradient is not finite; no
/// parameter is modified in that case.
void adam_step(std::vector<NamedTensor>& params, AdamState& state, const AdamOptions& options);

/// Scales all gradients so their joint L2 norm is at most max_norm; returns
/// the norm before clipping.
double clip_gradients(std::vector<NamedTensor>& params, double max_norm);

struct EpochLog {
  std::string phase;  // "pretrain" or "vae"
  std::size_t epoch = 0;
  double reconstruction = 0.0;
  double kl_raw = 0.0;
  double kl_effective = 0.0;
  double beta = 0.0;
  double fraternal_penalty = 0.0;
  double total = 0.0;
  double dev_reconstruction = 0.0;
  double dev_kl = 0.0;
  double dev_nelbo = 0.0;
  double wall_time = 0.0;
  std::string event;  // e.g. "decoder_reset"
};

nlohmann::ordered_json to_json(const EpochLog& log, bool include_wall_time = true);
void write_log(const std::filesystem::path& path, const std::vector<EpochLog>& log,
               bool include_wall_time = true);

struct TrainResult {
  VaeParams params;  // final (or last good, when diverged)
  VaeParams best;    // lowest dev negative ELBO after the KL warm-up
  std::size_t best_epoch = 0;
  std::vector<EpochLog> log;
  bool diverged = false;
  std::string message;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Runs the optional autoencoder pretraining (then decoder reset) and the
/// VAE phase. Fully determined by (split, config).
TrainResult train(const CorpusSplit& split, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Phase 1 trains with z = μ, β = 0 and no fraternal passes for
/// pretrain_epochs; phase 2 redraws every decoder parameter from the
/// initialisation distribution. Encoder parameters are left untouched by
/// the reset.
VaeParams pretrain_then_reset(const CorpusSplit& split, const TrainConfig& config, VaeParams params,
                              std::vector<EpochLog>* log = nullptr, const EpochCallback& on_epoch = {});

/// Fresh parameters for this config (vocab_size must be set).
VaeParams initial_params(const TrainConfig& config);

/// Redraws the decoder in place.
void reset_decoder(VaeParams& params, std::uint64_t seed);

}  // namespace fdvae
