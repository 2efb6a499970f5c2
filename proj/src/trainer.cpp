#include "fdvae/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "fdvae/error.hpp"

namespace fdvae {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(free_bits >= 0.0)) throw ConfigError("free_bits must be non-negative");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) throw ConfigError("keep_prob must lie in [0, 1]");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be non-negative");
}

std::size_t TrainConfig::resolved_warmup(std::size_t batches_per_epoch) const {
  return warmup_steps > 0 ? warmup_steps : std::max<std::size_t>(1, 10 * batches_per_epoch);
}

ObjectiveConfig TrainConfig::objective(double beta) const {
  ObjectiveConfig o;
  o.beta = beta;
  o.free_bits = free_bits;
  o.free_bits_mode = free_bits_mode;
  o.fraternal = alpha > 0.0;
  o.alpha = alpha;
  o.keep_prob = keep_prob;
  return o;
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"model", c.model},
           {"learning_rate", c.learning_rate},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_eps", c.adam_eps},
           {"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"warmup_steps", c.warmup_steps},
           {"free_bits", c.free_bits},
           {"free_bits_mode", c.free_bits_mode == FreeBitsMode::total ? "total" : "per_dimension"},
           {"alpha", c.alpha},
           {"keep_prob", c.keep_prob},
           {"pretrain_epochs", c.pretrain_epochs},
           {"clip_norm", c.clip_norm},
           {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  static const std::set<std::string> known = {
      "model",     "learning_rate", "adam_beta1", "adam_beta2",      "adam_eps",  "batch_size",
      "epochs",    "warmup_steps",  "free_bits",  "free_bits_mode",  "alpha",     "keep_prob",
      "pretrain_epochs", "clip_norm", "seed"};
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown training config field '" + key + "'");
  }
  auto field = [&](const char* key, auto& target) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(target);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("training config field '") + key + "': " + e.what());
    }
  };
  field("model", c.model);
  field("learning_rate", c.learning_rate);
  field("adam_beta1", c.adam_beta1);
  field("adam_beta2", c.adam_beta2);
  field("adam_eps", c.adam_eps);
  field("batch_size", c.batch_size);
  field("epochs", c.epochs);
  field("warmup_steps", c.warmup_steps);
  field("free_bits", c.free_bits);
  if (j.contains("free_bits_mode")) {
    const auto mode = j.at("free_bits_mode").get<std::string>();
    if (mode == "total") {
      c.free_bits_mode = FreeBitsMode::total;
    } else if (mode == "per_dimension") {
      c.free_bits_mode = FreeBitsMode::per_dimension;
    } else {
      throw ConfigError("training config field 'free_bits_mode' must be total or per_dimension");
    }
  }
  field("alpha", c.alpha);
  field("keep_prob", c.keep_prob);
  field("pretrain_epochs", c.pretrain_epochs);
  field("clip_norm", c.clip_norm);
  field("seed", c.seed);
}

// ---------------------------------------------------------------------------
// Optimizer

void adam_step(std::vector<NamedTensor>& params, AdamState& state, const AdamOptions& o) {
  if (state.first_moment.size() != params.size()) {
    state.first_moment.clear();
    state.second_moment.clear();
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.tensor.numel(), 0.0);
      state.second_moment.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  for (const auto& p : params) {
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in parameter " + p.name);
    }
  }
  ++state.timestep;
  const double t = static_cast<double>(state.timestep);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].tensor.mutable_data();
    const auto grads = params[i].tensor.grad();
    if (grads.size() != values.size()) continue;  // parameter never received a gradient
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t e = 0; e < values.size(); ++e) {
      m[e] = o.beta1 * m[e] + (1.0 - o.beta1) * grads[e];
      v[e] = o.beta2 * v[e] + (1.0 - o.beta2) * grads[e] * grads[e];
      const double m_hat = m[e] / correction1;
      const double v_hat = v[e] / correction2;
      values[e] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.eps);
    }
  }
}

double clip_gradients(std::vector<NamedTensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params)
      for (double& g : p.tensor.mutable_grad()) g *= factor;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Logs

nlohmann::ordered_json to_json(const EpochLog& log, bool include_wall_time) {
  nlohmann::ordered_json j;
  j["phase"] = log.phase;
  j["epoch"] = log.epoch;
  if (!log.event.empty()) {
    j["event"] = log.event;
    return j;
  }
  j["reconstruction"] = log.reconstruction;
  j["kl_raw"] = log.kl_raw;
  j["kl_effective"] = log.kl_effective;
  j["beta"] = log.beta;
  j["fraternal_penalty"] = log.fraternal_penalty;
  j["total"] = log.total;
  j["dev_reconstruction"] = log.dev_reconstruction;
  j["dev_kl"] = log.dev_kl;
  j["dev_nelbo"] = log.dev_nelbo;
  if (include_wall_time) j["wall_time"] = log.wall_time;
  return j;
}

void write_log(const std::filesystem::path& path, const std::vector<EpochLog>& log, bool include_wall_time) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write training log " + path.string());
  for (const auto& rec : log) os << to_json(rec, include_wall_time).dump() << '\n';
  if (!os) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

constexpr std::uint64_t kInitSalt = 0x1;
constexpr std::uint64_t kNoiseSalt = 0x2;
constexpr std::uint64_t kResetSalt = 0x3;
constexpr std::uint64_t kDevSalt = 0x4;
constexpr std::uint64_t kPretrainSalt = 0x5;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  return seed * 0x9E3779B97F4A7C15ULL + salt * 0xBF58476D1CE4E5B9ULL;
}

using Clock = std::chrono::steady_clock;

struct RunningMeans {
  double reconstruction = 0, kl_raw = 0, kl_effective = 0, beta = 0, penalty = 0, total = 0;
  std::size_t count = 0;

  void add(const LossBreakdown& l) {
    reconstruction += l.reconstruction;
    kl_raw += l.kl_raw;
    kl_effective += l.kl_effective;
    beta += l.beta;
    penalty += l.fraternal_penalty;
    total += l.total_value;
    ++count;
  }

  void fill(EpochLog& log) const {
    const double inv = count ? 1.0 / static_cast<double>(count) : 0.0;
    log.reconstruction = reconstruction * inv;
    log.kl_raw = kl_raw * inv;
    log.kl_effective = kl_effective * inv;
    log.beta = beta * inv;
    log.fraternal_penalty = penalty * inv;
    log.total = total * inv;
  }
};

/// Dev-split negative ELBO with one posterior sample per sentence.
void validate_dev(const CorpusSplit& split, const TrainConfig& config, const VaeParams& params,
                  EpochLog& log) {
  if (split.dev.empty()) return;
  Rng rng(derive_seed(config.seed, kDevSalt));
  ObjectiveConfig objective;
  objective.beta = 1.0;
  double recon = 0.0, kl = 0.0;
  std::size_t count = 0;
  for (const auto& batch : make_batches(split.dev, 64, 0, 0, false)) {
    Tape tape(TapeOptions{.recording = false});
    const auto loss = elbo_step(tape, batch, objective, params, rng);
    recon += loss.reconstruction * static_cast<double>(batch.size());
    kl += loss.kl_raw * static_cast<double>(batch.size());
    count += batch.size();
  }
  log.dev_reconstruction = recon / static_cast<double>(count);
  log.dev_kl = kl / static_cast<double>(count);
  log.dev_nelbo = log.dev_reconstruction + log.dev_kl;
}

/// One pass over the training split. Returns false if a non-finite value
/// appeared (parameters are then in an undefined state).
bool run_epoch(const CorpusSplit& split, const TrainConfig& config, VaeParams& params, AdamState& adam,
               Rng& noise_rng, std::size_t epoch, bool pretrain, std::size_t& global_step,
               std::size_t warmup, RunningMeans& means, std::string& error) {
  auto tensors = params.all_tensors();
  const AdamOptions adam_options{config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps};
  const std::uint64_t batch_seed = derive_seed(config.seed, pretrain ? kPretrainSalt : kNoiseSalt);
  for (const auto& batch : make_batches(split.train, config.batch_size, batch_seed, epoch)) {
    ObjectiveConfig objective;
    if (pretrain) {
      objective.deterministic_z = true;
      objective.beta = 0.0;
    } else {
      objective = config.objective(anneal_weight(global_step, AnnealSchedule{warmup}));
    }
    params.zero_grad();
    Tape tape;
    const auto loss = elbo_step(tape, batch, objective, params, noise_rng);
    if (!std::isfinite(loss.total_value)) {
      error = "non-finite loss at epoch " + std::to_string(epoch);
      return false;
    }
    tape.backward(loss.total);
    if (config.clip_norm > 0.0) clip_gradients(tensors, config.clip_norm);
    try {
      adam_step(tensors, adam, adam_options);
    } catch (const TrainingError& e) {
      error = e.what();
      return false;
    }
    means.add(loss);
    if (!pretrain) ++global_step;
  }
  return true;
}

void check_corpus(const CorpusSplit& split, const TrainConfig& config) {
  if (split.train.empty()) throw InputError("training split is empty");
  config.validate();
  config.model.validate();
}

}  // namespace

VaeParams initial_params(const TrainConfig& config) {
  Rng rng(derive_seed(config.seed, kInitSalt));
  return VaeParams::init(config.model, rng);
}

void reset_decoder(VaeParams& params, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kResetSalt));
  params.decoder = VaeParams::init_decoder(params.config, rng);
}

VaeParams pretrain_then_reset(const CorpusSplit& split, const TrainConfig& config, VaeParams params,
                              std::vector<EpochLog>* log, const EpochCallback& on_epoch) {
  check_corpus(split, config);
  if (config.pretrain_epochs == 0) return params;
  AdamState adam;
  Rng noise_rng(derive_seed(config.seed, kPretrainSalt));
  std::size_t step = 0;
  const auto start = Clock::now();
  for (std::size_t epoch = 1; epoch <= config.pretrain_epochs; ++epoch) {
    RunningMeans means;
    std::string error;
    if (!run_epoch(split, config, params, adam, noise_rng, epoch, true, step, 1, means, error)) {
      throw TrainingError("pretraining diverged: " + error);
    }
    EpochLog rec;
    rec.phase = "pretrain";
    rec.epoch = epoch;
    means.fill(rec);
    validate_dev(split, config, params, rec);
    rec.wall_time = std::chrono::duration<double>(Clock::now() - start).count();
    if (log) log->push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  reset_decoder(params, config.seed);
  EpochLog boundary;
  boundary.phase = "pretrain";
  boundary.epoch = config.pretrain_epochs;
  boundary.event = "decoder_reset";
  if (log) log->push_back(boundary);
  if (on_epoch) on_epoch(boundary);
  return params;
}

TrainResult train(const CorpusSplit& split, const TrainConfig& config, const EpochCallback& on_epoch) {
  check_corpus(split, config);
  TrainResult result;
  VaeParams params = initial_params(config);
  params = pretrain_then_reset(split, config, std::move(params), &result.log, on_epoch);

  const std::size_t batches_per_epoch = (split.train.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t warmup = config.resolved_warmup(batches_per_epoch);
  AdamState adam;
  Rng noise_rng(derive_seed(config.seed, kNoiseSalt));
  std::size_t global_step = 0;
  VaeParams last_good = params.clone();
  result.best = params.clone();
  double best_score = std::numeric_limits<double>::infinity();
  const auto start = Clock::now();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    RunningMeans means;
    std::string error;
    if (!run_epoch(split, config, params, adam, noise_rng, epoch, false, global_step, warmup, means, error)) {
      result.params = std::move(last_good);
      result.diverged = true;
      result.message = error;
      return result;
    }
    EpochLog rec;
    rec.phase = "vae";
    rec.epoch = epoch;
    means.fill(rec);
    validate_dev(split, config, params, rec);
    rec.wall_time = std::chrono::duration<double>(Clock::now() - start).count();
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);

    last_good = params.clone();
    const bool warmed_up = global_step >= warmup;
    const double score = split.dev.empty() ? rec.total : rec.dev_nelbo;
    if (warmed_up && score < best_score) {
      best_score = score;
      result.best = params.clone();
      result.best_epoch = epoch;
    }
  }
  if (result.best_epoch == 0) {
    result.best = params.clone();
    result.best_epoch = config.epochs;
  }
  result.params = std::move(params);
  return result;
}

}  // namespace fdvae
