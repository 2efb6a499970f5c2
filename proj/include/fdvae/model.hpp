#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdvae/corpus.hpp"
#include "fdvae/grad_check.hpp"
#include "fdvae/layers.hpp"
#include "fdvae/rng.hpp"
#include "fdvae/tensor.hpp"

namespace fdvae {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;
  std::size_t encoder_hidden = 128;
  std::size_t decoder_hidden = 128;
  std::size_t latent_dim = 32;
  double init_scale = 0.1;

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// q_φ(z|x): embedding, LSTM, and two heads on the final hidden state.
struct EncoderParams {
  Tensor embedding;  // [w × V]
  LstmParams lstm;
  LinearParams mu_head;
  LinearParams logvar_head;
};

/// p_θ(x|z): z initialises (h, c) through two projections and is appended
/// to every input embedding.
struct DecoderParams {
  Tensor embedding;  // [w × V]
  LstmParams lstm;   // input = w + k
  LinearParams h0_proj;
  LinearParams c0_proj;
  LinearParams output;  // [V × d]
};

struct VaeParams {
  ModelConfig config;
  EncoderParams encoder;
  DecoderParams decoder;

  static VaeParams init(const ModelConfig& config, Rng& rng);
  static DecoderParams init_decoder(const ModelConfig& config, Rng& rng);

  /// Named views; the two sets are disjoint and together cover every parameter.
  std::vector<NamedTensor> encoder_tensors() const;
  std::vector<NamedTensor> decoder_tensors() const;
  std::vector<NamedTensor> all_tensors() const;

  /// Deep copy with fresh storage.
  VaeParams clone() const;
  void zero_grad();
};

/// Diagonal Gaussian posterior for a batch: columns are sentences.
struct GaussianPosterior {
  Tensor mu;      // [k × B]
  Tensor logvar;  // [k × B]
};

struct LatentSample {
  Tensor z;                 // [k × B]
  std::vector<double> eps;  // row-major [k × B]
};

GaussianPosterior encode(Tape& tape, const VaeParams& params, const Batch& batch);
GaussianPosterior encode(Tape& tape, const VaeParams& params, const IdSentence& sentence);

/// z = μ + exp(½ logvar) ⊙ eps. Gradient reaches μ and logvar, never eps.
LatentSample reparameterize(Tape& tape, const GaussianPosterior& posterior, std::vector<double> eps);

struct DecodeResult {
  Tensor log_likelihood;            // [1 × B], Σ_t log p(x_{t+1} | z, x_{≤t})
  std::vector<Tensor> hidden;       // one [d × B] per decoder step
  std::vector<double> step_weight;  // row-major [steps × B], 1 for real positions
  std::size_t steps = 0;
};

/// Teacher-forced decoding. Step t reads the start sentinel (t = 0) or gold
/// token t − 1 and predicts gold token t, or the end sentinel at t = length.
/// `input_masks`, when given, holds one vector per sentence of length
/// (sentence length + 1) that multiplies the input embedding of each step.
DecodeResult decode_teacher_forced(Tape& tape, const VaeParams& params, const Tensor& z,
                                   const Batch& batch,
                                   const std::vector<std::vector<double>>* input_masks = nullptr);

/// Single-sentence form: returns (log-likelihood, H[d × (n+1)]).
struct SentenceDecode {
  Tensor log_likelihood;
  Tensor hidden;
};
SentenceDecode decode_teacher_forced(Tape& tape, const VaeParams& params, const Tensor& z,
                                     const IdSentence& sentence, const std::vector<double>* mask = nullptr);

/// Greedy generation for each column of z[k × B]. Stops at the end sentinel
/// (not included in the output) or after max_len tokens.
std::vector<IdSentence> decode_greedy(const VaeParams& params, const Tensor& z, std::size_t max_len);
IdSentence decode_greedy(const VaeParams& params, std::span<const double> z, std::size_t max_len);

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  VaeParams params;
  Vocabulary vocab;
  nlohmann::json config;  // echo of the run configuration
  std::string status = "complete";
};

/// Layout: a magic line, the byte length of a JSON header, the header
/// (model config, config echo, vocabulary and its hash, tensor index), then
/// every tensor's values as little-endian IEEE-754 doubles in index order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fdvae
