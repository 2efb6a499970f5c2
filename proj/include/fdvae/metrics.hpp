#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdvae/corpus.hpp"
#include "fdvae/model.hpp"
#include "fdvae/rng.hpp"

namespace fdvae {

// ---------------------------------------------------------------------------
// Posteriors

/// Posterior parameters for a corpus, one row of k values per sentence.
struct PosteriorSet {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<double> mu;      // row-major [n × k]
  std::vector<double> logvar;  // row-major [n × k]

  double mu_at(std::size_t sentence, std::size_t dim) const { return mu[sentence * k + dim]; }
  double logvar_at(std::size_t sentence, std::size_t dim) const { return logvar[sentence * k + dim]; }
};

PosteriorSet collect_posteriors(const VaeParams& params, const std::vector<IdSentence>& sentences);

// ---------------------------------------------------------------------------
// Reconstruction

/// −log p(x|z) for n_samples draws z ~ q(z|x), teacher forced and unmasked.
std::vector<double> sample_nll(const VaeParams& params, const IdSentence& sentence, std::size_t n_samples,
                               Rng& rng);

/// Mean of sample_nll.
double reconstruction_nll(const VaeParams& params, const IdSentence& sentence, std::size_t n_samples, Rng& rng);

/// reconstruction_nll for every sentence, in order. Draws the same noise as
/// calling reconstruction_nll sentence by sentence with one rng.
std::vector<double> corpus_nll(const VaeParams& params, const std::vector<IdSentence>& sentences,
                               std::size_t n_samples, Rng& rng);

/// exp(Σ nll / Σ (length + 1)), the end sentinel counting as a word.
double perplexity_from_nll(const std::vector<double>& nll, const std::vector<IdSentence>& sentences);
double perplexity(const VaeParams& params, const std::vector<IdSentence>& sentences, std::size_t n_samples,
                  Rng& rng);

// ---------------------------------------------------------------------------
// Active units

struct ActiveUnits {
  std::size_t count = 0;
  std::vector<double> variances;  // per dimension, over the corpus
};

/// Sample variance (N − 1) of each posterior-mean dimension; dimensions above
/// the threshold are active.
ActiveUnits active_units(const PosteriorSet& posteriors, double threshold = 0.01);
ActiveUnits active_units(const VaeParams& params, const std::vector<IdSentence>& sentences,
                         double threshold = 0.01);

// ---------------------------------------------------------------------------
// Mutual information

struct MutualInformation {
  double value = 0.0;  // clamped at 0
  double raw = 0.0;
  bool clamped = false;
};

/// Mean over sentences n and draws z ~ q(z|x_n) of log q(z|x_n) − log q̄(z),
/// where q̄ is the mixture of every posterior in the set. Equals the
/// KL-to-prior split E[KL(q‖p)] − E[log q̄(z) − log p(z)] in expectation.
/// Bounded above by ln N; exactly 0 when all posteriors coincide.
MutualInformation mutual_information(const PosteriorSet& posteriors, std::size_t n_z_samples, Rng& rng);
MutualInformation mutual_information(const VaeParams& params, const std::vector<IdSentence>& sentences,
                                     std::size_t n_z_samples, Rng& rng);

/// Log density of a diagonal Gaussian at z.
double log_normal_diag(const double* z, const double* mu, const double* logvar, std::size_t k);

// ---------------------------------------------------------------------------
// BLEU

struct BleuStats {
  std::array<std::size_t, 8> matches{};
  std::array<std::size_t, 8> totals{};
  std::array<std::size_t, 8> reference_totals{};
  std::size_t max_n = 4;
  std::size_t hypothesis_length = 0;
  std::size_t reference_length = 0;

  BleuStats& operator+=(const BleuStats& other);
};

inline constexpr double kBleuEpsilon = 1e-9;

/// Clipped n-gram counts for n = 1..max_n (max_n ≤ 8). Throws InputError
/// on an empty reference.
template <typename Token>
BleuStats bleu_stats(const std::vector<Token>& reference, const std::vector<Token>& hypothesis,
                     std::size_t max_n = 4);

/// Geometric mean of the n-gram precisions times the brevity penalty. A
/// precision with no matches counts as kBleuEpsilon. An order for which
/// neither side has any n-grams is left out of the mean, so short
/// sentences still score 1 against themselves.
double bleu_from_stats(const BleuStats& stats);

template <typename Token>
double bleu(const std::vector<Token>& reference, const std::vector<Token>& hypothesis, std::size_t max_n = 4);

/// Counts pooled over all pairs before the precisions are formed.
template <typename Token>
double corpus_bleu(const std::vector<std::vector<Token>>& references,
                   const std::vector<std::vector<Token>>& hypotheses, std::size_t max_n = 4);

// ---------------------------------------------------------------------------
// Report

struct MetricsConfig {
  std::size_t nll_samples = 100;
  double au_threshold = 0.01;
  std::size_t mi_samples = 10;
  /// Sentences used for the aggregate posterior; 0 means the full corpus.
  std::size_t mi_max_sentences = 0;
  std::size_t bleu_max_n = 4;
  std::size_t max_decode_length = 50;

  void validate() const;
};

void to_json(nlohmann::json& j, const MetricsConfig& c);
void from_json(const nlohmann::json& j, MetricsConfig& c);

struct MetricsReport {
  double nll = 0.0;
  double ppl = 0.0;
  std::size_t au = 0;
  std::vector<double> au_variances;
  double mi = 0.0;
  double mi_raw = 0.0;
  bool mi_clamped = false;
  double bleu = 0.0;
  std::size_t n_sentences = 0;
  std::size_t n_words = 0;
  MetricsConfig config;
};

/// Stable key order so reports diff cleanly.
nlohmann::ordered_json to_json(const MetricsReport& report);

/// "NLL PPL AU MI BLEU" header and one row, BLEU scaled by 100.
std::string table_header();
std::string table_row(const MetricsReport& report, const std::string& label = "");

/// NLL and PPL from the sampled reconstruction, AU and MI from the
/// posteriors, BLEU from greedy decoding of one z ~ q(z|x) per sentence.
MetricsReport evaluate(const std::vector<IdSentence>& corpus, const VaeParams& params,
                       const MetricsConfig& config, Rng& rng);

/// Greedy reconstructions used for BLEU, one sampled z per sentence.
std::vector<IdSentence> reconstruct(const VaeParams& params, const std::vector<IdSentence>& sentences,
                                    std::size_t max_len, Rng& rng);

}  // namespace fdvae
