#include "fdvae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>

#include "fdvae/error.hpp"

namespace fdvae {

using nlohmann::json;

namespace {

constexpr std::size_t kEncodeChunk = 256;
constexpr std::size_t kColumnBudget = 1024;

Batch make_batch(const std::vector<IdSentence>& sentences, std::size_t begin, std::size_t end) {
  Batch b;
  for (std::size_t i = begin; i < end; ++i) {
    b.sentences.push_back(sentences[i]);
    b.source_index.push_back(i);
  }
  return b;
}

void require_nonempty(const std::vector<IdSentence>& sentences, const char* what) {
  if (sentences.empty()) throw InputError(std::string(what) + ": empty corpus");
  for (const auto& s : sentences)
    if (s.empty()) throw InputError(std::string(what) + ": empty sentence");
}

/// z[k × (C·S)] for sentences [begin, end) of `posteriors`, column i·S + s.
Tensor sample_latents(const PosteriorSet& q, std::size_t begin, std::size_t end, std::size_t samples,
                      Rng& rng) {
  const std::size_t k = q.k, cols = (end - begin) * samples;
  std::vector<double> z(k * cols);
  for (std::size_t i = begin; i < end; ++i) {
    for (std::size_t s = 0; s < samples; ++s) {
      const std::size_t col = (i - begin) * samples + s;
      for (std::size_t j = 0; j < k; ++j) {
        const double sigma = std::exp(0.5 * q.logvar_at(i, j));
        z[j * cols + col] = q.mu_at(i, j) + sigma * rng.normal();
      }
    }
  }
  return Tensor::from({k, cols}, std::move(z));
}

}  // namespace

// ---------------------------------------------------------------------------
// Posteriors

PosteriorSet collect_posteriors(const VaeParams& params, const std::vector<IdSentence>& sentences) {
  require_nonempty(sentences, "collect_posteriors");
  PosteriorSet out;
  out.n = sentences.size();
  out.k = params.config.latent_dim;
  out.mu.resize(out.n * out.k);
  out.logvar.resize(out.n * out.k);
  for (std::size_t begin = 0; begin < out.n; begin += kEncodeChunk) {
    const std::size_t end = std::min(out.n, begin + kEncodeChunk), B = end - begin;
    Tape tape(TapeOptions{.recording = false});
    const auto q = encode(tape, params, make_batch(sentences, begin, end));
    const auto mu = q.mu.data(), lv = q.logvar.data();
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t j = 0; j < out.k; ++j) {
        out.mu[(begin + b) * out.k + j] = mu[j * B + b];
        out.logvar[(begin + b) * out.k + j] = lv[j * B + b];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reconstruction

namespace {

/// Per-sentence lists of per-sample NLL values.
std::vector<std::vector<double>> nll_samples(const VaeParams& params, const std::vector<IdSentence>& sentences,
                                             std::size_t n_samples, Rng& rng) {
  if (n_samples == 0) throw ConfigError("reconstruction_nll: n_samples must be at least 1");
  const PosteriorSet q = collect_posteriors(params, sentences);
  const std::size_t chunk = std::max<std::size_t>(1, kColumnBudget / n_samples);
  std::vector<std::vector<double>> out(sentences.size());
  for (std::size_t begin = 0; begin < sentences.size(); begin += chunk) {
    const std::size_t end = std::min(sentences.size(), begin + chunk);
    const Tensor z = sample_latents(q, begin, end, n_samples, rng);
    Batch batch;
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t s = 0; s < n_samples; ++s) {
        batch.sentences.push_back(sentences[i]);
        batch.source_index.push_back(i);
      }
    Tape tape(TapeOptions{.recording = false});
    const Tensor log_lik = decode_teacher_forced(tape, params, z, batch).log_likelihood;
    const auto ll = log_lik.data();
    for (std::size_t i = begin; i < end; ++i) {
      auto& values = out[i];
      values.resize(n_samples);
      for (std::size_t s = 0; s < n_samples; ++s) values[s] = -ll[(i - begin) * n_samples + s];
    }
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double total = 0.0;
  for (double x : v) total += x;
  return total / static_cast<double>(v.size());
}

}  // namespace

std::vector<double> sample_nll(const VaeParams& params, const IdSentence& sentence, std::size_t n_samples,
                               Rng& rng) {
  return nll_samples(params, {sentence}, n_samples, rng).front();
}

double reconstruction_nll(const VaeParams& params, const IdSentence& sentence, std::size_t n_samples, Rng& rng) {
  return mean_of(sample_nll(params, sentence, n_samples, rng));
}

std::vector<double> corpus_nll(const VaeParams& params, const std::vector<IdSentence>& sentences,
                               std::size_t n_samples, Rng& rng) {
  const auto samples = nll_samples(params, sentences, n_samples, rng);
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(mean_of(s));
  return out;
}

double perplexity_from_nll(const std::vector<double>& nll, const std::vector<IdSentence>& sentences) {
  if (nll.size() != sentences.size()) throw DimensionError("perplexity: nll and corpus sizes differ");
  if (sentences.empty()) throw InputError("perplexity: empty corpus");
  double total = 0.0, words = 0.0;
  for (std::size_t i = 0; i < nll.size(); ++i) {
    total += nll[i];
    words += static_cast<double>(sentences[i].size() + 1);
  }
  return std::exp(total / words);
}

double perplexity(const VaeParams& params, const std::vector<IdSentence>& sentences, std::size_t n_samples,
                  Rng& rng) {
  return perplexity_from_nll(corpus_nll(params, sentences, n_samples, rng), sentences);
}

// ---------------------------------------------------------------------------
// Active units

ActiveUnits active_units(const PosteriorSet& q, double threshold) {
  if (q.n < 2) throw InputError("active_units: need at least 2 sentences, got " + std::to_string(q.n));
  ActiveUnits au;
  au.variances.assign(q.k, 0.0);
  for (std::size_t j = 0; j < q.k; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < q.n; ++i) mean += q.mu_at(i, j);
    mean /= static_cast<double>(q.n);
    double ss = 0.0;
    for (std::size_t i = 0; i < q.n; ++i) {
      const double dev = q.mu_at(i, j) - mean;
      ss += dev * dev;
    }
    au.variances[j] = ss / static_cast<double>(q.n - 1);
    if (au.variances[j] > threshold) ++au.count;
  }
  return au;
}

ActiveUnits active_units(const VaeParams& params, const std::vector<IdSentence>& sentences, double threshold) {
  if (sentences.size() < 2) {
    throw InputError("active_units: need at least 2 sentences, got " + std::to_string(sentences.size()));
  }
  return active_units(collect_posteriors(params, sentences), threshold);
}

// ---------------------------------------------------------------------------
// Mutual information

double log_normal_diag(const double* z, const double* mu, const double* logvar, std::size_t k) {
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  double acc = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double diff = z[j] - mu[j];
    acc += log_2pi + logvar[j] + diff * diff * std::exp(-logvar[j]);
  }
  return -0.5 * acc;
}

MutualInformation mutual_information(const PosteriorSet& q, std::size_t n_z_samples, Rng& rng) {
  if (q.n == 0) throw InputError("mutual_information: empty corpus");
  if (n_z_samples == 0) throw ConfigError("mutual_information: n_z_samples must be at least 1");
  const std::size_t k = q.k, N = q.n;
  const double log_n = std::log(static_cast<double>(N));
  std::vector<double> z(k), log_q(N);
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t s = 0; s < n_z_samples; ++s) {
      for (std::size_t j = 0; j < k; ++j)
        z[j] = q.mu_at(n, j) + std::exp(0.5 * q.logvar_at(n, j)) * rng.normal();
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t m = 0; m < N; ++m) {
        log_q[m] = log_normal_diag(z.data(), &q.mu[m * k], &q.logvar[m * k], k);
        peak = std::max(peak, log_q[m]);
      }
      double acc = 0.0;
      for (double v : log_q) acc += std::exp(v - peak);
      const double log_aggregate = peak + (std::log(acc) - log_n);
      total += log_q[n] - log_aggregate;
    }
  }
  MutualInformation mi;
  mi.raw = total / static_cast<double>(N * n_z_samples);
  mi.clamped = mi.raw < 0.0;
  mi.value = mi.clamped ? 0.0 : mi.raw;
  return mi;
}

MutualInformation mutual_information(const VaeParams& params, const std::vector<IdSentence>& sentences,
                                     std::size_t n_z_samples, Rng& rng) {
  return mutual_information(collect_posteriors(params, sentences), n_z_samples, rng);
}

// ---------------------------------------------------------------------------
// BLEU

BleuStats& BleuStats::operator+=(const BleuStats& other) {
  if (other.max_n != max_n) throw ContractError("bleu: cannot pool statistics with different max_n");
  for (std::size_t i = 0; i < matches.size(); ++i) {
    matches[i] += other.matches[i];
    totals[i] += other.totals[i];
    reference_totals[i] += other.reference_totals[i];
  }
  hypothesis_length += other.hypothesis_length;
  reference_length += other.reference_length;
  return *this;
}

template <typename Token>
BleuStats bleu_stats(const std::vector<Token>& reference, const std::vector<Token>& hypothesis, std::size_t max_n) {
  if (reference.empty()) throw InputError("bleu: empty reference");
  if (max_n == 0 || max_n > 8) throw ConfigError("bleu: max_n must lie in [1, 8]");
  BleuStats st;
  st.max_n = max_n;
  st.hypothesis_length = hypothesis.size();
  st.reference_length = reference.size();
  for (std::size_t n = 1; n <= max_n; ++n) {
    std::map<std::vector<Token>, std::size_t> ref_counts, hyp_counts;
    for (std::size_t i = 0; i + n <= reference.size(); ++i)
      ++ref_counts[std::vector<Token>(reference.begin() + i, reference.begin() + i + n)];
    for (std::size_t i = 0; i + n <= hypothesis.size(); ++i)
      ++hyp_counts[std::vector<Token>(hypothesis.begin() + i, hypothesis.begin() + i + n)];
    std::size_t matched = 0, total = 0;
    for (const auto& [gram, count] : hyp_counts) {
      total += count;
      const auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matched += std::min(count, it->second);
    }
    st.matches[n - 1] = matched;
    st.totals[n - 1] = total;
    st.reference_totals[n - 1] = reference.size() >= n ? reference.size() - n + 1 : 0;
  }
  return st;
}

double bleu_from_stats(const BleuStats& st) {
  if (st.hypothesis_length == 0) return 0.0;
  double log_sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t n = 0; n < st.max_n; ++n) {
    if (st.totals[n] == 0 && st.reference_totals[n] == 0) continue;
    ++orders;
    const double p = st.matches[n] == 0
                         ? kBleuEpsilon
                         : static_cast<double>(st.matches[n]) / static_cast<double>(st.totals[n]);
    log_sum += std::log(p);
  }
  const double hyp = static_cast<double>(st.hypothesis_length);
  const double ref = static_cast<double>(st.reference_length);
  const double brevity = hyp < ref ? std::exp(1.0 - ref / hyp) : 1.0;
  return std::clamp(brevity * std::exp(log_sum / static_cast<double>(orders)), 0.0, 1.0);
}

template <typename Token>
double bleu(const std::vector<Token>& reference, const std::vector<Token>& hypothesis, std::size_t max_n) {
  return bleu_from_stats(bleu_stats(reference, hypothesis, max_n));
}

template <typename Token>
double corpus_bleu(const std::vector<std::vector<Token>>& references,
                   const std::vector<std::vector<Token>>& hypotheses, std::size_t max_n) {
  if (references.size() != hypotheses.size()) {
    throw DimensionError("corpus_bleu: " + std::to_string(references.size()) + " references vs " +
                         std::to_string(hypotheses.size()) + " hypotheses");
  }
  if (references.empty()) throw InputError("corpus_bleu: no sentence pairs");
  BleuStats pooled;
  pooled.max_n = max_n;
  for (std::size_t i = 0; i < references.size(); ++i) pooled += bleu_stats(references[i], hypotheses[i], max_n);
  return bleu_from_stats(pooled);
}

template BleuStats bleu_stats(const std::vector<TokenId>&, const std::vector<TokenId>&, std::size_t);
template BleuStats bleu_stats(const std::vector<std::string>&, const std::vector<std::string>&, std::size_t);
template double bleu(const std::vector<TokenId>&, const std::vector<TokenId>&, std::size_t);
template double bleu(const std::vector<std::string>&, const std::vector<std::string>&, std::size_t);
template double corpus_bleu(const std::vector<std::vector<TokenId>>&, const std::vector<std::vector<TokenId>>&,
                            std::size_t);
template double corpus_bleu(const std::vector<std::vector<std::string>>&,
                            const std::vector<std::vector<std::string>>&, std::size_t);

// ---------------------------------------------------------------------------
// Report

void MetricsConfig::validate() const {
  if (nll_samples == 0) throw ConfigError("metrics nll_samples must be at least 1");
  if (!(au_threshold >= 0.0)) throw ConfigError("metrics au_threshold must be non-negative");
  if (mi_samples == 0) throw ConfigError("metrics mi_samples must be at least 1");
  if (bleu_max_n == 0 || bleu_max_n > 8) throw ConfigError("metrics bleu_max_n must lie in [1, 8]");
  if (max_decode_length == 0) throw ConfigError("metrics max_decode_length must be positive");
}

void to_json(json& j, const MetricsConfig& c) {
  j = json{{"nll_samples", c.nll_samples},   {"au_threshold", c.au_threshold},
           {"mi_samples", c.mi_samples},     {"mi_max_sentences", c.mi_max_sentences},
           {"bleu_max_n", c.bleu_max_n},     {"max_decode_length", c.max_decode_length}};
}

void from_json(const json& j, MetricsConfig& c) {
  if (!j.is_object()) throw ConfigError("metrics config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "nll_samples" && key != "au_threshold" && key != "mi_samples" && key != "mi_max_sentences" &&
        key != "bleu_max_n" && key != "max_decode_length") {
      throw ConfigError("unknown metrics config field '" + key + "'");
    }
  }
  auto field = [&](const char* key, auto& target) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(target);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("metrics config field '") + key + "': " + e.what());
    }
  };
  field("nll_samples", c.nll_samples);
  field("au_threshold", c.au_threshold);
  field("mi_samples", c.mi_samples);
  field("mi_max_sentences", c.mi_max_sentences);
  field("bleu_max_n", c.bleu_max_n);
  field("max_decode_length", c.max_decode_length);
}

nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["nll"] = r.nll;
  j["ppl"] = r.ppl;
  j["au"] = r.au;
  j["au_variances"] = r.au_variances;
  j["mi"] = r.mi;
  j["mi_raw"] = r.mi_raw;
  j["mi_clamped"] = r.mi_clamped;
  j["bleu"] = r.bleu;
  j["n_sentences"] = r.n_sentences;
  j["n_words"] = r.n_words;
  nlohmann::ordered_json cfg;
  cfg["nll_samples"] = r.config.nll_samples;
  cfg["au_threshold"] = r.config.au_threshold;
  cfg["mi_samples"] = r.config.mi_samples;
  cfg["mi_max_sentences"] = r.config.mi_max_sentences;
  cfg["bleu_max_n"] = r.config.bleu_max_n;
  cfg["max_decode_length"] = r.config.max_decode_length;
  j["config"] = cfg;
  return j;
}

std::string table_header() {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-16s %9s %9s %4s %7s %7s", "model", "NLL", "PPL", "AU", "MI", "BLEU");
  return buf;
}

std::string table_row(const MetricsReport& r, const std::string& label) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-16s %9.2f %9.2f %4zu %7.3f %7.2f", label.empty() ? "-" : label.c_str(), r.nll,
                r.ppl, r.au, r.mi, 100.0 * r.bleu);
  return buf;
}

std::vector<IdSentence> reconstruct(const VaeParams& params, const std::vector<IdSentence>& sentences,
                                    std::size_t max_len, Rng& rng) {
  const PosteriorSet q = collect_posteriors(params, sentences);
  std::vector<IdSentence> out;
  out.reserve(sentences.size());
  for (std::size_t begin = 0; begin < q.n; begin += kEncodeChunk) {
    const std::size_t end = std::min(q.n, begin + kEncodeChunk);
    for (auto& s : decode_greedy(params, sample_latents(q, begin, end, 1, rng), max_len)) out.push_back(std::move(s));
  }
  return out;
}

MetricsReport evaluate(const std::vector<IdSentence>& corpus, const VaeParams& params, const MetricsConfig& config,
                       Rng& rng) {
  config.validate();
  require_nonempty(corpus, "evaluate");
  Rng nll_rng = rng.fork(1);
  Rng mi_rng = rng.fork(2);
  Rng bleu_rng = rng.fork(3);

  MetricsReport r;
  r.config = config;
  r.n_sentences = corpus.size();
  for (const auto& s : corpus) r.n_words += s.size() + 1;

  const auto nll = corpus_nll(params, corpus, config.nll_samples, nll_rng);
  r.nll = mean_of(nll);
  r.ppl = perplexity_from_nll(nll, corpus);

  const PosteriorSet q = collect_posteriors(params, corpus);
  const ActiveUnits au = active_units(q, config.au_threshold);
  r.au = au.count;
  r.au_variances = au.variances;

  PosteriorSet mi_set = q;
  if (config.mi_max_sentences > 0 && config.mi_max_sentences < q.n) {
    // evenly strided subset
    mi_set.n = config.mi_max_sentences;
    mi_set.mu.clear();
    mi_set.logvar.clear();
    for (std::size_t i = 0; i < mi_set.n; ++i) {
      const std::size_t src = i * q.n / mi_set.n;
      mi_set.mu.insert(mi_set.mu.end(), q.mu.begin() + src * q.k, q.mu.begin() + (src + 1) * q.k);
      mi_set.logvar.insert(mi_set.logvar.end(), q.logvar.begin() + src * q.k, q.logvar.begin() + (src + 1) * q.k);
    }
  }
  const MutualInformation mi = mutual_information(mi_set, config.mi_samples, mi_rng);
  r.mi = mi.value;
  r.mi_raw = mi.raw;
  r.mi_clamped = mi.clamped;

  r.bleu = corpus_bleu(corpus, reconstruct(params, corpus, config.max_decode_length, bleu_rng), config.bleu_max_n);
  return r;
}

}  // namespace fdvae
