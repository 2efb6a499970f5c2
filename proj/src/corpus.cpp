#include "fdvae/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fdvae/error.hpp"
#include "fdvae/rng.hpp"

namespace fdvae {

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() {
  for (const auto reserved : {special::pad_token, special::unk_token, special::bos_token, special::eos_token}) {
    index_.emplace(std::string(reserved), tokens_.size());
    tokens_.emplace_back(reserved);
  }
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  const std::string_view reserved[] = {special::pad_token, special::unk_token, special::bos_token,
                                       special::eos_token};
  if (tokens.size() < special::count) throw InputError("vocabulary is missing its reserved tokens");
  for (std::size_t i = 0; i < special::count; ++i) {
    if (tokens[i] != reserved[i]) {
      throw InputError("vocabulary id " + std::to_string(i) + " must be " + std::string(reserved[i]) +
                       ", found " + tokens[i]);
    }
  }
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.index_.clear();
  for (TokenId i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], i).second) throw InputError("duplicate vocabulary token " + v.tokens_[i]);
  }
  return v;
}

Vocabulary Vocabulary::build(const std::vector<Sentence>& sentences, std::size_t max_size) {
  if (max_size <= special::count) {
    throw ConfigError("vocabulary size cap must exceed " + std::to_string(special::count));
  }
  if (sentences.empty()) throw InputError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences)
    for (const auto& tok : s) ++counts[tok];
  for (const auto reserved : {special::pad_token, special::unk_token, special::bos_token, special::eos_token})
    counts.erase(std::string(reserved));
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // std::map iteration is lexicographic, so a stable sort keeps ties in that order.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = Vocabulary().tokens();
  for (const auto& [tok, n] : ranked) {
    if (tokens.size() >= max_size) break;
    tokens.push_back(tok);
  }
  return from_tokens(std::move(tokens));
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? special::unk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[id];
}

std::string Vocabulary::hash() const {
  std::uint64_t h = fnv1a("fdvae-vocab");
  for (const auto& t : tokens_) {
    h = fnv1a(t, h);
    h = fnv1a("\n", h);
  }
  return hex64(h);
}

IdSentence Vocabulary::encode(const Sentence& sentence) const {
  IdSentence ids;
  ids.reserve(sentence.size());
  for (const auto& tok : sentence) ids.push_back(id(tok));
  return ids;
}

Sentence Vocabulary::decode(const IdSentence& ids) const {
  Sentence out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(token(i));
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write vocabulary file " + path.string());
  for (const auto& t : tokens_) os << t << '\n';
  if (!os) throw IoError("write failed for " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

// ---------------------------------------------------------------------------
// Text files

std::vector<Sentence> load_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read corpus file " + path.string());
  std::vector<Sentence> out;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream words(line);
    Sentence s;
    for (std::string w; words >> w;) s.push_back(std::move(w));
    if (!s.empty()) out.push_back(std::move(s));
  }
  return out;
}

std::string join_tokens(const Sentence& sentence) {
  std::string out;
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    if (i) out += ' ';
    out += sentence[i];
  }
  return out;
}

void save_text(const std::filesystem::path& path, const std::vector<Sentence>& sentences) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write corpus file " + path.string());
  for (const auto& s : sentences) os << join_tokens(s) << '\n';
  if (!os) throw IoError("write failed for " + path.string());
}

CorpusSplit encode_split(const Vocabulary& vocab, const std::vector<Sentence>& train,
                         const std::vector<Sentence>& dev, const std::vector<Sentence>& test,
                         std::string source) {
  CorpusSplit split;
  split.source = std::move(source);
  auto encode_all = [&](const std::vector<Sentence>& in, std::vector<IdSentence>& out) {
    for (const auto& s : in) {
      if (s.empty()) throw InputError("corpus contains an empty sentence");
      out.push_back(vocab.encode(s));
    }
  };
  encode_all(train, split.train);
  encode_all(dev, split.dev);
  encode_all(test, split.test);
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

void SyntheticSpec::validate() const {
  if (templates < 2) throw ConfigError("synthetic.templates must be at least 2");
  if (segments < 1) throw ConfigError("synthetic.segments must be positive");
  if (words_per_slot < 1) throw ConfigError("synthetic.words_per_slot must be positive");
  if (min_length < segments || max_length < min_length) {
    throw ConfigError("synthetic length range must satisfy segments <= min_length <= max_length");
  }
  if (word_list_size < words_per_slot) {
    throw ConfigError("synthetic.word_list_size must be at least words_per_slot");
  }
  if (train_size == 0) throw ConfigError("synthetic.train_size must be positive");
}

namespace {

std::vector<std::string> make_word_list(std::size_t n, Rng& rng) {
  static constexpr std::string_view onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n",
                                                "p", "r", "s", "t", "v", "z", "sh", "tr"};
  static constexpr std::string_view vowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
  static constexpr std::string_view codas[] = {"", "n", "l", "r", "k", "s", "m", "t"};
  std::set<std::string> seen;
  std::vector<std::string> words;
  while (words.size() < n) {
    std::string w;
    const std::size_t syllables = 1 + rng.below(2);
    for (std::size_t s = 0; s < syllables; ++s) {
      w += onsets[rng.below(std::size(onsets))];
      w += vowels[rng.below(std::size(vowels))];
    }
    w += codas[rng.below(std::size(codas))];
    if (seen.insert(w).second) words.push_back(std::move(w));
  }
  return words;
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const auto words = make_word_list(spec.word_list_size, rng);

  SyntheticCorpus corpus;
  const std::size_t seg_min = (spec.min_length + spec.segments - 1) / spec.segments;
  const std::size_t seg_max = std::max(seg_min, spec.max_length / spec.segments);
  corpus.pools.resize(spec.segments);
  std::set<std::string> used;
  for (std::size_t seg = 0; seg < spec.segments; ++seg) {
    corpus.pools[seg].resize(spec.templates);
    for (std::size_t t = 0; t < spec.templates; ++t) {
      const std::size_t len = seg_min + rng.below(seg_max - seg_min + 1);
      for (std::size_t slot = 0; slot < len; ++slot) {
        std::vector<std::size_t> idx(words.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        // Partial Fisher-Yates: the first words_per_slot entries form the pool.
        std::vector<std::string> pool;
        for (std::size_t i = 0; i < spec.words_per_slot; ++i) {
          std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
          pool.push_back(words[idx[i]]);
          used.insert(words[idx[i]]);
        }
        corpus.pools[seg][t].push_back(std::move(pool));
      }
    }
  }
  corpus.word_union.assign(used.begin(), used.end());

  std::set<Sentence> seen;
  auto draw = [&](std::size_t count, std::vector<Sentence>& out, std::vector<std::vector<std::size_t>>& labels) {
    std::size_t attempts = 0;
    while (out.size() < count) {
      if (++attempts > 100 * count + 1000) {
        throw ConfigError("synthetic grammar cannot produce enough distinct sentences");
      }
      Sentence s;
      std::vector<std::size_t> classes;
      for (std::size_t seg = 0; seg < spec.segments; ++seg) {
        const std::size_t t = rng.below(spec.templates);
        classes.push_back(t);
        for (const auto& pool : corpus.pools[seg][t]) s.push_back(pool[rng.below(pool.size())]);
      }
      if (!seen.insert(s).second) continue;
      out.push_back(std::move(s));
      labels.push_back(std::move(classes));
    }
  };
  draw(spec.train_size, corpus.train, corpus.train_labels);
  draw(spec.dev_size, corpus.dev, corpus.dev_labels);
  draw(spec.test_size, corpus.test, corpus.test_labels);
  return corpus;
}

// ---------------------------------------------------------------------------
// Batching

std::size_t Batch::max_length() const {
  std::size_t m = 0;
  for (const auto& s : sentences) m = std::max(m, s.size());
  return m;
}

TokenId Batch::token(std::size_t t, std::size_t b) const {
  const auto& s = sentences[b];
  return t < s.size() ? s[t] : special::pad;
}

std::vector<double> Batch::length_mask() const {
  const std::size_t n = size(), T = max_length();
  std::vector<double> mask(T * n, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t b = 0; b < n; ++b) mask[t * n + b] = t < sentences[b].size() ? 1.0 : 0.0;
  return mask;
}

std::vector<Batch> make_batches(const std::vector<IdSentence>& sentences, std::size_t batch_size,
                                std::uint64_t seed, std::size_t epoch, bool shuffle) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(sentences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle) {
    Rng rng(seed ^ (0xA24BAED4963EE407ULL * (epoch + 1)));
    rng.shuffle(order);
  }
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    Batch b;
    for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
      b.sentences.push_back(sentences[order[i]]);
      b.source_index.push_back(order[i]);
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace fdvae
