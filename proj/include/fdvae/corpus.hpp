#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fdvae {

using TokenId = std::size_t;
using Sentence = std::vector<std::string>;
using IdSentence = std::vector<TokenId>;

namespace special {
inline constexpr TokenId pad = 0;
inline constexpr TokenId unk = 1;
inline constexpr TokenId bos = 2;
inline constexpr TokenId eos = 3;
inline constexpr std::size_t count = 4;
inline constexpr std::string_view pad_token = "<pad>";
inline constexpr std::string_view unk_token = "<unk>";
inline constexpr std::string_view bos_token = "<s>";
inline constexpr std::string_view eos_token = "</s>";
}  // namespace special

/// FNV-1a, 64 bit.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 1469598103934665603ULL);
std::string hex64(std::uint64_t value);

/// Token ↔ id bijection. Ids 0..3 are reserved for pad, unknown, start and
/// end; content tokens follow by decreasing frequency, ties lexicographic.
class Vocabulary {
 public:
  Vocabulary();

  static Vocabulary build(const std::vector<Sentence>& sentences, std::size_t max_size);
  /// Tokens in id order, reserved tokens first.
  static Vocabulary from_tokens(std::vector<std::string> tokens);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  /// Hex digest of the id-ordered token list.
  std::string hash() const;

  IdSentence encode(const Sentence& sentence) const;
  Sentence decode(const IdSentence& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// One whitespace-tokenised sentence per line; blank lines are skipped.
std::vector<Sentence> load_text(const std::filesystem::path& path);
void save_text(const std::filesystem::path& path, const std::vector<Sentence>& sentences);
std::string join_tokens(const Sentence& sentence);

struct CorpusSplit {
  std::vector<IdSentence> train;
  std::vector<IdSentence> dev;
  std::vector<IdSentence> test;
  std::string source;
};

CorpusSplit encode_split(const Vocabulary& vocab, const std::vector<Sentence>& train,
                         const std::vector<Sentence>& dev, const std::vector<Sentence>& test,
                         std::string source);

/// Segmented template grammar: a sentence is `segments` consecutive
/// phrases (think subject, verb, object). Each segment independently picks
/// one of `templates` classes; a class owns a fixed phrase length and, per
/// slot, a small pool of words drawn from a shared word list, so pools of
/// different classes overlap. Segment lengths split the sentence length
/// range evenly.
struct SyntheticSpec {
  std::size_t templates = 4;  // classes per segment
  std::size_t segments = 3;
  std::size_t words_per_slot = 2;
  std::size_t min_length = 8;
  std::size_t max_length = 12;
  std::size_t word_list_size = 120;
  std::size_t train_size = 2000;
  std::size_t dev_size = 200;
  std::size_t test_size = 200;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SyntheticCorpus {
  std::vector<Sentence> train, dev, test;
  /// Class of every segment, per sentence.
  std::vector<std::vector<std::size_t>> train_labels, dev_labels, test_labels;
  std::vector<std::vector<std::vector<std::vector<std::string>>>> pools;  // [segment][class][slot] -> words
  std::vector<std::string> word_union;                                   // sorted
};

/// Deterministic per seed; all sentences across the three splits are distinct.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

/// A mini-batch of unpadded sentences plus their padding layout.
struct Batch {
  std::vector<IdSentence> sentences;
  std::vector<std::size_t> source_index;  // positions in the split

  std::size_t size() const { return sentences.size(); }
  std::size_t max_length() const;
  std::size_t length(std::size_t b) const { return sentences[b].size(); }
  /// Token at position t of sentence b, or pad past its end.
  TokenId token(std::size_t t, std::size_t b) const;
  /// 1 where t < length(b), else 0; row-major [max_length × size].
  std::vector<double> length_mask() const;
};

/// Splits `sentences` into batches. With shuffle on, the order is a
/// permutation seeded by (seed, epoch); otherwise the original order.
std::vector<Batch> make_batches(const std::vector<IdSentence>& sentences, std::size_t batch_size,
                                std::uint64_t seed, std::size_t epoch, bool shuffle = true);

}  // namespace fdvae
