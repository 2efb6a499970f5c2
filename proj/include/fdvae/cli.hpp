#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdvae/corpus.hpp"
#include "fdvae/grad_check.hpp"
#include "fdvae/metrics.hpp"
#include "fdvae/trainer.hpp"

namespace fdvae {

inline constexpr const char* kLibraryVersion = "0.1.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  // selfcheck found a failing check
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
  kExitInternal = 5,
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

/// Everything a run needs, as read from the JSON config file:
///   {"train": {...}, "synthetic": {...}, "corpus": {"dir": ..., "max_vocab": ...}, "metrics": {...}}
/// Every section is optional. Without a corpus dir the synthetic corpus is used.
struct RunConfig {
  TrainConfig train;
  SyntheticSpec synthetic;
  std::optional<std::filesystem::path> corpus_dir;
  std::size_t max_vocab = 10000;
  MetricsConfig metrics;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

/// Raw text splits plus where they came from.
struct TextCorpus {
  std::vector<Sentence> train, dev, test;
  std::string source;
};

/// train.txt, dev.txt and test.txt from `dir` (dev and test may be absent),
/// or the synthetic corpus when no dir is configured.
TextCorpus load_corpus(const RunConfig& config);

/// FNV-1a over the sentences, one per line.
std::string corpus_hash(const std::vector<Sentence>& sentences);
std::string file_hash(const std::filesystem::path& path);

/// Written next to every artifact set so each output can be traced back.
struct RunManifest {
  std::string command;
  std::uint64_t seed = 0;
  nlohmann::json config;
  nlohmann::json corpus;  // source and per-split hashes
  std::string vocab_hash;
  nlohmann::json artifacts = nlohmann::json::object();  // file name -> content hash
  std::string status = "complete";
  std::string library_version = kLibraryVersion;

  void add_artifact(const std::filesystem::path& file);
};

nlohmann::ordered_json to_json(const RunManifest& m);
void write_manifest(const std::filesystem::path& path, const RunManifest& m);

/// Flags shared by every command, plus per-command extras. Flags override
/// the config file.
struct CommandOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out_dir = "out";
  std::optional<std::filesystem::path> corpus;
  std::optional<std::filesystem::path> checkpoint;

  std::optional<std::size_t> epochs;
  std::optional<double> learning_rate;
  std::optional<double> alpha;
  std::optional<double> keep_prob;
  std::optional<double> free_bits;
  std::optional<std::size_t> pretrain_epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> warmup_steps;
  bool log_wall_time = false;

  std::string split = "test";                 // eval
  std::optional<std::filesystem::path> vocab;  // eval: must match the checkpoint
  std::vector<double> alphas{0.01, 0.1, 0.5, 1.0, 2.0};  // sweep
  std::size_t steps = 5;                       // interpolate
  std::size_t count = 10;                      // sample
  std::optional<std::string> corrupt_op;       // selfcheck fault injection
};

/// Config file, then flag overrides.
RunConfig resolve_config(const CommandOptions& options);

int cmd_train(const CommandOptions& options, std::ostream& out);
int cmd_eval(const CommandOptions& options, std::ostream& out);
int cmd_sweep(const CommandOptions& options, std::ostream& out);
int cmd_interpolate(const CommandOptions& options, std::ostream& out);
int cmd_sample(const CommandOptions& options, std::ostream& out);
int cmd_selfcheck(const CommandOptions& options, std::ostream& out);

/// Runs a command, turning exceptions into the documented exit codes.
int run_guarded(int (*command)(const CommandOptions&, std::ostream&), const CommandOptions& options,
                std::ostream& out, std::ostream& err);

// ---------------------------------------------------------------------------
// Self-check

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string observed;
  std::string expected;
};

/// Gradient of a full elbo_step on a tiny model (V=6, w=4, d=4, k=2) with
/// β=0.5, λ=1, α=0.1 and frozen noise, against central differences.
GradCheckReport elbo_gradient_check(const TapeOptions& analytic_tape = {});

/// Gradient checks, closed-form KL against Monte Carlo, and BLEU oracles.
std::vector<CheckResult> run_selfcheck(const TapeOptions& analytic_tape = {});

OpKind parse_op_kind(const std::string& name);

}  // namespace fdvae
