#include "fdvae/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "fdvae/error.hpp"
#include "fdvae/objectives.hpp"

namespace fdvae {

using nlohmann::json;

namespace {

template <typename T>
void read_field(const json& j, const char* section, const char* key, T& target) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(target);
  } catch (const json::exception& e) {
    throw ConfigError(std::string(section) + " field '" + key + "': " + e.what());
  }
}

void reject_unknown(const json& j, const char* section, const std::set<std::string>& known) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown " + std::string(section) + " field '" + key + "'");
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed for " + path.string());
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void to_json(json& j, const SyntheticSpec& s) {
  j = json{{"templates", s.templates},         {"segments", s.segments},
           {"words_per_slot", s.words_per_slot},
           {"min_length", s.min_length},       {"max_length", s.max_length},
           {"word_list_size", s.word_list_size}, {"train_size", s.train_size},
           {"dev_size", s.dev_size},           {"test_size", s.test_size},
           {"seed", s.seed}};
}

void from_json(const json& j, SyntheticSpec& s) {
  reject_unknown(j, "synthetic",
                 {"templates", "segments", "words_per_slot", "min_length", "max_length", "word_list_size", "train_size",
                  "dev_size", "test_size", "seed"});
  read_field(j, "synthetic", "templates", s.templates);
  read_field(j, "synthetic", "segments", s.segments);
  read_field(j, "synthetic", "words_per_slot", s.words_per_slot);
  read_field(j, "synthetic", "min_length", s.min_length);
  read_field(j, "synthetic", "max_length", s.max_length);
  read_field(j, "synthetic", "word_list_size", s.word_list_size);
  read_field(j, "synthetic", "train_size", s.train_size);
  read_field(j, "synthetic", "dev_size", s.dev_size);
  read_field(j, "synthetic", "test_size", s.test_size);
  read_field(j, "synthetic", "seed", s.seed);
}

void to_json(json& j, const RunConfig& c) {
  j = json::object();
  j["train"] = c.train;
  j["synthetic"] = c.synthetic;
  json corpus{{"max_vocab", c.max_vocab}};
  if (c.corpus_dir) corpus["dir"] = c.corpus_dir->generic_string();
  j["corpus"] = corpus;
  j["metrics"] = c.metrics;
}

void from_json(const json& j, RunConfig& c) {
  reject_unknown(j, "config", {"train", "synthetic", "corpus", "metrics"});
  if (j.contains("train")) from_json(j.at("train"), c.train);
  if (j.contains("synthetic")) from_json(j.at("synthetic"), c.synthetic);
  if (j.contains("metrics")) from_json(j.at("metrics"), c.metrics);
  if (j.contains("corpus")) {
    const json& corpus = j.at("corpus");
    reject_unknown(corpus, "corpus", {"dir", "max_vocab"});
    if (corpus.contains("dir")) {
      std::string dir;
      read_field(corpus, "corpus", "dir", dir);
      c.corpus_dir = dir;
    }
    read_field(corpus, "corpus", "max_vocab", c.max_vocab);
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  RunConfig c;
  from_json(j, c);
  return c;
}

TextCorpus load_corpus(const RunConfig& config) {
  TextCorpus out;
  if (config.corpus_dir) {
    const auto& dir = *config.corpus_dir;
    if (!std::filesystem::is_directory(dir)) throw IoError("corpus directory not found: " + dir.string());
    out.train = load_text(dir / "train.txt");
    if (std::filesystem::exists(dir / "dev.txt")) out.dev = load_text(dir / "dev.txt");
    if (std::filesystem::exists(dir / "test.txt")) out.test = load_text(dir / "test.txt");
    out.source = "dir:" + dir.generic_string();
  } else {
    config.synthetic.validate();
    auto syn = generate_synthetic(config.synthetic);
    out.train = std::move(syn.train);
    out.dev = std::move(syn.dev);
    out.test = std::move(syn.test);
    out.source = "synthetic";
  }
  if (out.train.empty()) throw InputError("training split is empty (" + out.source + ")");
  return out;
}

std::string corpus_hash(const std::vector<Sentence>& sentences) {
  std::uint64_t h = fnv1a("");
  for (const auto& s : sentences) h = fnv1a(join_tokens(s) + "\n", h);
  return hex64(h);
}

std::string file_hash(const std::filesystem::path& path) { return hex64(fnv1a(read_file(path))); }

// ---------------------------------------------------------------------------
// Manifest

void RunManifest::add_artifact(const std::filesystem::path& file) {
  artifacts[file.filename().string()] = file_hash(file);
}

nlohmann::ordered_json to_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["library_version"] = m.library_version;
  j["status"] = m.status;
  j["seed"] = m.seed;
  j["config"] = m.config;
  j["corpus"] = m.corpus;
  j["vocab_hash"] = m.vocab_hash;
  j["artifacts"] = m.artifacts;
  return j;
}

void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
  write_text(path, to_json(m).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Commands

RunConfig resolve_config(const CommandOptions& o) {
  RunConfig c = o.config ? load_run_config(*o.config) : RunConfig{};
  if (o.seed) c.train.seed = *o.seed;
  if (o.corpus) c.corpus_dir = *o.corpus;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.learning_rate) c.train.learning_rate = *o.learning_rate;
  if (o.alpha) c.train.alpha = *o.alpha;
  if (o.keep_prob) c.train.keep_prob = *o.keep_prob;
  if (o.free_bits) c.train.free_bits = *o.free_bits;
  if (o.pretrain_epochs) c.train.pretrain_epochs = *o.pretrain_epochs;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.warmup_steps) c.train.warmup_steps = *o.warmup_steps;
  c.train.validate();
  c.metrics.validate();
  return c;
}

namespace {

struct PreparedData {
  TextCorpus text;
  Vocabulary vocab;
  CorpusSplit split;
};

PreparedData prepare_data(const RunConfig& config, const Vocabulary* fixed_vocab = nullptr) {
  PreparedData d;
  d.text = load_corpus(config);
  d.vocab = fixed_vocab ? *fixed_vocab : Vocabulary::build(d.text.train, config.max_vocab);
  d.split = encode_split(d.vocab, d.text.train, d.text.dev, d.text.test, d.text.source);
  return d;
}

json corpus_json(const TextCorpus& text) {
  return json{{"source", text.source},
              {"train", {{"sentences", text.train.size()}, {"hash", corpus_hash(text.train)}}},
              {"dev", {{"sentences", text.dev.size()}, {"hash", corpus_hash(text.dev)}}},
              {"test", {{"sentences", text.test.size()}, {"hash", corpus_hash(text.test)}}}};
}

RunManifest base_manifest(const std::string& command, const RunConfig& config, const PreparedData& data) {
  RunManifest m;
  m.command = command;
  m.seed = config.train.seed;
  m.config = config;
  m.corpus = corpus_json(data.text);
  m.vocab_hash = data.vocab.hash();
  return m;
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

/// The checkpoint's own config echo stands in when no --config is given.
RunConfig config_for_checkpoint(const CommandOptions& o, const Checkpoint& ck) {
  if (o.config) return resolve_config(o);
  RunConfig c;
  if (!ck.config.is_null()) from_json(ck.config, c);
  if (o.seed) c.train.seed = *o.seed;
  if (o.corpus) c.corpus_dir = *o.corpus;
  return c;
}

Checkpoint require_checkpoint(const CommandOptions& o) {
  if (!o.checkpoint) throw ConfigError("--checkpoint is required for this command");
  return load_checkpoint(*o.checkpoint);
}

std::vector<IdSentence>& pick_split(CorpusSplit& split, const std::string& name) {
  if (name == "train") return split.train;
  if (name == "dev") return split.dev;
  if (name == "test") return split.test;
  throw ConfigError("--split must be train, dev or test, got '" + name + "'");
}

std::string sentence_text(const Vocabulary& vocab, const IdSentence& ids) {
  return join_tokens(vocab.decode(ids));
}

void print_epoch(std::ostream& out, const EpochLog& rec) {
  char buf[256];
  if (!rec.event.empty()) {
    std::snprintf(buf, sizeof buf, "[%s %zu] %s", rec.phase.c_str(), rec.epoch, rec.event.c_str());
  } else {
    std::snprintf(buf, sizeof buf, "[%s %zu] rec %.4f kl %.4f beta %.3f frat %.5f total %.4f | dev nelbo %.4f",
                  rec.phase.c_str(), rec.epoch, rec.reconstruction, rec.kl_raw, rec.beta, rec.fraternal_penalty,
                  rec.total, rec.dev_nelbo);
  }
  out << buf << '\n';
}

}  // namespace

int cmd_train(const CommandOptions& o, std::ostream& out) {
  RunConfig config = resolve_config(o);
  const PreparedData data = prepare_data(config);
  config.train.model.vocab_size = data.vocab.size();
  config.train.model.validate();
  ensure_dir(o.out_dir);

  TrainResult result = train(data.split, config.train, [&](const EpochLog& rec) { print_epoch(out, rec); });

  RunManifest manifest = base_manifest("train", config, data);
  const auto vocab_path = o.out_dir / "vocab.txt";
  data.vocab.save(vocab_path);
  manifest.add_artifact(vocab_path);

  Checkpoint final_ck{result.params, data.vocab, json(config), result.diverged ? "diverged" : "complete"};
  const auto final_path = o.out_dir / "model.ckpt";
  save_checkpoint(final_path, final_ck);
  manifest.add_artifact(final_path);
  if (!result.diverged) {
    Checkpoint best_ck{result.best, data.vocab, json(config), "best"};
    const auto best_path = o.out_dir / "best.ckpt";
    save_checkpoint(best_path, best_ck);
    manifest.add_artifact(best_path);
  }
  const auto log_path = o.out_dir / "train_log.ndjson";
  write_log(log_path, result.log, o.log_wall_time);
  manifest.add_artifact(log_path);
  if (result.diverged) manifest.status = "diverged: " + result.message;
  write_manifest(o.out_dir / "manifest.json", manifest);

  if (result.diverged) {
    out << "training diverged: " << result.message << " (last good parameters saved, flagged)\n";
    return kExitNumeric;
  }
  out << "best epoch " << result.best_epoch << "; artifacts in " << o.out_dir.string() << '\n';
  return kExitOk;
}

int cmd_eval(const CommandOptions& o, std::ostream& out) {
  const Checkpoint ck = require_checkpoint(o);
  if (o.vocab) {
    const Vocabulary given = Vocabulary::load(*o.vocab);
    if (given.hash() != ck.vocab.hash()) {
      throw InputError("vocabulary " + o.vocab->string() + " (hash " + given.hash() +
                       ") does not match the checkpoint's vocabulary (hash " + ck.vocab.hash() +
                       "); refusing to evaluate");
    }
  }
  const RunConfig config = config_for_checkpoint(o, ck);
  PreparedData data = prepare_data(config, &ck.vocab);
  const auto& sentences = pick_split(data.split, o.split);
  if (sentences.empty()) throw InputError("the " + o.split + " split is empty");

  Rng rng(config.train.seed);
  const MetricsReport report = evaluate(sentences, ck.params, config.metrics, rng);

  ensure_dir(o.out_dir);
  const auto report_path = o.out_dir / "report.json";
  write_text(report_path, to_json(report).dump(2) + "\n");
  RunManifest manifest = base_manifest("eval", config, data);
  manifest.corpus["evaluated_split"] = o.split;
  manifest.artifacts["checkpoint"] = file_hash(*o.checkpoint);
  manifest.add_artifact(report_path);
  write_manifest(o.out_dir / "manifest.json", manifest);

  out << table_header() << '\n' << table_row(report, o.checkpoint->stem().string()) << '\n';
  return kExitOk;
}

int cmd_sweep(const CommandOptions& o, std::ostream& out) {
  RunConfig config = resolve_config(o);
  if (o.alphas.empty()) throw ConfigError("--alphas must list at least one value");
  for (double a : o.alphas)
    if (!(a >= 0.0)) throw ConfigError("sweep alpha values must be non-negative, got " + format_double(a));
  const PreparedData data = prepare_data(config);
  config.train.model.vocab_size = data.vocab.size();
  const auto& eval_split = data.split.test.empty() ? data.split.dev : data.split.test;
  if (eval_split.empty()) throw InputError("sweep needs a dev or test split to evaluate on");
  ensure_dir(o.out_dir);

  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  std::ostringstream table;
  char head[64];
  std::snprintf(head, sizeof head, "%-8s ", "alpha");
  table << head << table_header().substr(17) << '\n';
  for (double alpha : o.alphas) {
    RunConfig run = config;
    run.train.alpha = alpha;
    nlohmann::ordered_json row;
    row["alpha"] = alpha;
    char label[64];
    std::snprintf(label, sizeof label, "%-8s ", format_double(alpha).c_str());
    try {
      const TrainResult result = train(data.split, run.train);
      if (result.diverged) throw TrainingError(result.message);
      Rng rng(run.train.seed);
      const MetricsReport report = evaluate(eval_split, result.params, run.metrics, rng);
      row["status"] = "ok";
      row["report"] = to_json(report);
      table << label << table_row(report).substr(17) << '\n';
    } catch (const Error& e) {
      row["status"] = "failed";
      row["error"] = e.what();
      table << label << "FAILED: " << e.what() << '\n';
    }
    out << table.str().substr(table.str().rfind('\n', table.str().size() - 2) + 1) << std::flush;
    rows.push_back(row);
  }
  const auto json_path = o.out_dir / "sweep.json";
  const auto table_path = o.out_dir / "sweep.txt";
  write_text(json_path, rows.dump(2) + "\n");
  write_text(table_path, table.str());
  RunManifest manifest = base_manifest("sweep", config, data);
  manifest.add_artifact(json_path);
  manifest.add_artifact(table_path);
  write_manifest(o.out_dir / "manifest.json", manifest);
  out << '\n' << table.str();
  return kExitOk;
}

int cmd_interpolate(const CommandOptions& o, std::ostream& out) {
  if (o.steps < 2) throw ConfigError("--steps must be at least 2");
  const Checkpoint ck = require_checkpoint(o);
  const RunConfig config = config_for_checkpoint(o, ck);
  const std::size_t k = ck.params.config.latent_dim;
  Rng rng(config.train.seed);
  const auto z1 = rng.normals(k);
  const auto z2 = rng.normals(k);
  std::vector<double> z(k * o.steps);
  for (std::size_t s = 0; s < o.steps; ++s) {
    const double t = static_cast<double>(s) / static_cast<double>(o.steps - 1);
    for (std::size_t j = 0; j < k; ++j) z[j * o.steps + s] = (1.0 - t) * z1[j] + t * z2[j];
  }
  const auto sentences = decode_greedy(ck.params, Tensor::from({k, o.steps}, z), config.metrics.max_decode_length);
  std::string text;
  for (const auto& s : sentences) text += sentence_text(ck.vocab, s) + "\n";

  ensure_dir(o.out_dir);
  const auto path = o.out_dir / "interpolation.txt";
  write_text(path, text);
  RunManifest manifest;
  manifest.command = "interpolate";
  manifest.seed = config.train.seed;
  manifest.config = json{{"steps", o.steps}, {"max_decode_length", config.metrics.max_decode_length}};
  manifest.vocab_hash = ck.vocab.hash();
  manifest.artifacts["checkpoint"] = file_hash(*o.checkpoint);
  manifest.add_artifact(path);
  write_manifest(o.out_dir / "manifest.json", manifest);
  out << text;
  return kExitOk;
}

int cmd_sample(const CommandOptions& o, std::ostream& out) {
  if (o.count == 0) throw ConfigError("--count must be positive");
  const Checkpoint ck = require_checkpoint(o);
  const RunConfig config = config_for_checkpoint(o, ck);
  const std::size_t k = ck.params.config.latent_dim;
  Rng rng(config.train.seed);
  const auto z = rng.normals(k * o.count);
  const auto sentences = decode_greedy(ck.params, Tensor::from({k, o.count}, z), config.metrics.max_decode_length);
  std::string text;
  for (const auto& s : sentences) text += sentence_text(ck.vocab, s) + "\n";

  ensure_dir(o.out_dir);
  const auto path = o.out_dir / "samples.txt";
  write_text(path, text);
  RunManifest manifest;
  manifest.command = "sample";
  manifest.seed = config.train.seed;
  manifest.config = json{{"count", o.count}, {"max_decode_length", config.metrics.max_decode_length}};
  manifest.vocab_hash = ck.vocab.hash();
  manifest.artifacts["checkpoint"] = file_hash(*o.checkpoint);
  manifest.add_artifact(path);
  write_manifest(o.out_dir / "manifest.json", manifest);
  out << text;
  return kExitOk;
}

int cmd_selfcheck(const CommandOptions& o, std::ostream& out) {
  TapeOptions tape;
  if (o.corrupt_op) {
    tape.corrupt_backward = true;
    tape.corrupt_kind = parse_op_kind(*o.corrupt_op);
  }
  const auto results = run_selfcheck(tape);
  std::size_t failed = 0;
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << "  observed " << r.observed << ", expected "
        << r.expected << '\n';
    if (!r.passed) ++failed;
  }
  out << (failed ? std::to_string(failed) + " check(s) failed" : std::string("all checks passed")) << '\n';
  return failed ? kExitFailure : kExitOk;
}

int run_guarded(int (*command)(const CommandOptions&, std::ostream&), const CommandOptions& options,
                std::ostream& out, std::ostream& err) {
  try {
    return command(options, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InputError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const IoError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const IndexError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const TrainingError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DomainError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

// ---------------------------------------------------------------------------
// Self-check

OpKind parse_op_kind(const std::string& name) {
  for (int i = 0; i <= static_cast<int>(OpKind::concat_columns); ++i) {
    const auto kind = static_cast<OpKind>(i);
    if (name == op_name(kind)) return kind;
  }
  throw ConfigError("unknown op '" + name + "'");
}

GradCheckReport elbo_gradient_check(const TapeOptions& analytic_tape) {
  ModelConfig mc;
  mc.vocab_size = 6;
  mc.embed_dim = 4;
  mc.encoder_hidden = 4;
  mc.decoder_hidden = 4;
  mc.latent_dim = 2;
  mc.init_scale = 0.5;
  Rng rng(2024);
  VaeParams params = VaeParams::init(mc, rng);
  Batch batch;
  batch.sentences = {{4, 5, 4}, {5}, {4, 4, 5, 5}};
  batch.source_index = {0, 1, 2};
  const StepNoise noise = sample_step_noise(batch, mc.latent_dim, 0.7, rng);
  ObjectiveConfig objective;
  objective.beta = 0.5;
  objective.free_bits = 1.0;
  objective.fraternal = true;
  objective.alpha = 0.1;
  objective.keep_prob = 0.7;
  const auto program = [&](Tape& tape) { return elbo_step(tape, batch, objective, params, noise).total; };
  GradCheckOptions options;
  options.analytic_tape = analytic_tape;
  return grad_check(program, params.all_tensors(), options);
}

namespace {

/// Ops the ELBO does not use, in one small program.
GradCheckReport auxiliary_ops_check(const TapeOptions& analytic_tape) {
  Rng rng(99);
  const Tensor a = Tensor::from({3, 2}, {0.5, 1.2, 0.8, 1.5, 0.3, 0.9}, true);
  const Tensor b = Tensor::from({3, 2}, rng.normals(6), true);
  const auto program = [&](Tape& t) {
    const Tensor top = t.slice_rows(a, 0, 2);
    const Tensor logs = t.log(top);
    const Tensor mixed = t.add(t.negate(t.tanh(t.slice_rows(b, 1, 2))), logs);
    return t.add(t.mean(mixed), t.scale(t.squared_l2_norm(b), 0.3));
  };
  GradCheckOptions options;
  options.analytic_tape = analytic_tape;
  return grad_check(program, {{"a", a}, {"b", b}}, options);
}

}  // namespace

std::vector<CheckResult> run_selfcheck(const TapeOptions& analytic_tape) {
  std::vector<CheckResult> results;
  const auto add_grad = [&](const std::string& name, const GradCheckReport& report) {
    results.push_back({name, report.passed, "max rel error " + format_double(report.max_rel_error),
                       "< " + format_double(report.tolerance)});
  };
  add_grad("elbo gradient vs finite differences", elbo_gradient_check(analytic_tape));
  add_grad("auxiliary op gradients vs finite differences", auxiliary_ops_check(analytic_tape));

  {
    Tape tape(TapeOptions{.recording = false});
    const GaussianPosterior q{Tensor::from({3, 1}, {1.0, 1.0, 1.0}), Tensor::zeros({3, 1})};
    const double v = kl_diag_gaussian(tape, q).per_dim[0];
    results.push_back({"KL at mu=1, logvar=0", v == 0.5, format_double(v), "0.5 per dimension"});
  }
  {
    Rng rng(5);
    const std::size_t k = 4, n_posteriors = 5, n_samples = 100000;
    double worst = 0.0;
    for (std::size_t p = 0; p < n_posteriors; ++p) {
      std::vector<double> mu(k), lv(k);
      for (std::size_t j = 0; j < k; ++j) {
        mu[j] = rng.uniform(-2.0, 2.0);
        lv[j] = rng.uniform(-1.0, 1.0);
      }
      Tape tape(TapeOptions{.recording = false});
      const double closed = kl_diag_gaussian(tape, {Tensor::from({k, 1}, mu), Tensor::from({k, 1}, lv)})
                                .per_sentence.item();
      const std::vector<double> zero(k, 0.0);
      double acc = 0.0;
      std::vector<double> z(k);
      for (std::size_t s = 0; s < n_samples; ++s) {
        for (std::size_t j = 0; j < k; ++j) z[j] = mu[j] + std::exp(0.5 * lv[j]) * rng.normal();
        acc += log_normal_diag(z.data(), mu.data(), lv.data(), k) -
               log_normal_diag(z.data(), zero.data(), zero.data(), k);
      }
      const double mc = acc / static_cast<double>(n_samples);
      worst = std::max(worst, std::abs(mc - closed) / closed);
    }
    results.push_back({"closed-form KL vs Monte Carlo", worst < 0.01, "max rel error " + format_double(worst),
                       "< 0.01"});
  }
  {
    const Sentence ref{"the", "cat", "sat", "on", "the", "mat", "with", "a", "red", "hat"};
    const Sentence prefix(ref.begin(), ref.begin() + 6);
    const double self = bleu(ref, ref);
    const double brevity = bleu(ref, prefix);
    const double disjoint = bleu(ref, Sentence{"x", "y", "z", "w", "v"});
    results.push_back({"BLEU of a sentence with itself", self == 1.0, format_double(self), "1"});
    const double expected = std::exp(1.0 - 5.0 / 3.0);
    results.push_back({"BLEU brevity penalty on a 6/10 prefix", std::abs(brevity - expected) < 1e-12,
                       format_double(brevity), format_double(expected)});
    results.push_back({"BLEU with disjoint vocabularies", disjoint < 1e-6, format_double(disjoint), "~0"});
  }
  return results;
}

}  // namespace fdvae
