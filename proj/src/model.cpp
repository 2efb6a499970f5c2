#include "fdvae/model.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "fdvae/error.hpp"

namespace fdvae {

using nlohmann::json;

void ModelConfig::validate() const {
  if (vocab_size <= special::count) throw ConfigError("model.vocab_size must exceed the reserved ids");
  if (embed_dim == 0) throw ConfigError("model.embed_dim must be positive");
  if (encoder_hidden == 0) throw ConfigError("model.encoder_hidden must be positive");
  if (decoder_hidden == 0) throw ConfigError("model.decoder_hidden must be positive");
  if (latent_dim == 0) throw ConfigError("model.latent_dim must be positive");
  if (!(init_scale > 0.0)) throw ConfigError("model.init_scale must be positive");
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"vocab_size", c.vocab_size},         {"embed_dim", c.embed_dim},
           {"encoder_hidden", c.encoder_hidden}, {"decoder_hidden", c.decoder_hidden},
           {"latent_dim", c.latent_dim},         {"init_scale", c.init_scale}};
}

void from_json(const json& j, ModelConfig& c) {
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.encoder_hidden = j.value("encoder_hidden", c.encoder_hidden);
  c.decoder_hidden = j.value("decoder_hidden", c.decoder_hidden);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.init_scale = j.value("init_scale", c.init_scale);
}

// ---------------------------------------------------------------------------
// Parameters

DecoderParams VaeParams::init_decoder(const ModelConfig& c, Rng& rng) {
  DecoderParams d;
  d.embedding = uniform_init({c.embed_dim, c.vocab_size}, c.init_scale, rng);
  d.lstm = LstmParams::init(c.embed_dim + c.latent_dim, c.decoder_hidden, c.init_scale, rng);
  d.h0_proj = LinearParams::init(c.latent_dim, c.decoder_hidden, c.init_scale, rng);
  d.c0_proj = LinearParams::init(c.latent_dim, c.decoder_hidden, c.init_scale, rng);
  d.output = LinearParams::init(c.decoder_hidden, c.vocab_size, c.init_scale, rng);
  return d;
}

VaeParams VaeParams::init(const ModelConfig& c, Rng& rng) {
  c.validate();
  VaeParams p;
  p.config = c;
  p.encoder.embedding = uniform_init({c.embed_dim, c.vocab_size}, c.init_scale, rng);
  p.encoder.lstm = LstmParams::init(c.embed_dim, c.encoder_hidden, c.init_scale, rng);
  p.encoder.mu_head = LinearParams::init(c.encoder_hidden, c.latent_dim, c.init_scale, rng);
  p.encoder.logvar_head = LinearParams::init(c.encoder_hidden, c.latent_dim, c.init_scale, rng);
  p.decoder = init_decoder(c, rng);
  return p;
}

std::vector<NamedTensor> VaeParams::encoder_tensors() const {
  return {{"enc.embedding", encoder.embedding},     {"enc.lstm.weight", encoder.lstm.weight},
          {"enc.lstm.bias", encoder.lstm.bias},     {"enc.mu.weight", encoder.mu_head.weight},
          {"enc.mu.bias", encoder.mu_head.bias},    {"enc.logvar.weight", encoder.logvar_head.weight},
          {"enc.logvar.bias", encoder.logvar_head.bias}};
}

std::vector<NamedTensor> VaeParams::decoder_tensors() const {
  return {{"dec.embedding", decoder.embedding},   {"dec.lstm.weight", decoder.lstm.weight},
          {"dec.lstm.bias", decoder.lstm.bias},   {"dec.h0.weight", decoder.h0_proj.weight},
          {"dec.h0.bias", decoder.h0_proj.bias},  {"dec.c0.weight", decoder.c0_proj.weight},
          {"dec.c0.bias", decoder.c0_proj.bias},  {"dec.out.weight", decoder.output.weight},
          {"dec.out.bias", decoder.output.bias}};
}

std::vector<NamedTensor> VaeParams::all_tensors() const {
  auto all = encoder_tensors();
  for (auto& t : decoder_tensors()) all.push_back(std::move(t));
  return all;
}

VaeParams VaeParams::clone() const {
  VaeParams copy = *this;
  auto src = all_tensors();
  auto dst = std::vector<Tensor*>{&copy.encoder.embedding,
                                  &copy.encoder.lstm.weight,
                                  &copy.encoder.lstm.bias,
                                  &copy.encoder.mu_head.weight,
                                  &copy.encoder.mu_head.bias,
                                  &copy.encoder.logvar_head.weight,
                                  &copy.encoder.logvar_head.bias,
                                  &copy.decoder.embedding,
                                  &copy.decoder.lstm.weight,
                                  &copy.decoder.lstm.bias,
                                  &copy.decoder.h0_proj.weight,
                                  &copy.decoder.h0_proj.bias,
                                  &copy.decoder.c0_proj.weight,
                                  &copy.decoder.c0_proj.bias,
                                  &copy.decoder.output.weight,
                                  &copy.decoder.output.bias};
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i].tensor.clone();
  return copy;
}

void VaeParams::zero_grad() {
  for (auto& t : all_tensors()) t.tensor.zero_grad();
}

// ---------------------------------------------------------------------------
// Encoder

namespace {

void check_batch(const VaeParams& params, const Batch& batch) {
  if (batch.size() == 0) throw InputError("empty batch");
  for (const auto& s : batch.sentences) {
    if (s.empty()) throw InputError("cannot encode an empty sentence");
    for (auto id : s) {
      if (id >= params.config.vocab_size) {
        throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(params.config.vocab_size));
      }
    }
  }
}

Batch single(const IdSentence& s) {
  Batch b;
  b.sentences.push_back(s);
  b.source_index.push_back(0);
  return b;
}

}  // namespace

GaussianPosterior encode(Tape& tape, const VaeParams& params, const Batch& batch) {
  check_batch(params, batch);
  const auto& enc = params.encoder;
  const std::size_t n = batch.size(), T = batch.max_length(), d = enc.lstm.hidden_size();
  std::vector<Tensor> inputs;
  inputs.reserve(T);
  std::vector<std::size_t> ids(n);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < n; ++b) ids[b] = batch.token(t, b);
    inputs.push_back(tape.embedding(enc.embedding, ids));
  }
  const LstmState init{Tensor::zeros({d, n}), Tensor::zeros({d, n})};
  const auto hidden = lstm_steps(tape, inputs, init, enc.lstm);
  std::vector<std::size_t> last(n);
  for (std::size_t b = 0; b < n; ++b) last[b] = batch.length(b) - 1;
  const Tensor final_state = tape.pick_columns(hidden, last);
  return {enc.mu_head(tape, final_state), enc.logvar_head(tape, final_state)};
}

GaussianPosterior encode(Tape& tape, const VaeParams& params, const IdSentence& sentence) {
  return encode(tape, params, single(sentence));
}

LatentSample reparameterize(Tape& tape, const GaussianPosterior& posterior, std::vector<double> eps) {
  if (eps.size() != posterior.mu.numel()) {
    throw DimensionError("reparameterize: " + std::to_string(eps.size()) + " noise values for posterior " +
                         shape_string(posterior.mu.shape()));
  }
  const Tensor noise = Tensor::from(posterior.mu.shape(), eps);
  const Tensor sigma = tape.exp(tape.scale(posterior.logvar, 0.5));
  return {tape.add(posterior.mu, tape.mul(sigma, noise)), std::move(eps)};
}

// ---------------------------------------------------------------------------
// Decoder

DecodeResult decode_teacher_forced(Tape& tape, const VaeParams& params, const Tensor& z,
                                   const Batch& batch,
                                   const std::vector<std::vector<double>>* input_masks) {
  check_batch(params, batch);
  const auto& dec = params.decoder;
  const std::size_t n = batch.size(), T = batch.max_length() + 1;
  if (z.rank() != 2 || z.rows() != params.config.latent_dim || z.cols() != n) {
    throw DimensionError("decode: z " + shape_string(z.shape()) + " for latent size " +
                         std::to_string(params.config.latent_dim) + " and batch " + std::to_string(n));
  }
  if (input_masks) {
    if (input_masks->size() != n) throw DimensionError("decode: one input mask per sentence required");
    for (std::size_t b = 0; b < n; ++b) {
      if ((*input_masks)[b].size() != batch.length(b) + 1) {
        throw DimensionError("decode: mask of length " + std::to_string((*input_masks)[b].size()) +
                             " for a sentence with " + std::to_string(batch.length(b) + 1) +
                             " decoder steps");
      }
    }
  }

  DecodeResult result;
  result.steps = T;
  result.step_weight.assign(T * n, 0.0);
  std::vector<std::size_t> ids(n), targets(T * n, special::pad);
  std::vector<double> column_mask(n);
  std::vector<Tensor> inputs;
  inputs.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t len = batch.length(b);
      ids[b] = t == 0 ? special::bos : batch.token(t - 1, b);
      if (t < len) targets[t * n + b] = batch.token(t, b);
      if (t == len) targets[t * n + b] = special::eos;
      result.step_weight[t * n + b] = t <= len ? 1.0 : 0.0;
      column_mask[b] = (input_masks && t <= len) ? (*input_masks)[b][t] : 1.0;
    }
    Tensor emb = tape.embedding(dec.embedding, ids);
    if (input_masks) emb = apply_mask(tape, emb, column_mask);
    inputs.push_back(tape.concat_rows({emb, z}));
  }
  const LstmState init{dec.h0_proj(tape, z), dec.c0_proj(tape, z)};
  result.hidden = lstm_steps(tape, inputs, init, dec.lstm);

  // All steps share the output projection: score them in one [V × T·n] product.
  const Tensor logits = dec.output(tape, tape.concat_columns(result.hidden));
  const Tensor ce = tape.softmax_cross_entropy(logits, targets, result.step_weight);
  result.log_likelihood = tape.negate(tape.sum_rows(tape.reshape(ce, {T, n})));
  return result;
}

SentenceDecode decode_teacher_forced(Tape& tape, const VaeParams& params, const Tensor& z,
                                     const IdSentence& sentence, const std::vector<double>* mask) {
  const Tensor zc = z.rank() == 2 ? z : tape.reshape(z, {z.numel(), 1});
  std::vector<std::vector<double>> masks;
  if (mask) masks.push_back(*mask);
  auto r = decode_teacher_forced(tape, params, zc, single(sentence), mask ? &masks : nullptr);
  return {tape.reshape(r.log_likelihood, {1}), tape.concat_columns(r.hidden)};
}

std::vector<IdSentence> decode_greedy(const VaeParams& params, const Tensor& z, std::size_t max_len) {
  const auto& dec = params.decoder;
  if (z.rank() != 2 || z.rows() != params.config.latent_dim) {
    throw DimensionError("decode_greedy: z " + shape_string(z.shape()) + " for latent size " +
                         std::to_string(params.config.latent_dim));
  }
  const std::size_t n = z.cols(), V = params.config.vocab_size;
  Tape tape(TapeOptions{.recording = false});
  const Tensor zc = z.clone();
  LstmState state{dec.h0_proj(tape, zc), dec.c0_proj(tape, zc)};
  std::vector<IdSentence> out(n);
  std::vector<bool> done(n, false);
  std::vector<std::size_t> ids(n, special::bos);
  for (std::size_t step = 0; step < max_len; ++step) {
    const Tensor input = tape.concat_rows({tape.embedding(dec.embedding, ids), zc});
    state = lstm_cell(tape, input, state, dec.lstm);
    const Tensor logits = dec.output(tape, state.h);
    const auto values = logits.data();
    bool all_done = true;
    for (std::size_t b = 0; b < n; ++b) {
      std::size_t best = 0;
      for (std::size_t v = 1; v < V; ++v)
        if (values[v * n + b] > values[best * n + b]) best = v;
      if (!done[b]) {
        if (best == special::eos) {
          done[b] = true;
        } else {
          out[b].push_back(best);
        }
      }
      ids[b] = best;
      all_done = all_done && done[b];
    }
    if (all_done) break;
  }
  return out;
}

IdSentence decode_greedy(const VaeParams& params, std::span<const double> z, std::size_t max_len) {
  const Tensor zt = Tensor::from({z.size(), 1}, std::vector<double>(z.begin(), z.end()));
  return decode_greedy(params, zt, max_len).front();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::string_view kMagic = "FDVAE-CHECKPOINT 1\n";

void write_le(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  os.write(bytes, 8);
}

double read_le(std::istream& is) {
  unsigned char bytes[8];
  is.read(reinterpret_cast<char*>(bytes), 8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  json header;
  header["format"] = "fdvae-checkpoint";
  header["status"] = ck.status;
  header["model"] = ck.params.config;
  header["config"] = ck.config;
  header["vocab_hash"] = ck.vocab.hash();
  header["vocabulary"] = ck.vocab.tokens();
  json index = json::array();
  const auto tensors = ck.params.all_tensors();
  for (const auto& t : tensors) index.push_back({{"name", t.name}, {"shape", t.tensor.shape()}});
  header["tensors"] = index;
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os << kMagic << text.size() << '\n' << text;
  for (const auto& t : tensors)
    for (double v : t.tensor.data()) write_le(os, v);
  if (!os) throw IoError("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  std::string magic(kMagic.size(), '\0');
  is.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (magic != kMagic) throw InputError(path.string() + " is not an fdvae checkpoint");
  std::string len_line;
  std::getline(is, len_line);
  std::size_t len = 0;
  try {
    len = std::stoull(len_line);
  } catch (const std::exception&) {
    throw InputError("corrupt checkpoint header length in " + path.string());
  }
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw InputError("truncated checkpoint header in " + path.string());
  const json header = json::parse(text);

  Checkpoint ck;
  ck.status = header.value("status", "complete");
  ck.config = header.at("config");
  ck.vocab = Vocabulary::from_tokens(header.at("vocabulary").get<std::vector<std::string>>());
  if (ck.vocab.hash() != header.at("vocab_hash").get<std::string>()) {
    throw InputError("checkpoint vocabulary hash mismatch in " + path.string());
  }
  const auto model = header.at("model").get<ModelConfig>();
  model.validate();
  if (model.vocab_size != ck.vocab.size()) {
    throw InputError("checkpoint model vocabulary size disagrees with its vocabulary");
  }
  Rng dummy(0);
  ck.params = VaeParams::init(model, dummy);
  auto tensors = ck.params.all_tensors();
  const auto& index = header.at("tensors");
  if (index.size() != tensors.size()) throw InputError("checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto name = index[i].at("name").get<std::string>();
    const auto shape = index[i].at("shape").get<Shape>();
    if (name != tensors[i].name || shape != tensors[i].tensor.shape()) {
      throw InputError("checkpoint tensor " + name + " " + shape_string(shape) + " does not match expected " +
                       tensors[i].name + " " + shape_string(tensors[i].tensor.shape()));
    }
    for (double& v : tensors[i].tensor.mutable_data()) v = read_le(is);
  }
  if (!is) throw InputError("truncated checkpoint data in " + path.string());
  if (is.peek() != std::char_traits<char>::eof()) throw InputError("trailing bytes in checkpoint " + path.string());
  return ck;
}

}  // namespace fdvae
