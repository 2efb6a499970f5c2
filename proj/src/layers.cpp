#include "fdvae/layers.hpp"

#include "fdvae/error.hpp"

namespace fdvae {

MaskPair sample_mask_pair(std::size_t n, double keep_prob, Rng& rng) {
  if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) {
    throw ConfigError("keep probability must lie in [0, 1], got " + std::to_string(keep_prob));
  }
  MaskPair pair;
  pair.keep_prob = keep_prob;
  pair.keep.resize(n);
  pair.complement.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    pair.keep[j] = rng.bernoulli(keep_prob) ? 1.0 : 0.0;
    pair.complement[j] = 1.0 - pair.keep[j];
  }
  return pair;
}

Tensor apply_mask(Tape& tape, const Tensor& embeddings, std::span<const double> mask) {
  if (embeddings.rank() != 2 || mask.size() != embeddings.cols()) {
    throw DimensionError("apply_mask: mask of length " + std::to_string(mask.size()) +
                         " for embeddings " + shape_string(embeddings.shape()));
  }
  return tape.scale_columns(embeddings, mask);
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return tape.add_bias(tape.matmul(weight, x), bias);
}

Tensor uniform_init(Shape shape, double scale, Rng& rng) {
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.uniform(-scale, scale);
  return Tensor::from(std::move(shape), std::move(values), true);
}

LinearParams LinearParams::init(std::size_t in, std::size_t out, double scale, Rng& rng) {
  return {uniform_init({out, in}, scale, rng), Tensor::zeros({out}, true)};
}

LstmParams LstmParams::init(std::size_t input_size, std::size_t hidden_size, double scale, Rng& rng) {
  return {uniform_init({4 * hidden_size, input_size + hidden_size}, scale, rng),
          Tensor::zeros({4 * hidden_size}, true)};
}

LstmState lstm_cell(Tape& tape, const Tensor& input, const LstmState& prev, const LstmParams& params) {
  const std::size_t d = params.hidden_size();
  if (input.rank() != 2 || input.rows() != params.input_size()) {
    throw DimensionError("lstm: input " + shape_string(input.shape()) + " but cell expects " +
                         std::to_string(params.input_size()) + " features");
  }
  if (prev.h.rank() != 2 || prev.h.rows() != d || prev.h.cols() != input.cols() ||
      prev.c.shape() != prev.h.shape()) {
    throw DimensionError("lstm: state " + shape_string(prev.h.shape()) + " incompatible with input " +
                         shape_string(input.shape()) + " and hidden size " + std::to_string(d));
  }
  const Tensor gates = linear(tape, tape.concat_rows({input, prev.h}), params.weight, params.bias);
  const Tensor in_gate = tape.sigmoid(tape.slice_rows(gates, 0, d));
  const Tensor forget_gate = tape.sigmoid(tape.slice_rows(gates, d, d));
  const Tensor out_gate = tape.sigmoid(tape.slice_rows(gates, 2 * d, d));
  const Tensor candidate = tape.tanh(tape.slice_rows(gates, 3 * d, d));
  Tensor c = tape.add(tape.mul(forget_gate, prev.c), tape.mul(in_gate, candidate));
  Tensor h = tape.mul(out_gate, tape.tanh(c));
  return {std::move(h), std::move(c)};
}

std::vector<Tensor> lstm_steps(Tape& tape, const std::vector<Tensor>& inputs, const LstmState& init,
                               const LstmParams& params) {
  if (inputs.empty()) throw DimensionError("lstm: empty input sequence");
  std::vector<Tensor> hidden;
  hidden.reserve(inputs.size());
  LstmState state = init;
  for (const auto& x : inputs) {
    state = lstm_cell(tape, x, state, params);
    hidden.push_back(state.h);
  }
  return hidden;
}

Tensor lstm_sequence(Tape& tape, const Tensor& inputs, const Tensor& h0, const Tensor& c0,
                     const LstmParams& params) {
  if (inputs.rank() != 2) throw DimensionError("lstm_sequence: inputs must be a matrix");
  const std::size_t d = params.hidden_size();
  auto as_column = [&](const Tensor& v) {
    if (v.numel() != d) {
      throw DimensionError("lstm_sequence: initial state " + shape_string(v.shape()) +
                           " for hidden size " + std::to_string(d));
    }
    return v.rank() == 2 ? v : tape.reshape(v, {d, 1});
  };
  const LstmState init{as_column(h0), as_column(c0)};
  return tape.concat_columns(lstm_steps(tape, tape.split_columns(inputs), init, params));
}

}  // namespace fdvae
