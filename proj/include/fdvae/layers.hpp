#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fdvae/rng.hpp"
#include "fdvae/tensor.hpp"

namespace fdvae {

/// Complementary word-dropout masks drawn once: keep[j] ~ Bernoulli(keep_prob)
/// and complement[j] = 1 − keep[j].
struct MaskPair {
  std::vector<double> keep;
  std::vector<double> complement;
  double keep_prob = 1.0;

  std::size_t size() const { return keep.size(); }
};

MaskPair sample_mask_pair(std::size_t n, double keep_prob, Rng& rng);

/// Zeroes column j of embeddings[w×n] wherever mask[j] == 0.
Tensor apply_mask(Tape& tape, const Tensor& embeddings, std::span<const double> mask);

/// weight[out×in] · x[in×n] + bias[out].
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);

struct LinearParams {
  Tensor weight;
  Tensor bias;

  static LinearParams init(std::size_t in, std::size_t out, double scale, Rng& rng);
  Tensor operator()(Tape& tape, const Tensor& x) const { return linear(tape, x, weight, bias); }
};

/// Gate weights stacked as [input; forget; output; candidate] rows over the
/// concatenated [input; hidden] vector.
struct LstmParams {
  Tensor weight;  // [4d × (input + d)]
  Tensor bias;    // [4d]

  static LstmParams init(std::size_t input_size, std::size_t hidden_size, double scale, Rng& rng);
  std::size_t hidden_size() const { return weight.rows() / 4; }
  std::size_t input_size() const { return weight.cols() - hidden_size(); }
};

struct LstmState {
  Tensor h;  // [d×B]
  Tensor c;  // [d×B]
};

/// One recurrence step for a batch of columns.
LstmState lstm_cell(Tape& tape, const Tensor& input, const LstmState& prev, const LstmParams& params);

/// Runs the cell over per-step inputs (each [input×B]) and returns the hidden
/// state of every step.
std::vector<Tensor> lstm_steps(Tape& tape, const std::vector<Tensor>& inputs, const LstmState& init,
                               const LstmParams& params);

/// Single-sequence form: inputs[input×n], h0/c0 [d] or [d×1]; returns H[d×n].
Tensor lstm_sequence(Tape& tape, const Tensor& inputs, const Tensor& h0, const Tensor& c0,
                     const LstmParams& params);

/// Uniform(−scale, scale) matrix, used for every weight initialisation.
Tensor uniform_init(Shape shape, double scale, Rng& rng);

}  // namespace fdvae
