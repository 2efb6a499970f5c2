#pragma once

// Reverse-mode automatic differentiation over dense, row-major, 64-bit
// tensors. A Tape records every operation executed through it and replays
// the recorded backward rules in reverse order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fdvae {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty unless requires_grad
  bool requires_grad = false;
  const void* producer = nullptr;  // tape that created the node, null for leaves

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};
}  // namespace detail

/// Shared handle to a node of the computation graph. Copies alias the same
/// storage; use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t rows() const;  // rank-2 only
  std::size_t cols() const;  // rank-2 only

  std::span<const double> data() const;
  std::span<double> mutable_data();
  std::span<const double> grad() const;
  std::span<double> mutable_grad();

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  void zero_grad();

  /// Value of a single-element tensor.
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const;

  /// Deep copy detached from any tape.
  Tensor clone() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
  friend class Tape;
};

enum class OpKind : std::uint8_t {
  matmul,
  add,
  sub,
  mul,
  sigmoid,
  tanh,
  exp,
  log,
  negate,
  scale,
  add_scalar,
  add_bias,
  concat_rows,
  slice_rows,
  scale_columns,
  embedding,
  pick_columns,
  cross_entropy,
  sum,
  mean,
  squared_l2_norm,
  sum_rows,
  mean_columns,
  maximum_const,
  reshape,
  split_columns,
  concat_columns,
};

const char* op_name(OpKind kind);

struct TapeOptions {
  /// When false the tape computes values only; nothing is recorded and
  /// backward() is unavailable.
  bool recording = true;
  /// Test hook: the backward rule of this op kind is scaled by 1.5.
  bool corrupt_backward = false;
  OpKind corrupt_kind = OpKind::sigmoid;
};

/// Records operations in execution order. One tape per thread; tapes never
/// mutate leaf values, so several tapes may read the same parameters
/// concurrently as long as none of them runs backward().
class Tape {
 public:
  Tape() = default;
  explicit Tape(TapeOptions options) : options_(options) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return options_.recording; }
  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

  // Linear algebra.
  Tensor matmul(const Tensor& a, const Tensor& b);
  /// x[m×n] + bias[m] broadcast over columns.
  Tensor add_bias(const Tensor& x, const Tensor& bias);

  // Elementwise. Binary ops accept a single-element operand on either side.
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor sigmoid(const Tensor& x);
  Tensor tanh(const Tensor& x);
  Tensor exp(const Tensor& x);
  Tensor log(const Tensor& x);
  Tensor negate(const Tensor& x);
  Tensor scale(const Tensor& x, double factor);
  Tensor add_scalar(const Tensor& x, double value);
  /// max(x, floor) elementwise; the floor branch passes no gradient.
  Tensor maximum_const(const Tensor& x, double floor);

  // Structural.
  Tensor concat_rows(const std::vector<Tensor>& parts);
  Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
  Tensor reshape(const Tensor& x, Shape shape);
  /// Each column of x[m×n] as its own [m×1] tensor.
  std::vector<Tensor> split_columns(const Tensor& x);
  /// Inverse of split_columns: parts[j] (all [m×k_j]) side by side.
  Tensor concat_columns(const std::vector<Tensor>& parts);
  /// Multiply column j of x[m×n] by the constant weights[j].
  Tensor scale_columns(const Tensor& x, std::span<const double> weights);
  /// Columns ids[j] of table[w×V], as a [w×ids.size()] matrix.
  Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);
  /// out[:, j] = steps[which[j]][:, j]; all steps share one [m×n] shape.
  Tensor pick_columns(const std::vector<Tensor>& steps, std::span<const std::size_t> which);

  /// Per-column −log softmax(logits[:, j])[targets[j]], scaled by weights[j]
  /// when weights are given (zero weight = padding). Returns [1×n].
  Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                               std::span<const double> weights = {});
  /// Single-position form: logits of rank 1 (or one column), scalar result.
  Tensor softmax_cross_entropy(const Tensor& logits, std::size_t target);

  // Reductions.
  Tensor sum(const Tensor& x);
  Tensor mean(const Tensor& x);
  Tensor squared_l2_norm(const Tensor& x);
  /// Column sums of x[m×n] as [1×n].
  Tensor sum_rows(const Tensor& x);
  /// Row means of x[m×n] as [m].
  Tensor mean_columns(const Tensor& x);

  /// Accumulates ∂loss/∂t into the grad buffer of every requires_grad
  /// ancestor of `loss`. Intermediate gradients are reset first, so
  /// repeated calls add exactly one more gradient to the leaves.
  void backward(const Tensor& loss);

 private:
  using Node = detail::Node;
  using NodePtr = std::shared_ptr<Node>;
  struct Record {
    OpKind kind;
    NodePtr output;
    std::function<void(const Node& out, double grad_scale)> backward;
  };

  NodePtr make_output(Shape shape, std::initializer_list<const Tensor*> inputs);
  NodePtr make_output(Shape shape, const std::vector<Tensor>& inputs);
  void record(OpKind kind, const NodePtr& out,
              std::function<void(const Node&, double)> backward);
  Tensor unary(OpKind kind, const Tensor& x, double (*fwd)(double),
               double (*dfdx)(double x, double y));
  Tensor binary(OpKind kind, const Tensor& a, const Tensor& b);

  TapeOptions options_;
  std::vector<Record> records_;
};

}  // namespace fdvae
