#include "fdvae/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "fdvae/error.hpp"

namespace fdvae {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_string(t.shape()));
  }
}

double sigmoid_fn(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  if (requires_grad) node->ensure_grad();
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return node_->shape[1];
}

std::span<const double> Tensor::data() const {
  shape();
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  shape();
  return node_->value;
}

std::span<const double> Tensor::grad() const {
  shape();
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  shape();
  node_->ensure_grad();
  return node_->grad;
}

bool Tensor::requires_grad() const { return shape(), node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  shape();
  node_->requires_grad = flag;
  if (flag) node_->ensure_grad();
}

void Tensor::zero_grad() {
  shape();
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  require_rank2(*this, "at");
  if (r >= node_->shape[0] || c >= node_->shape[1]) throw IndexError("at: index out of range");
  return node_->value[r * node_->shape[1] + c];
}

Tensor Tensor::clone() const {
  return from(shape(), node_->value, node_->requires_grad);
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::negate: return "negate";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::add_bias: return "add_bias";
    case OpKind::concat_rows: return "concat_rows";
    case OpKind::slice_rows: return "slice_rows";
    case OpKind::scale_columns: return "scale_columns";
    case OpKind::embedding: return "embedding";
    case OpKind::pick_columns: return "pick_columns";
    case OpKind::cross_entropy: return "softmax_cross_entropy";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::squared_l2_norm: return "squared_l2_norm";
    case OpKind::sum_rows: return "sum_rows";
    case OpKind::mean_columns: return "mean_columns";
    case OpKind::maximum_const: return "maximum_const";
    case OpKind::reshape: return "reshape";
    case OpKind::split_columns: return "split_columns";
    case OpKind::concat_columns: return "concat_columns";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Tape plumbing

Tape::NodePtr Tape::make_output(Shape shape, std::initializer_list<const Tensor*> inputs) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value.assign(shape_numel(node->shape), 0.0);
  node->producer = this;
  if (options_.recording) {
    for (const Tensor* t : inputs) node->requires_grad = node->requires_grad || t->requires_grad();
  }
  if (node->requires_grad) node->ensure_grad();
  return node;
}

Tape::NodePtr Tape::make_output(Shape shape, const std::vector<Tensor>& inputs) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value.assign(shape_numel(node->shape), 0.0);
  node->producer = this;
  if (options_.recording) {
    for (const Tensor& t : inputs) node->requires_grad = node->requires_grad || t.requires_grad();
  }
  if (node->requires_grad) node->ensure_grad();
  return node;
}

void Tape::record(OpKind kind, const NodePtr& out,
                  std::function<void(const Node&, double)> backward) {
  if (!out->requires_grad) return;
  records_.push_back(Record{kind, out, std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!options_.recording) throw ContractError("backward() on a non-recording tape");
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  const auto& loss_node = loss.node_;
  if (!loss_node->requires_grad) return;
  if (loss_node->producer != nullptr && loss_node->producer != this) {
    throw ContractError("backward(): loss was recorded on a different tape");
  }
  for (auto& rec : records_) std::fill(rec.output->grad.begin(), rec.output->grad.end(), 0.0);
  loss_node->ensure_grad();
  loss_node->grad[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    const double scale =
        (options_.corrupt_backward && options_.corrupt_kind == it->kind) ? 1.5 : 1.0;
    it->backward(*it->output, scale);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " · " +
                         shape_string(b.shape()));
  }
  auto out = make_output({m, n}, {&a, &b});
  MutMap(out->value.data(), m, n).noalias() =
      ConstMap(a.node_->value.data(), m, k) * ConstMap(b.node_->value.data(), k, n);
  record(OpKind::matmul, out, [an = a.node_, bn = b.node_, m, k, n](const Node& o, double s) {
    ConstMap g(o.grad.data(), m, n);
    if (an->requires_grad) {
      MutMap(an->grad.data(), m, k).noalias() += s * (g * ConstMap(bn->value.data(), k, n).transpose());
    }
    if (bn->requires_grad) {
      MutMap(bn->grad.data(), k, n).noalias() += s * (ConstMap(an->value.data(), m, k).transpose() * g);
    }
  });
  return Tensor(out);
}

Tensor Tape::add_bias(const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_bias");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.numel() != m) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " vs input " +
                         shape_string(x.shape()));
  }
  auto out = make_output({m, n}, {&x, &bias});
  const auto& xv = x.node_->value;
  const auto& bv = bias.node_->value;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out->value[i * n + j] = xv[i * n + j] + bv[i];
  record(OpKind::add_bias, out, [xn = x.node_, bn = bias.node_, m, n](const Node& o, double s) {
    if (xn->requires_grad)
      for (std::size_t i = 0; i < m * n; ++i) xn->grad[i] += s * o.grad[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += o.grad[i * n + j];
        bn->grad[i] += s * acc;
      }
  });
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor Tape::binary(OpKind kind, const Tensor& a, const Tensor& b) {
  const std::size_t na = a.numel(), nb = b.numel();
  if (a.shape() != b.shape() && na != 1 && nb != 1) {
    throw DimensionError(std::string(op_name(kind)) + ": shapes differ, " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
  const Shape shape = (na >= nb) ? a.shape() : b.shape();
  const std::size_t n = std::max(na, nb);
  auto out = make_output(shape, {&a, &b});
  const auto& av = a.node_->value;
  const auto& bv = b.node_->value;
  const std::size_t sa = (na == 1 && n != 1) ? 0 : 1;  // stride 0 broadcasts
  const std::size_t sb = (nb == 1 && n != 1) ? 0 : 1;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i * sa], y = bv[i * sb];
    switch (kind) {
      case OpKind::add: out->value[i] = x + y; break;
      case OpKind::sub: out->value[i] = x - y; break;
      default: out->value[i] = x * y; break;
    }
  }
  record(kind, out, [kind, an = a.node_, bn = b.node_, n, sa, sb](const Node& o, double s) {
    for (std::size_t i = 0; i < n; ++i) {
      const double g = s * o.grad[i];
      double ga = g, gb = g;
      if (kind == OpKind::sub) gb = -g;
      if (kind == OpKind::mul) {
        ga = g * bn->value[i * sb];
        gb = g * an->value[i * sa];
      }
      if (an->requires_grad) an->grad[i * sa] += ga;
      if (bn->requires_grad) bn->grad[i * sb] += gb;
    }
  });
  return Tensor(out);
}

Tensor Tape::add(const Tensor& a, const Tensor& b) { return binary(OpKind::add, a, b); }
Tensor Tape::sub(const Tensor& a, const Tensor& b) { return binary(OpKind::sub, a, b); }
Tensor Tape::mul(const Tensor& a, const Tensor& b) { return binary(OpKind::mul, a, b); }

Tensor Tape::unary(OpKind kind, const Tensor& x, double (*fwd)(double),
                   double (*dfdx)(double, double)) {
  auto out = make_output(x.shape(), {&x});
  const auto& xv = x.node_->value;
  for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = fwd(xv[i]);
  record(kind, out, [xn = x.node_, dfdx](const Node& o, double s) {
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      xn->grad[i] += s * o.grad[i] * dfdx(xn->value[i], o.value[i]);
  });
  return Tensor(out);
}

Tensor Tape::sigmoid(const Tensor& x) {
  return unary(OpKind::sigmoid, x, sigmoid_fn, [](double, double y) { return y * (1.0 - y); });
}

Tensor Tape::tanh(const Tensor& x) {
  return unary(
      OpKind::tanh, x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor Tape::exp(const Tensor& x) {
  auto y = unary(
      OpKind::exp, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
  for (double v : y.data()) {
    if (!std::isfinite(v)) throw DomainError("exp: result overflows");
  }
  return y;
}

Tensor Tape::log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw DomainError("log: input must be strictly positive, got " + std::to_string(v));
  }
  return unary(
      OpKind::log, x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor Tape::negate(const Tensor& x) { return scale(x, -1.0); }

Tensor Tape::scale(const Tensor& x, double factor) {
  auto out = make_output(x.shape(), {&x});
  const auto& xv = x.node_->value;
  for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = factor * xv[i];
  record(factor == -1.0 ? OpKind::negate : OpKind::scale, out,
         [xn = x.node_, factor](const Node& o, double s) {
           for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += s * factor * o.grad[i];
         });
  return Tensor(out);
}

Tensor Tape::add_scalar(const Tensor& x, double value) {
  auto out = make_output(x.shape(), {&x});
  const auto& xv = x.node_->value;
  for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = xv[i] + value;
  record(OpKind::add_scalar, out, [xn = x.node_](const Node& o, double s) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += s * o.grad[i];
  });
  return Tensor(out);
}

Tensor Tape::maximum_const(const Tensor& x, double floor) {
  auto out = make_output(x.shape(), {&x});
  const auto& xv = x.node_->value;
  for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = std::max(xv[i], floor);
  record(OpKind::maximum_const, out, [xn = x.node_, floor](const Node& o, double s) {
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      if (xn->value[i] >= floor) xn->grad[i] += s * o.grad[i];
  });
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// Structural

Tensor Tape::concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column counts differ, " + shape_string(parts.front().shape()) +
                           " vs " + shape_string(p.shape()));
    }
    m += p.rows();
  }
  auto out = make_output({m, n}, parts);
  std::size_t offset = 0;
  std::vector<NodePtr> nodes;
  nodes.reserve(parts.size());
  for (const auto& p : parts) {
    std::copy(p.node_->value.begin(), p.node_->value.end(), out->value.begin() + offset);
    offset += p.numel();
    nodes.push_back(p.node_);
  }
  record(OpKind::concat_rows, out, [nodes = std::move(nodes)](const Node& o, double s) {
    std::size_t off = 0;
    for (const auto& node : nodes) {
      if (node->requires_grad)
        for (std::size_t i = 0; i < node->value.size(); ++i) node->grad[i] += s * o.grad[off + i];
      off += node->value.size();
    }
  });
  return Tensor(out);
}

Tensor Tape::slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank2(x, "slice_rows");
  if (count == 0 || begin + count > x.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_string(x.shape()));
  }
  const std::size_t n = x.cols();
  auto out = make_output({count, n}, {&x});
  const auto first = x.node_->value.begin() + static_cast<std::ptrdiff_t>(begin * n);
  std::copy(first, first + static_cast<std::ptrdiff_t>(count * n), out->value.begin());
  record(OpKind::slice_rows, out, [xn = x.node_, off = begin * n](const Node& o, double s) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[off + i] += s * o.grad[i];
  });
  return Tensor(out);
}

std::vector<Tensor> Tape::split_columns(const Tensor& x) {
  require_rank2(x, "split_columns");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<Tensor> out;
  out.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    auto col = make_output({m, 1}, {&x});
    for (std::size_t i = 0; i < m; ++i) col->value[i] = x.node_->value[i * n + j];
    record(OpKind::split_columns, col, [xn = x.node_, m, n, j](const Node& o, double s) {
      for (std::size_t i = 0; i < m; ++i) xn->grad[i * n + j] += s * o.grad[i];
    });
    out.push_back(Tensor(col));
  }
  return out;
}

Tensor Tape::concat_columns(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_columns: no operands");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) {
      throw DimensionError("concat_columns: row counts differ, " + shape_string(parts.front().shape()) +
                           " vs " + shape_string(p.shape()));
    }
    n += p.cols();
  }
  auto out = make_output({m, n}, parts);
  std::vector<NodePtr> nodes;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t k = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) out->value[i * n + offset + j] = p.node_->value[i * k + j];
    offset += k;
    nodes.push_back(p.node_);
  }
  record(OpKind::concat_columns, out, [nodes = std::move(nodes), m, n](const Node& o, double s) {
    std::size_t off = 0;
    for (const auto& node : nodes) {
      const std::size_t k = node->shape[1];
      if (node->requires_grad)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < k; ++j) node->grad[i * k + j] += s * o.grad[i * n + off + j];
      off += k;
    }
  });
  return Tensor(out);
}

Tensor Tape::scale_columns(const Tensor& x, std::span<const double> weights) {
  require_rank2(x, "scale_columns");
  const std::size_t m = x.rows(), n = x.cols();
  if (weights.size() != n) {
    throw DimensionError("scale_columns: " + std::to_string(weights.size()) + " weights for " +
                         shape_string(x.shape()));
  }
  auto out = make_output({m, n}, {&x});
  const auto& xv = x.node_->value;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out->value[i * n + j] = xv[i * n + j] * weights[j];
  record(OpKind::scale_columns, out,
         [xn = x.node_, w = std::vector<double>(weights.begin(), weights.end()), m, n](const Node& o,
                                                                                    double s) {
           for (std::size_t i = 0; i < m; ++i)
             for (std::size_t j = 0; j < n; ++j) xn->grad[i * n + j] += s * o.grad[i * n + j] * w[j];
         });
  return Tensor(out);
}

Tensor Tape::embedding(const Tensor& table, std::span<const std::size_t> ids) {
  require_rank2(table, "embedding");
  const std::size_t w = table.rows(), vocab = table.cols(), n = ids.size();
  if (n == 0) throw DimensionError("embedding: empty id list");
  for (auto id : ids) {
    if (id >= vocab) {
      throw IndexError("embedding: id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
  auto out = make_output({w, n}, {&table});
  const auto& tv = table.node_->value;
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < n; ++j) out->value[i * n + j] = tv[i * vocab + ids[j]];
  record(OpKind::embedding, out,
         [tn = table.node_, ids = std::vector<std::size_t>(ids.begin(), ids.end()), w, vocab, n](
             const Node& o, double s) {
           for (std::size_t i = 0; i < w; ++i)
             for (std::size_t j = 0; j < n; ++j) tn->grad[i * vocab + ids[j]] += s * o.grad[i * n + j];
         });
  return Tensor(out);
}

Tensor Tape::pick_columns(const std::vector<Tensor>& steps, std::span<const std::size_t> which) {
  if (steps.empty()) throw DimensionError("pick_columns: no steps");
  const Shape shape = steps.front().shape();
  require_rank2(steps.front(), "pick_columns");
  for (const auto& st : steps) {
    if (st.shape() != shape) {
      throw DimensionError("pick_columns: step shapes differ, " + shape_string(shape) + " vs " +
                           shape_string(st.shape()));
    }
  }
  const std::size_t m = shape[0], n = shape[1];
  if (which.size() != n) throw DimensionError("pick_columns: index count must equal column count");
  for (auto w : which) {
    if (w >= steps.size()) throw IndexError("pick_columns: step index out of range");
  }
  auto out = make_output(shape, steps);
  std::vector<NodePtr> nodes;
  nodes.reserve(steps.size());
  for (const auto& st : steps) nodes.push_back(st.node_);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out->value[i * n + j] = nodes[which[j]]->value[i * n + j];
  record(OpKind::pick_columns, out,
         [nodes = std::move(nodes), which = std::vector<std::size_t>(which.begin(), which.end()), m,
          n](const Node& o, double s) {
           for (std::size_t j = 0; j < n; ++j) {
             auto& src = *nodes[which[j]];
             if (!src.requires_grad) continue;
             for (std::size_t i = 0; i < m; ++i) src.grad[i * n + j] += s * o.grad[i * n + j];
           }
         });
  return Tensor(out);
}

Tensor Tape::softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                                   std::span<const double> weights) {
  require_rank2(logits, "softmax_cross_entropy");
  const std::size_t vocab = logits.rows(), n = logits.cols();
  if (targets.size() != n) throw DimensionError("softmax_cross_entropy: one target per column required");
  if (!weights.empty() && weights.size() != n) {
    throw DimensionError("softmax_cross_entropy: one weight per column required");
  }
  for (auto t : targets) {
    if (t >= vocab) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(t) + " outside " +
                       std::to_string(vocab) + " classes");
    }
  }
  auto out = make_output({1, n}, {&logits});
  const auto& lv = logits.node_->value;
  // probs[i*n+j] = softmax over column j; kept for backward.
  std::vector<double> probs(vocab * n);
  std::vector<double> w(n, 1.0);
  if (!weights.empty()) w.assign(weights.begin(), weights.end());
  for (std::size_t j = 0; j < n; ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < vocab; ++i) mx = std::max(mx, lv[i * n + j]);
    double z = 0.0;
    for (std::size_t i = 0; i < vocab; ++i) {
      const double e = std::exp(lv[i * n + j] - mx);
      probs[i * n + j] = e;
      z += e;
    }
    for (std::size_t i = 0; i < vocab; ++i) probs[i * n + j] /= z;
    const double lse = mx + std::log(z);
    out->value[j] = w[j] == 0.0 ? 0.0 : w[j] * (lse - lv[targets[j] * n + j]);
  }
  if (out->requires_grad) {
    record(OpKind::cross_entropy, out,
           [ln = logits.node_, probs = std::move(probs), w = std::move(w),
            t = std::vector<std::size_t>(targets.begin(), targets.end()), vocab,
            n](const Node& o, double s) {
             for (std::size_t j = 0; j < n; ++j) {
               const double g = s * o.grad[j] * w[j];
               if (g == 0.0) continue;
               for (std::size_t i = 0; i < vocab; ++i) ln->grad[i * n + j] += g * probs[i * n + j];
               ln->grad[t[j] * n + j] -= g;
             }
           });
  }
  return Tensor(out);
}

Tensor Tape::softmax_cross_entropy(const Tensor& logits, std::size_t target) {
  const bool vector_like = logits.rank() == 1 || (logits.rank() == 2 && logits.cols() == 1);
  if (!vector_like) {
    throw DimensionError("softmax_cross_entropy: expected a logit vector, got " +
                         shape_string(logits.shape()));
  }
  const Tensor column = logits.rank() == 1 ? reshape(logits, {logits.numel(), 1}) : logits;
  return sum(softmax_cross_entropy(column, std::span<const std::size_t>(&target, 1)));
}

Tensor Tape::reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  auto out = make_output(std::move(shape), {&x});
  out->value = x.node_->value;
  record(OpKind::reshape, out, [xn = x.node_](const Node& o, double s) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += s * o.grad[i];
  });
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// Reductions

Tensor Tape::sum(const Tensor& x) {
  auto out = make_output({1}, {&x});
  const auto& xv = x.node_->value;
  out->value[0] = std::accumulate(xv.begin(), xv.end(), 0.0);
  record(OpKind::sum, out, [xn = x.node_](const Node& o, double s) {
    for (auto& g : xn->grad) g += s * o.grad[0];
  });
  return Tensor(out);
}

Tensor Tape::mean(const Tensor& x) {
  auto out = make_output({1}, {&x});
  const auto& xv = x.node_->value;
  const double inv = 1.0 / static_cast<double>(xv.size());
  out->value[0] = std::accumulate(xv.begin(), xv.end(), 0.0) * inv;
  record(OpKind::mean, out, [xn = x.node_, inv](const Node& o, double s) {
    for (auto& g : xn->grad) g += s * o.grad[0] * inv;
  });
  return Tensor(out);
}

Tensor Tape::squared_l2_norm(const Tensor& x) {
  auto out = make_output({1}, {&x});
  const auto& xv = x.node_->value;
  out->value[0] = std::inner_product(xv.begin(), xv.end(), xv.begin(), 0.0);
  record(OpKind::squared_l2_norm, out, [xn = x.node_](const Node& o, double s) {
    for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += s * 2.0 * xn->value[i] * o.grad[0];
  });
  return Tensor(out);
}

Tensor Tape::sum_rows(const Tensor& x) {
  require_rank2(x, "sum_rows");
  const std::size_t m = x.rows(), n = x.cols();
  auto out = make_output({1, n}, {&x});
  const auto& xv = x.node_->value;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out->value[j] += xv[i * n + j];
  record(OpKind::sum_rows, out, [xn = x.node_, m, n](const Node& o, double s) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) xn->grad[i * n + j] += s * o.grad[j];
  });
  return Tensor(out);
}

Tensor Tape::mean_columns(const Tensor& x) {
  require_rank2(x, "mean_columns");
  const std::size_t m = x.rows(), n = x.cols();
  auto out = make_output({m}, {&x});
  const auto& xv = x.node_->value;
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += xv[i * n + j];
    out->value[i] = acc * inv;
  }
  record(OpKind::mean_columns, out, [xn = x.node_, m, n, inv](const Node& o, double s) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) xn->grad[i * n + j] += s * o.grad[i] * inv;
  });
  return Tensor(out);
}

}  // namespace fdvae
