#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dmn/errors.hpp"

namespace dmn {

class Tape;

// Dense row-major tensor. Off-tape tensors are plain values; tensors produced
// by operations on a Tape additionally carry the node handle that ties them to
// the recorded graph.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  Tape* tape = nullptr;
  int node = -1;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> v)
      : shape(std::move(s)), values(std::move(v)) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    if (n != values.size())
      throw DimensionError("tensor shape " + shape_string() + " does not hold " +
                           std::to_string(values.size()) + " values");
  }

  static Tensor vec(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor scalar(double x) { return Tensor({1}, {x}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }
  static Tensor zeros(std::vector<std::size_t> s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  bool is_vector() const { return shape.size() == 1; }
  bool is_matrix() const { return shape.size() == 2; }
  bool is_scalar() const { return values.size() == 1; }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }
  double operator[](std::size_t i) const { return values[i]; }
  bool on_tape() const { return tape != nullptr && node >= 0; }

  std::string shape_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
  }
};

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

enum class Op : unsigned char {
  kLeaf,
  kMatVec,
  kAdd,
  kSub,
  kMul,
  kSigmoid,
  kTanh,
  kRelu,
  kAbs,
  kSoftmax,
  kConcat,
  kCrossEntropy,
  kScale,
  kSum,
  kDot,
  kSlice,
};

enum class EwOp : unsigned char { add, sub, mul };
enum class UnaryOp : unsigned char { sigmoid, tanh, relu, abs };

namespace detail {
struct OpBuilder;
}

// Reverse-mode tape: an ordered record of operations with parent references.
// Nodes are appended in topological order by construction; backward() walks
// the record once in reverse and accumulates vector-Jacobian products.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Debug hook for fault-injection tests: double the tanh backward rule.
  bool corrupt_tanh_backward = false;

  Tensor leaf(const Tensor& t) {
    Node n;
    n.op = Op::kLeaf;
    n.shape = t.shape;
    n.values = t.values;
    return wrap(push(std::move(n)));
  }

  std::size_t node_count() const { return nodes_.size(); }

  void reset() {
    nodes_.clear();
    grads_.clear();
    ran_backward_ = false;
  }

  // Accumulates d(root)/d(node) for every node on the tape. Unreached nodes
  // keep zero gradients. Each call starts from a clean slate.
  void backward(const Tensor& root) {
    if (!root.on_tape() || root.tape != this)
      throw DimensionError("backward: root is not a node of this tape");
    if (!root.is_scalar())
      throw DimensionError("backward: root must be scalar, got shape " + root.shape_string());
    grads_.assign(nodes_.size(), {});
    for (std::size_t i = 0; i < nodes_.size(); ++i) grads_[i].assign(nodes_[i].values.size(), 0.0);
    grads_[static_cast<std::size_t>(root.node)][0] = 1.0;
    for (int i = root.node; i >= 0; --i) backprop(static_cast<std::size_t>(i));
    ran_backward_ = true;
  }

  const std::vector<double>& grad(const Tensor& t) const {
    if (!t.on_tape() || t.tape != this)
      throw DimensionError("grad: tensor is not a node of this tape");
    if (!ran_backward_) throw std::logic_error("grad: backward() has not run");
    return grads_[static_cast<std::size_t>(t.node)];
  }

 private:
  friend struct detail::OpBuilder;

  struct Node {
    Op op = Op::kLeaf;
    int a = -1;
    int b = -1;
    std::vector<int> parts;            // concat parents
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> cache;         // cross_entropy: softmax probabilities
    std::size_t aux = 0;               // slice offset / cross_entropy target
  };

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool ran_backward_ = false;

  int push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  Tensor wrap(int id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    Tensor t(n.shape, n.values);
    t.tape = this;
    t.node = id;
    return t;
  }

  const std::vector<double>& vals(int id) const {
    return nodes_[static_cast<std::size_t>(id)].values;
  }

  void backprop(std::size_t i) {
    const Node& n = nodes_[i];
    const std::vector<double>& g = grads_[i];
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatVec: {
        const std::vector<double>& w = vals(n.a);
        const std::vector<double>& x = vals(n.b);
        std::vector<double>& gw = grads_[static_cast<std::size_t>(n.a)];
        std::vector<double>& gx = grads_[static_cast<std::size_t>(n.b)];
        const std::size_t m = n.values.size();
        const std::size_t k = x.size();
        for (std::size_t r = 0; r < m; ++r) {
          const double gr = g[r];
          if (gr == 0.0) continue;
          const double* wrow = w.data() + r * k;
          double* gwrow = gw.data() + r * k;
          for (std::size_t c = 0; c < k; ++c) {
            gwrow[c] += gr * x[c];
            gx[c] += gr * wrow[c];
          }
        }
        break;
      }
      case Op::kAdd: {
        std::vector<double>& ga = grads_[static_cast<std::size_t>(n.a)];
        std::vector<double>& gb = grads_[static_cast<std::size_t>(n.b)];
        for (std::size_t j = 0; j < g.size(); ++j) {
          ga[j] += g[j];
          gb[j] += g[j];
        }
        break;
      }
      case Op::kSub: {
        std::vector<double>& ga = grads_[static_cast<std::size_t>(n.a)];
        std::vector<double>& gb = grads_[static_cast<std::size_t>(n.b)];
        for (std::size_t j = 0; j < g.size(); ++j) {
          ga[j] += g[j];
          gb[j] -= g[j];
        }
        break;
      }
      case Op::kMul: {
        const std::vector<double>& va = vals(n.a);
        const std::vector<double>& vb = vals(n.b);
        std::vector<double>& ga = grads_[static_cast<std::size_t>(n.a)];
        std::vector<double>& gb = grads_[static_cast<std::size_t>(n.b)];
        for (std::size_t j = 0; j < g.size(); ++j) {
          ga[j] += g[j] * vb[j];
          gb[j] += g[j] * va[j];
        }
        break;
      }
      case Op::kSigmoid: {
        std::vector<double>& ga = grads_[static_cast<std::size_t>(n.a)];
        for (std::size_t j = 0; j < g.size(); ++j) {
          const double s = n.values[j];
          ga[j] += g[j] * s * (1.0 - s);
        }
        break;
      }
      case Op::kTanh: {
        std::vector<double>& ga = grads_[static_cast<std::size_t>(n.a)];
        const double fault = corrupt_tanh_backward ? 2.0 : 1.0;
        for (std::size_t j = 0; j < g.size(); ++j) {
          const double t = n.values[j];
          ga[j] += fault * g[j] * (1.0 - t * t);
        }
        break;
      }
      case Op::kRelu: {
        const std::vector<double>& va = vals(n.a);
        std::vector<double>& ga = grads_[static_cast<std::size_t>(n.a)];
        for (std::size_t j = 0; j < g.size(); ++j)
          if (va[j] > 0.0) ga[j] += g[j];  // subgradient at 0 is 0
        break;
      }
      case Op::kAbs: {
        const std::vector<double>& va = vals(n.a);
        std::vector<double>& ga = grads_[static_cast<std::size_t>(n.a)];
        for (std::size_t j = 0; j < g.size(); ++j) {
          if (va[j] > 0.0)
            ga[j] += g[j];
          else if (va[j] < 0.0)
            ga[j] -= g[j];  // subgradient at 0 is 0
        }
        break;
      }
      case Op::kSoftmax: {
        std::vector<double>& ga = grads_[static_cast<std::size_t>(n.a)];
        double dotsg = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) dotsg += n.values[j] * g[j];
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += n.values[j] * (g[j] - dotsg);
        break;
      }
      case Op::kConcat: {
        std::size_t off = 0;
        for (int pid : n.parts) {
          std::vector<double>& gp = grads_[static_cast<std::size_t>(pid)];
          for (std::size_t j = 0; j < gp.size(); ++j) gp[j] += g[off + j];
          off += gp.size();
        }
        break;
      }
      case Op::kCrossEntropy: {
        std::vector<double>& ga = grads_[static_cast<std::size_t>(n.a)];
        const double g0 = g[0];
        for (std::size_t j = 0; j < ga.size(); ++j) {
          double p = n.cache[j];
          if (j == n.aux) p -= 1.0;
          ga[j] += g0 * p;
        }
        break;
      }
      case Op::kScale: {
        const std::vector<double>& vv = vals(n.b);
        const double s = vals(n.a)[0];
        std::vector<double>& gs = grads_[static_cast<std::size_t>(n.a)];
        std::vector<double>& gv = grads_[static_cast<std::size_t>(n.b)];
        double acc = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) {
          acc += g[j] * vv[j];
          gv[j] += s * g[j];
        }
        gs[0] += acc;
        break;
      }
      case Op::kSum: {
        std::vector<double>& ga = grads_[static_cast<std::size_t>(n.a)];
        for (std::size_t j = 0; j < ga.size(); ++j) ga[j] += g[0];
        break;
      }
      case Op::kDot: {
        const std::vector<double>& va = vals(n.a);
        const std::vector<double>& vb = vals(n.b);
        std::vector<double>& ga = grads_[static_cast<std::size_t>(n.a)];
        std::vector<double>& gb = grads_[static_cast<std::size_t>(n.b)];
        const double g0 = g[0];
        for (std::size_t j = 0; j < va.size(); ++j) {
          ga[j] += g0 * vb[j];
          gb[j] += g0 * va[j];
        }
        break;
      }
      case Op::kSlice: {
        std::vector<double>& ga = grads_[static_cast<std::size_t>(n.a)];
        for (std::size_t j = 0; j < g.size(); ++j) ga[n.aux + j] += g[j];
        break;
      }
    }
  }
};

namespace detail {

struct OpBuilder {
  // Resolve the tape shared by the operands (nullptr when all are off-tape)
  // and lift any off-tape operand onto it as a constant leaf.
  static Tape* resolve(std::initializer_list<const Tensor*> args) {
    Tape* tape = nullptr;
    for (const Tensor* t : args) {
      if (!t->on_tape()) continue;
      if (tape != nullptr && tape != t->tape)
        throw std::logic_error("operation mixes tensors from two tapes");
      tape = t->tape;
    }
    return tape;
  }

  static int node_of(Tape* tape, const Tensor& t) {
    if (t.on_tape()) return t.node;
    Tensor lifted = tape->leaf(t);
    return lifted.node;
  }

  static Tensor emit1(Op op, std::vector<std::size_t> shape, std::vector<double> values,
                      const Tensor& a, std::size_t aux = 0, std::vector<double> cache = {}) {
    Tape* tape = resolve({&a});
    if (tape == nullptr) return Tensor(std::move(shape), std::move(values));
    Tape::Node n;
    n.op = op;
    n.a = node_of(tape, a);
    n.shape = std::move(shape);
    n.values = std::move(values);
    n.cache = std::move(cache);
    n.aux = aux;
    return tape->wrap(tape->push(std::move(n)));
  }

  static Tensor emit2(Op op, std::vector<std::size_t> shape, std::vector<double> values,
                      const Tensor& a, const Tensor& b) {
    Tape* tape = resolve({&a, &b});
    if (tape == nullptr) return Tensor(std::move(shape), std::move(values));
    Tape::Node n;
    n.op = op;
    n.a = node_of(tape, a);
    n.b = node_of(tape, b);
    n.shape = std::move(shape);
    n.values = std::move(values);
    return tape->wrap(tape->push(std::move(n)));
  }

  static Tensor emit_concat(std::vector<std::size_t> shape, std::vector<double> values,
                            const std::vector<Tensor>& parts) {
    Tape* tape = nullptr;
    for (const Tensor& p : parts) {
      if (!p.on_tape()) continue;
      if (tape != nullptr && tape != p.tape)
        throw std::logic_error("operation mixes tensors from two tapes");
      tape = p.tape;
    }
    if (tape == nullptr) return Tensor(std::move(shape), std::move(values));
    Tape::Node n;
    n.op = Op::kConcat;
    n.parts.reserve(parts.size());
    for (const Tensor& p : parts) n.parts.push_back(node_of(tape, p));
    n.shape = std::move(shape);
    n.values = std::move(values);
    return tape->wrap(tape->push(std::move(n)));
  }
};

}  // namespace detail

inline Tensor matvec(const Tensor& w, const Tensor& x) {
  if (!w.is_matrix() || !x.is_vector())
    throw DimensionError("matvec expects matrix and vector, got " + w.shape_string() + " and " +
                         x.shape_string());
  if (w.cols() != x.size())
    throw DimensionError("matvec: inner dimensions disagree between " + w.shape_string() +
                         " and " + x.shape_string());
  const std::size_t m = w.rows(), k = w.cols();
  std::vector<double> out(m, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = w.values.data() + r * k;
    double acc = 0.0;
    for (std::size_t c = 0; c < k; ++c) acc += row[c] * x.values[c];
    out[r] = acc;
  }
  return detail::OpBuilder::emit2(Op::kMatVec, {m}, std::move(out), w, x);
}

inline Tensor ew(EwOp op, const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    throw DimensionError("elementwise op: shapes differ, " + a.shape_string() + " vs " +
                         b.shape_string());
  std::vector<double> out(a.size());
  switch (op) {
    case EwOp::add:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values[i] + b.values[i];
      return detail::OpBuilder::emit2(Op::kAdd, a.shape, std::move(out), a, b);
    case EwOp::sub:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values[i] - b.values[i];
      return detail::OpBuilder::emit2(Op::kSub, a.shape, std::move(out), a, b);
    case EwOp::mul:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values[i] * b.values[i];
      return detail::OpBuilder::emit2(Op::kMul, a.shape, std::move(out), a, b);
  }
  throw std::logic_error("unreachable");
}

inline Tensor add(const Tensor& a, const Tensor& b) { return ew(EwOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return ew(EwOp::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return ew(EwOp::mul, a, b); }

inline Tensor unary(UnaryOp op, const Tensor& a) {
  std::vector<double> out(a.size());
  switch (op) {
    case UnaryOp::sigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a.values[i]));
      return detail::OpBuilder::emit1(Op::kSigmoid, a.shape, std::move(out), a);
    case UnaryOp::tanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.values[i]);
      return detail::OpBuilder::emit1(Op::kTanh, a.shape, std::move(out), a);
    case UnaryOp::relu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values[i] > 0.0 ? a.values[i] : 0.0;
      return detail::OpBuilder::emit1(Op::kRelu, a.shape, std::move(out), a);
    case UnaryOp::abs:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(a.values[i]);
      return detail::OpBuilder::emit1(Op::kAbs, a.shape, std::move(out), a);
  }
  throw std::logic_error("unreachable");
}

inline Tensor sigmoid(const Tensor& a) { return unary(UnaryOp::sigmoid, a); }
inline Tensor tanh(const Tensor& a) { return unary(UnaryOp::tanh, a); }
inline Tensor relu(const Tensor& a) { return unary(UnaryOp::relu, a); }
inline Tensor abs(const Tensor& a) { return unary(UnaryOp::abs, a); }

// Softmax with max-subtraction; the plain exponential form overflows on
// large scores.
inline Tensor softmax(const Tensor& z) {
  if (!z.is_vector() || z.size() == 0)
    throw DimensionError("softmax expects a nonempty vector, got " + z.shape_string());
  const double m = *std::max_element(z.values.begin(), z.values.end());
  std::vector<double> out(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(z.values[i] - m);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return detail::OpBuilder::emit1(Op::kSoftmax, z.shape, std::move(out), z);
}

inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw InputError("concat: empty part list");
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (!p.is_vector())
      throw DimensionError("concat expects vectors, got " + p.shape_string());
    total += p.size();
  }
  std::vector<double> out;
  out.reserve(total);
  for (const Tensor& p : parts) out.insert(out.end(), p.values.begin(), p.values.end());
  return detail::OpBuilder::emit_concat({total}, std::move(out), parts);
}

// -log softmax(logits)[target], computed via a stable log-sum-exp.
inline Tensor cross_entropy(const Tensor& logits, std::size_t target) {
  if (!logits.is_vector() || logits.size() == 0)
    throw DimensionError("cross_entropy expects a nonempty logit vector, got " +
                         logits.shape_string());
  if (target >= logits.size())
    throw IndexError("cross_entropy: target " + std::to_string(target) + " out of range for " +
                     std::to_string(logits.size()) + " classes");
  const double m = *std::max_element(logits.values.begin(), logits.values.end());
  double total = 0.0;
  std::vector<double> probs(logits.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    probs[i] = std::exp(logits.values[i] - m);
    total += probs[i];
  }
  for (double& p : probs) p /= total;
  const double loss = std::log(total) + m - logits.values[target];
  return detail::OpBuilder::emit1(Op::kCrossEntropy, {1}, {loss}, logits, target,
                                  std::move(probs));
}

// Broadcast product of a 1-element tensor with a vector.
inline Tensor scale(const Tensor& s, const Tensor& v) {
  if (!s.is_scalar())
    throw DimensionError("scale expects a scalar first argument, got " + s.shape_string());
  if (!v.is_vector())
    throw DimensionError("scale expects a vector second argument, got " + v.shape_string());
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s.values[0] * v.values[i];
  return detail::OpBuilder::emit2(Op::kScale, v.shape, std::move(out), s, v);
}

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double x : a.values) acc += x;
  return detail::OpBuilder::emit1(Op::kSum, {1}, {acc}, a);
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape || !a.is_vector())
    throw DimensionError("dot expects equal-shape vectors, got " + a.shape_string() + " and " +
                         b.shape_string());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.values[i] * b.values[i];
  return detail::OpBuilder::emit2(Op::kDot, {1}, {acc}, a, b);
}

// Contiguous window of the flattened tensor, viewed as a vector.
inline Tensor slice(const Tensor& t, std::size_t offset, std::size_t len) {
  if (offset + len > t.size())
    throw IndexError("slice [" + std::to_string(offset) + "," + std::to_string(offset + len) +
                     ") out of range for size " + std::to_string(t.size()));
  std::vector<double> out(t.values.begin() + static_cast<std::ptrdiff_t>(offset),
                          t.values.begin() + static_cast<std::ptrdiff_t>(offset + len));
  return detail::OpBuilder::emit1(Op::kSlice, {len}, std::move(out), t, offset);
}

// Row r of a matrix as a vector.
inline Tensor row(const Tensor& m, std::size_t r) {
  if (!m.is_matrix()) throw DimensionError("row expects a matrix, got " + m.shape_string());
  if (r >= m.rows())
    throw IndexError("row " + std::to_string(r) + " out of range for " + m.shape_string());
  return slice(m, r * m.cols(), m.cols());
}

}  // namespace dmn
