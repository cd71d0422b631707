// SPDX-License-Identifier: Apache-2.0
#include "holocell/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "holocell/error.hpp"
#include "holocell/random.hpp"

namespace holocell::ad {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

enum class Bcast { kFull, kRow, kScalar };

struct BinaryPlan {
  std::vector<std::size_t> shape;
  std::size_t cols = 1;
  Bcast a = Bcast::kFull;
  Bcast b = Bcast::kFull;
};

bool is_row_of(const Tensor& row, const Tensor& full) {
  return row.cols() == full.cols() && row.rows() == 1 &&
         (row.rank() == 1 || (row.rank() == 2 && row.shape()[0] == 1));
}

BinaryPlan plan_binary(const Tensor& a, const Tensor& b, const char* op) {
  BinaryPlan plan;
  if (a.same_shape(b)) {
    plan.shape = a.shape();
  } else if (b.size() == 1) {
    plan.shape = a.shape();
    plan.b = Bcast::kScalar;
  } else if (a.size() == 1) {
    plan.shape = b.shape();
    plan.a = Bcast::kScalar;
  } else if (is_row_of(b, a)) {
    plan.shape = a.shape();
    plan.b = Bcast::kRow;
  } else if (is_row_of(a, b)) {
    plan.shape = b.shape();
    plan.a = Bcast::kRow;
  } else {
    throw ContractViolation(std::string(op) + ": incompatible shapes " + a.shape_string() +
                            " and " + b.shape_string());
  }
  plan.cols = plan.shape.empty() ? 1 : plan.shape.back();
  return plan;
}

inline std::size_t index_of(Bcast mode, std::size_t i, std::size_t cols) {
  switch (mode) {
    case Bcast::kFull: return i;
    case Bcast::kRow: return i % cols;
    case Bcast::kScalar: return 0;
  }
  return 0;
}

void same_tape(Var a, Var b, const char* op) {
  require(a.valid() && b.valid(), [&] { return std::string(op) + ": invalid variable"; });
  require(a.tape() == b.tape(), [&] {
    return std::string(op) + ": operands live on different tapes";
  });
}

// out = f(a, b); backward adds g * da(a, b, out) and g * db(a, b, out).
template <class F, class DA, class DB>
Var binary(Var a, Var b, const char* name, F f, DA da, DB db) {
  same_tape(a, b, name);
  Tape& tape = *a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const BinaryPlan plan = plan_binary(av, bv, name);
  Tensor out(plan.shape);
  const std::size_t n = out.size();
  if (plan.a == Bcast::kFull && plan.b == Bcast::kFull) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i)
      out[i] = f(av[index_of(plan.a, i, plan.cols)], bv[index_of(plan.b, i, plan.cols)]);
  }
  const std::size_t ia = a.id(), ib = b.id(), self = tape.size();
  const bool ga = a.needs_grad(), gb = b.needs_grad();
  return tape.push(std::move(out), ga || gb, [=](Tape& t) {
    const Tensor& g = t.grad(self);
    const Tensor& o = t.value(self);
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    const std::size_t size = g.size();
    if (ga) {
      Tensor& gx = t.grad_buffer(ia);
      for (std::size_t i = 0; i < size; ++i) {
        const std::size_t xi = index_of(plan.a, i, plan.cols);
        const std::size_t yi = index_of(plan.b, i, plan.cols);
        gx[xi] += g[i] * da(x[xi], y[yi], o[i]);
      }
    }
    if (gb) {
      Tensor& gy = t.grad_buffer(ib);
      for (std::size_t i = 0; i < size; ++i) {
        const std::size_t xi = index_of(plan.a, i, plan.cols);
        const std::size_t yi = index_of(plan.b, i, plan.cols);
        gy[yi] += g[i] * db(x[xi], y[yi], o[i]);
      }
    }
  });
}

// out = f(a); backward adds g * d(a, out).
template <class F, class D>
Var unary(Var a, F f, D d) {
  require(a.valid(), "unary op: invalid variable");
  Tape& tape = *a.tape();
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::size_t ia = a.id(), self = tape.size();
  return tape.push(std::move(out), a.needs_grad(), [=](Tape& t) {
    const Tensor& g = t.grad(self);
    const Tensor& o = t.value(self);
    const Tensor& x = t.value(ia);
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(x[i], o[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(data_.size() == product(shape_), [&] {
    return "Tensor: data length " + std::to_string(data_.size()) + " does not match shape " +
           shape_string();
  });
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::needs_grad() const { return tape_->needs_grad(id_); }

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::variable(Tensor value) { return push(std::move(value), true, nullptr); }

Var Tape::push(Tensor value, bool needs_grad, Backward backward) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs_grad;
  if (needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.size() != node.value.size() || !node.grad.same_shape(node.value))
    node.grad = Tensor(node.value.shape(), 0.0);
  return node.grad;
}

void Tape::backward(Var root) {
  require(root.tape() == this, "backward: root belongs to another tape");
  require(value(root.id()).size() == 1, [&] {
    return "backward: root must be scalar, got shape " + value(root.id()).shape_string();
  });
  for (Node& node : nodes_) node.grad = Tensor();
  deferred_.clear();
  if (!nodes_[root.id()].needs_grad) return;
  grad_buffer(root.id())[0] = 1.0;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.needs_grad || !node.backward || node.grad.size() == 0) continue;
    node.backward(*this);
  }
  for (const auto& [leaf, terms] : deferred_) flush_outer(leaf, terms);
  deferred_.clear();
}

void Tape::defer_outer(std::size_t leaf, std::size_t a, std::size_t g) {
  for (auto& [id, terms] : deferred_)
    if (id == leaf) {
      terms.push_back({a, g});
      return;
    }
  deferred_.push_back({leaf, {{a, g}}});
}

void Tape::flush_outer(std::size_t leaf, const std::vector<Outer>& terms) {
  Tensor& grad = grad_buffer(leaf);
  const std::size_t k = grad.rows(), n = grad.cols();
  double* GB = grad.data().data();
  // Blocks of output rows small enough to stay in cache across all terms.
  const std::size_t block = std::max<std::size_t>(1, 32768 / std::max<std::size_t>(n, 1));
  for (std::size_t p0 = 0; p0 < k; p0 += block) {
    const std::size_t p1 = std::min(k, p0 + block);
    for (const Outer& term : terms) {
      const Tensor& av = nodes_[term.a].value;
      const double* A = av.data().data();
      const double* G = nodes_[term.g].grad.data().data();
      const std::size_t m = av.rows();
      for (std::size_t p = p0; p < p1; ++p) {
        double* gb_row = GB + p * n;
        for (std::size_t i = 0; i < m; ++i) {
          const double aip = A[i * k + p];
          if (aip == 0.0) continue;
          const double* g = G + i * n;
          for (std::size_t j = 0; j < n; ++j) gb_row[j] += aip * g[j];
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Element-wise ops

Var add(Var a, Var b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double o) { return -o / y; });
}

Var relu_shifted(Var x, Var b) {
  Tape& tape = *x.tape();
  Var out = binary(
      x, b, "relu_shifted", [](double u, double v) { return std::max(0.0, u + v); },
      [](double u, double v, double) { return u + v > 0.0 ? 1.0 : 0.0; },
      [](double u, double v, double) { return u + v > 0.0 ? 1.0 : 0.0; });
  if (tape.branch_tracking()) {
    const Tensor& o = out.value();
    const Tensor& xv = x.value();
    const Tensor& bv = b.value();
    const BinaryPlan plan = plan_binary(xv, bv, "relu_shifted");
    for (std::size_t i = 0; i < o.size(); ++i)
      tape.record_branch(xv[index_of(plan.a, i, plan.cols)] +
                             bv[index_of(plan.b, i, plan.cols)] >
                         0.0);
  }
  return out;
}

Var scale(Var a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double o) { return o * (1.0 - o); });
}

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double o) { return 1.0 - o * o; });
}

Var sqrt(Var a) {
  return unary(
      a, [](double x) { return std::sqrt(x); },
      [](double, double o) { return o > 0.0 ? 0.5 / o : 0.0; });
}

Var square(Var a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var cos(Var a) {
  return unary(
      a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

Var sin(Var a) {
  return unary(
      a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Var maximum(Var x, double floor) {
  Tape& tape = *x.tape();
  if (tape.branch_tracking())
    for (double v : x.value().data()) tape.record_branch(v > floor);
  return unary(
      x, [floor](double v) { return std::max(floor, v); },
      [floor](double v, double) { return v > floor ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra and structural ops

Var matmul(Var a, Var b) {
  same_tape(a, b, "matmul");
  Tape& tape = *a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.rank() >= 1 && av.rank() <= 2 && bv.rank() == 2, [&] {
    return "matmul: expected [M,K] x [K,N], got " + av.shape_string() + " x " + bv.shape_string();
  });
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  require(bv.shape()[0] == k, [&] {
    return "matmul: inner dimensions differ, " + av.shape_string() + " x " + bv.shape_string();
  });
  Tensor out({m, n}, 0.0);
  const double* A = av.data().data();
  const double* B = bv.data().data();
  double* C = out.data().data();
  // Rows of B outermost: each is streamed once for the whole batch.
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = B + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      double* c = C + i * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += aip * brow[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id(), self = tape.size();
  const bool ga = a.needs_grad(), gb = b.needs_grad();
  return tape.push(std::move(out), ga || gb, [=](Tape& t) {
    const double* G = t.grad(self).data().data();
    const double* A = t.value(ia).data().data();
    const double* B = t.value(ib).data().data();
    if (ga) {
      double* GA = t.grad_buffer(ia).data().data();
      for (std::size_t p = 0; p < k; ++p) {
        const double* brow = B + p * n;
        for (std::size_t i = 0; i < m; ++i) {
          const double* g = G + i * n;
          // Eight partial sums so the loop vectorizes.
          double acc[8] = {};
          std::size_t j = 0;
          for (; j + 8 <= n; j += 8)
            for (std::size_t q = 0; q < 8; ++q) acc[q] += g[j + q] * brow[j + q];
          for (; j < n; ++j) acc[0] += g[j] * brow[j];
          GA[i * k + p] += ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
                           ((acc[4] + acc[5]) + (acc[6] + acc[7]));
        }
      }
    }
    if (gb && t.is_leaf(ib)) {
      t.defer_outer(ib, ia, self);
    } else if (gb) {
      double* GB = t.grad_buffer(ib).data().data();
      for (std::size_t p = 0; p < k; ++p) {
        double* gb_row = GB + p * n;
        for (std::size_t i = 0; i < m; ++i) {
          const double aip = A[i * k + p];
          if (aip == 0.0) continue;
          const double* g = G + i * n;
          for (std::size_t j = 0; j < n; ++j) gb_row[j] += aip * g[j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  Tape& tape = *a.tape();
  const Tensor& av = a.value();
  require(av.rank() == 2, [&] { return "transpose: expected a matrix, got " + av.shape_string(); });
  const std::size_t m = av.shape()[0], n = av.shape()[1];
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
  const std::size_t ia = a.id(), self = tape.size();
  return tape.push(std::move(out), a.needs_grad(), [=](Tape& t) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx.at(i, j) += g.at(j, i);
  });
}

Var concat(std::span<const Var> parts) {
  require(!parts.empty(), "concat: no parts");
  Tape& tape = *parts.front().tape();
  const std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids, widths;
  bool any_grad = false;
  for (const Var& p : parts) {
    require(p.tape() == &tape, "concat: parts live on different tapes");
    require(p.value().rows() == rows, [&] {
      return "concat: row counts differ (" + p.value().shape_string() + " vs " +
             parts.front().value().shape_string() + ")";
    });
    ids.push_back(p.id());
    widths.push_back(p.value().cols());
    cols += p.value().cols();
    any_grad = any_grad || p.needs_grad();
  }
  std::vector<std::size_t> shape = parts.front().value().shape();
  if (shape.empty()) shape = {1};
  shape.back() = cols;
  Tensor out(shape);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t w = v.cols();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data().data() + r * w, w, out.data().data() + r * cols + offset);
    offset += w;
  }
  const std::size_t self = tape.size();
  return tape.push(std::move(out), any_grad, [=](Tape& t) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t q = 0; q < ids.size(); ++q) {
      const std::size_t w = widths[q];
      if (t.needs_grad(ids[q])) {
        Tensor& gx = t.grad_buffer(ids[q]);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* src = g.data().data() + r * cols + off;
          double* dst = gx.data().data() + r * w;
          for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
        }
      }
      off += w;
    }
  });
}

Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var slice(Var a, std::size_t begin, std::size_t end) {
  Tape& tape = *a.tape();
  const Tensor& av = a.value();
  const std::size_t cols = av.cols(), rows = av.rows();
  require(begin <= end && end <= cols, [&] {
    return "slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
           av.shape_string();
  });
  const std::size_t w = end - begin;
  std::vector<std::size_t> shape = av.shape();
  if (shape.empty()) shape = {1};
  shape.back() = w;
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(av.data().data() + r * cols + begin, w, out.data().data() + r * w);
  const std::size_t ia = a.id(), self = tape.size();
  return tape.push(std::move(out), a.needs_grad(), [=](Tape& t) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* src = g.data().data() + r * w;
      double* dst = gx.data().data() + r * cols + begin;
      for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
    }
  });
}

Var gather(Var a, std::vector<std::size_t> index) {
  Tape& tape = *a.tape();
  const Tensor& av = a.value();
  const std::size_t cols = av.cols(), rows = av.rows(), w = index.size();
  for (std::size_t j : index)
    require(j < cols, [&] {
      return "gather: index " + std::to_string(j) + " outside " + av.shape_string();
    });
  std::vector<std::size_t> shape = av.shape();
  if (shape.empty()) shape = {1};
  shape.back() = w;
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = av.data().data() + r * cols;
    double* dst = out.data().data() + r * w;
    for (std::size_t j = 0; j < w; ++j) dst[j] = src[index[j]];
  }
  const std::size_t ia = a.id(), self = tape.size();
  return tape.push(std::move(out), a.needs_grad(), [=, index = std::move(index)](Tape& t) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* src = g.data().data() + r * w;
      double* dst = gx.data().data() + r * cols;
      for (std::size_t j = 0; j < w; ++j) dst[index[j]] += src[j];
    }
  });
}

Var scatter_add(Var a, std::vector<std::size_t> index, std::size_t out_cols) {
  Tape& tape = *a.tape();
  const Tensor& av = a.value();
  const std::size_t cols = av.cols(), rows = av.rows();
  require(index.size() == cols, "scatter_add: index length must equal input columns");
  for (std::size_t j : index)
    require(j < out_cols, [&] {
      return "scatter_add: index " + std::to_string(j) + " outside output";
    });
  std::vector<std::size_t> shape = av.shape();
  if (shape.empty()) shape = {1};
  shape.back() = out_cols;
  Tensor out(shape, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = av.data().data() + r * cols;
    double* dst = out.data().data() + r * out_cols;
    for (std::size_t j = 0; j < cols; ++j) dst[index[j]] += src[j];
  }
  const std::size_t ia = a.id(), self = tape.size();
  return tape.push(std::move(out), a.needs_grad(), [=, index = std::move(index)](Tape& t) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* src = g.data().data() + r * out_cols;
      double* dst = gx.data().data() + r * cols;
      for (std::size_t j = 0; j < cols; ++j) dst[j] += src[index[j]];
    }
  });
}

Var sum(Var a) {
  Tape& tape = *a.tape();
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const std::size_t ia = a.id(), self = tape.size();
  return tape.push(Tensor::scalar(total), a.needs_grad(), [=](Tape& t) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad_buffer(ia).data()) v += g;
  });
}

Var sum(Var a, int axis) {
  Tape& tape = *a.tape();
  const Tensor& av = a.value();
  require(axis == 0 || axis == 1, "sum: axis must be 0 or 1");
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out = axis == 0 ? Tensor({cols}, 0.0) : Tensor({rows}, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[axis == 0 ? c : r] += av[r * cols + c];
  const std::size_t ia = a.id(), self = tape.size();
  return tape.push(std::move(out), a.needs_grad(), [=](Tape& t) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[axis == 0 ? c : r];
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  require(n > 0, "mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var softmax_cross_entropy(Var logits, std::span<const int> targets,
                          std::span<const double> weights) {
  Tape& tape = *logits.tape();
  const Tensor& lv = logits.value();
  const std::size_t rows = lv.rows(), v = lv.cols();
  require(targets.size() == rows && weights.size() == rows,
          "softmax_cross_entropy: need one target and weight per row");
  Tensor probs({rows, v});
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = lv.data().data() + r * v;
    const double zmax = *std::max_element(z, z + v);
    double norm = 0.0;
    for (std::size_t c = 0; c < v; ++c) norm += std::exp(z[c] - zmax);
    for (std::size_t c = 0; c < v; ++c) probs.at(r, c) = std::exp(z[c] - zmax) / norm;
    if (weights[r] == 0.0) continue;
    require(targets[r] >= 0 && static_cast<std::size_t>(targets[r]) < v, [&] {
      return "softmax_cross_entropy: target id " + std::to_string(targets[r]) + " out of range";
    });
    total += weights[r] * (zmax + std::log(norm) - z[targets[r]]);
  }
  const std::size_t il = logits.id(), self = tape.size();
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  return tape.push(Tensor::scalar(total), logits.needs_grad(),
                   [=, probs = std::move(probs), tgt = std::move(tgt),
                    w = std::move(w)](Tape& t) {
                     const double g = t.grad(self)[0];
                     Tensor& gx = t.grad_buffer(il);
                     for (std::size_t r = 0; r < rows; ++r) {
                       if (w[r] == 0.0) continue;
                       const double k = g * w[r];
                       for (std::size_t c = 0; c < v; ++c) gx.at(r, c) += k * probs.at(r, c);
                       gx.at(r, static_cast<std::size_t>(tgt[r])) -= k;
                     }
                   });
}

Var softmax_cross_entropy(Var logits, int target) {
  const int targets[1] = {target};
  const double weights[1] = {1.0};
  return softmax_cross_entropy(logits, targets, weights);
}

// ---------------------------------------------------------------------------
// Split-layout complex helpers

namespace {
std::size_t half_width(Var h, const char* op) {
  const std::size_t cols = h.value().cols();
  require(cols >= 2 && cols % 2 == 0, [&] {
    return std::string(op) + ": last axis must be even, got " + h.value().shape_string();
  });
  return cols / 2;
}
}  // namespace

Var cbind(Var r, Var x) {
  const std::size_t m = half_width(r, "cbind");
  require(half_width(x, "cbind") == m, [&] {
    return "cbind: width mismatch (" + r.value().shape_string() + " vs " +
           x.value().shape_string() + ")";
  });
  const Var rr = slice(r, 0, m), ri = slice(r, m, 2 * m);
  const Var xr = slice(x, 0, m), xi = slice(x, m, 2 * m);
  return concat({sub(mul(rr, xr), mul(ri, xi)), add(mul(rr, xi), mul(ri, xr))});
}

Var cmodulus(Var h) {
  const std::size_t m = half_width(h, "cmodulus");
  return sqrt(add(square(slice(h, 0, m)), square(slice(h, m, 2 * m))));
}

Var cbound(Var h) {
  const std::size_t m = half_width(h, "cbound");
  const Var d = maximum(cmodulus(h), 1.0);
  return concat({div(slice(h, 0, m), d), div(slice(h, m, 2 * m), d)});
}

Var cconj(Var h) {
  const std::size_t m = half_width(h, "cconj");
  return concat({slice(h, 0, m), neg(slice(h, m, 2 * m))});
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& params,
                           const GradCheckOptions& options) {
  require(options.eps > 0.0, "grad_check: eps must be positive");
  struct Eval {
    double value;
    std::uint64_t signature;
  };
  auto evaluate = [&](const std::vector<Tensor>& at) {
    Tape tape;
    tape.set_branch_tracking(true);
    std::vector<Var> vars;
    for (const Tensor& p : at) vars.push_back(tape.constant(p));
    const Var out = f(tape, vars);
    return Eval{out.value()[0], tape.branch_signature()};
  };

  Tape tape;
  tape.set_branch_tracking(true);
  std::vector<Var> vars;
  for (const Tensor& p : params) vars.push_back(tape.variable(p));
  const Var root = f(tape, vars);
  tape.backward(root);
  const std::uint64_t base_signature = tape.branch_signature();

  GradCheckResult result;
  Rng rng(options.seed);
  std::vector<Tensor> probe = params;
  for (std::size_t q = 0; q < params.size(); ++q) {
    const std::size_t n = params[q].size();
    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    if (options.max_coords_per_tensor != 0 && options.max_coords_per_tensor < n) {
      for (std::size_t i = 0; i < options.max_coords_per_tensor; ++i)
        std::swap(coords[i], coords[i + rng.below(n - i)]);
      coords.resize(options.max_coords_per_tensor);
    }
    const Tensor& analytic = vars[q].grad();
    for (std::size_t i : coords) {
      const double saved = probe[q][i];
      probe[q][i] = saved + options.eps;
      const Eval plus = evaluate(probe);
      probe[q][i] = saved - options.eps;
      const Eval minus = evaluate(probe);
      probe[q][i] = saved;
      if (plus.signature != base_signature || minus.signature != base_signature) {
        ++result.n_kinks;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * options.eps);
      const double a = analytic.size() ? analytic[i] : 0.0;
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
      ++result.n_checked;
    }
  }
  return result;
}

}  // namespace holocell::ad
