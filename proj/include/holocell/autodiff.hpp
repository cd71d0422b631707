// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode differentiation over dense row-major real tensors.
//
// A Tape records every value produced during a forward pass together with a
// backward closure. Nodes are appended in evaluation order, so walking the
// tape from the root downwards is a reverse topological order. Tensors of any
// rank are viewed as a (rows x cols) matrix where cols is the last dimension;
// element-wise ops broadcast operands that are a single row or a single value.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace holocell::ad {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor({}, std::vector<double>{value}); }
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  /// Last dimension (1 for a scalar).
  std::size_t cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const noexcept { return cols() == 0 ? 0 : data_.size() / cols(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  /// Gradient after Tape::backward; empty tensor if the node needs no gradient.
  const Tensor& grad() const;
  bool needs_grad() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient is collected by backward().
  Var variable(Tensor value);

  /// Populates grads of every node reachable from the scalar `root`.
  /// Calling it again recomputes the same gradients from scratch.
  void backward(Var root);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of a node, allocated (zeroed) on first use. For op authors.
  Tensor& grad_buffer(std::size_t id);
  /// Appends a node. `backward` is dropped when `needs_grad` is false.
  Var push(Tensor value, bool needs_grad, Backward backward);
  /// True for nodes created by variable() or constant().
  bool is_leaf(std::size_t id) const { return !nodes_[id].backward; }
  /// Schedules grad(leaf) += value(a)^T grad(g) for the end of backward(),
  /// where all such products for one leaf are summed in a single blocked
  /// pass. Contributions keep their scheduling order.
  void defer_outer(std::size_t leaf, std::size_t a, std::size_t g);

  /// When enabled, ops with a non-differentiable point fold the side of the
  /// kink each element falls on into branch_signature().
  void set_branch_tracking(bool on) noexcept { track_branches_ = on; }
  bool branch_tracking() const noexcept { return track_branches_; }
  void record_branch(bool side) noexcept {
    branch_hash_ = (branch_hash_ ^ (side ? 0x9fULL : 0x35ULL)) * 0x100000001b3ULL;
  }
  std::uint64_t branch_signature() const noexcept { return branch_hash_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    Backward backward;
  };
  struct Outer {
    std::size_t a, g;
  };
  void flush_outer(std::size_t leaf, const std::vector<Outer>& terms);

  std::vector<Node> nodes_;
  std::vector<std::pair<std::size_t, std::vector<Outer>>> deferred_;
  bool track_branches_ = false;
  std::uint64_t branch_hash_ = 0xcbf29ce484222325ULL;
};

// Element-wise binary ops. Either operand may be a single row (shape [cols] or
// [1, cols]) or a single value; it is broadcast across the other operand.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var scale(Var a, double factor);
Var neg(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var sqrt(Var a);  // derivative taken as 0 at exactly 0
Var square(Var a);
Var cos(Var a);
Var sin(Var a);
/// max(0, x + b), b broadcast like the binary ops. Subgradient 0 at the kink.
Var relu_shifted(Var x, Var b);
/// max(floor, x) with a constant floor. Subgradient 0 at the kink.
Var maximum(Var x, double floor);

/// [M,K] x [K,N] -> [M,N]. A rank-1 left operand is treated as [1,K].
Var matmul(Var a, Var b);
Var transpose(Var a);

/// Concatenate along the last axis; all parts must have equal rows.
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
/// Columns [begin, end) of the last axis.
Var slice(Var a, std::size_t begin, std::size_t end);
/// out[., j] = a[., index[j]]; repeated indices are allowed.
Var gather(Var a, std::vector<std::size_t> index);
/// out[., index[j]] += a[., j] into `out_cols` columns. Transpose of gather.
Var scatter_add(Var a, std::vector<std::size_t> index, std::size_t out_cols);

Var sum(Var a);
/// axis 0 sums rows into one row; axis 1 sums each row to one value.
Var sum(Var a, int axis);
Var mean(Var a);

/// sum_r weights[r] * -log softmax(logits[r])[targets[r]]. Rows with weight 0
/// contribute nothing.
Var softmax_cross_entropy(Var logits, std::span<const int> targets,
                          std::span<const double> weights);
/// Unit-weight single row.
Var softmax_cross_entropy(Var logits, int target);

struct GradCheckOptions {
  double eps = 1e-5;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// Coordinates checked per tensor; 0 checks all of them.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t n_checked = 0;
  /// Coordinates whose +/- eps probes land on a different side of a kink.
  std::size_t n_kinks = 0;
  bool clean() const noexcept { return n_kinks == 0; }
};

using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares tape gradients of `f` at `params` against central differences.
GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& params,
                           const GradCheckOptions& options = {});

}  // namespace holocell::ad

namespace holocell::ad {

// Complex helpers over the split layout [re; im] along the last axis. The
// first operand of cbind may be a single row broadcast over the batch.

/// Element-wise complex product.
Var cbind(Var r, Var x);
/// Per-element complex modulus, half the width of the input.
Var cmodulus(Var h);
/// Divides each complex element by max(1, |z|).
Var cbound(Var h);
/// Complex conjugate (imaginary half negated).
Var cconj(Var h);

}  // namespace holocell::ad
