// SPDX-License-Identifier: Apache-2.0
#pragma once

// Recurrent cells as step functions over a tape: given parameters bound as
// tape variables, the previous state and an input batch x_t of shape
// [batch, input_size], each cell returns the next state. State element 0 is
// always the output h_t.
//
// Matrices act on row vectors: pre = x W_x + h W_h + b.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "holocell/autodiff.hpp"
#include "holocell/complex_core.hpp"
#include "holocell/random.hpp"

namespace holocell {

enum class CellKind { kLstm, kAssocLstm, kPermutationRnn, kUnitaryRnn, kMultUnitaryRnn };

/// "lstm", "alstm", "permrnn", "urnn", "murnn".
std::string_view cell_kind_name(CellKind kind);
CellKind parse_cell_kind(std::string_view name);

struct CellConfig {
  CellKind kind = CellKind::kLstm;
  std::size_t input_size = 0;
  /// N_h in reals. Complex cells hold N_h/2 complex numbers.
  std::size_t hidden_size = 0;
  std::size_t n_copies = 1;
  std::size_t n_heads = 1;
  /// Associative LSTM only: feed h_{t-1} into the update (W_hu present).
  bool use_h_for_update = false;
  /// Added to the forget-gate bias at initialization.
  double forget_bias = 0.0;
};

struct NamedTensor {
  std::string name;
  ad::Tensor value;
};

using Vars = std::vector<ad::Var>;

class Cell {
 public:
  explicit Cell(CellConfig config) : config_(config) {}
  virtual ~Cell() = default;
  Cell(const Cell&) = delete;
  Cell& operator=(const Cell&) = delete;

  const CellConfig& config() const noexcept { return config_; }
  /// Width of h_t.
  virtual std::size_t output_size() const = 0;

  /// Trainable tensors in a fixed order; step() receives them in this order.
  std::vector<NamedTensor>& parameters() noexcept { return params_; }
  const std::vector<NamedTensor>& parameters() const noexcept { return params_; }
  ad::Tensor& parameter(std::string_view name);
  const ad::Tensor& parameter(std::string_view name) const;
  std::size_t count_parameters() const;

  /// Zero state for `batch` rows.
  virtual std::vector<ad::Tensor> initial_state(std::size_t batch) const;

  /// Trainable parameters as tape leaves (constants when `trainable` is
  /// false), followed by the cell's fixed tensors as constants.
  Vars bind(ad::Tape& tape, bool trainable) const;

  virtual Vars step(ad::Tape& tape, std::span<const ad::Var> params,
                    std::span<const ad::Var> state, ad::Var x) const = 0;

  /// Fixed random permutations (not trainable). Empty for cells without any.
  virtual std::vector<Permutation> permutations() const { return {}; }
  virtual void set_permutations(std::vector<Permutation> perms);

 protected:
  ad::Tensor& add_parameter(std::string name, std::vector<std::size_t> shape);
  /// Non-trainable tensors appended after the parameters by bind().
  virtual std::vector<const ad::Tensor*> fixed_tensors() const { return {}; }
  void check_input(ad::Var x, std::span<const ad::Var> state, std::size_t n_state) const;

  CellConfig config_;
  std::vector<NamedTensor> params_;
};

/// LSTM with forget gates, no peepholes. Gate block order [f, i, o, u].
/// Parameters: W_xh [N_x, 4N_h], W_hh [N_h, 4N_h], b_h [4N_h]. State {h, c}.
class LstmCell final : public Cell {
 public:
  struct Gates {
    ad::Var forget, input, output, update;
  };

  LstmCell(CellConfig config, Rng& rng);
  std::size_t output_size() const override { return config_.hidden_size; }
  std::vector<ad::Tensor> initial_state(std::size_t batch) const override;

  Gates gates(std::span<const ad::Var> params, ad::Var h, ad::Var x) const;
  /// c_t = f * c + i * u, h_t = o * tanh(c_t). Returns {h_t, c_t}.
  static Vars update(const Gates& g, ad::Var c);

  Vars step(ad::Tape& tape, std::span<const ad::Var> params, std::span<const ad::Var> state,
            ad::Var x) const override;
};

/// Associative LSTM with redundant copies and optional multiple heads.
///
/// With n = N_h/2 complex units and H heads the gate projection has columns
/// [g_f (n), g_i (n), g_o (n), r_i head 0..H-1 (N_h each), r_o head 0..H-1]
/// and the update projection produces one N_h block per head. Parameters:
/// W_xh, W_hh, b_h, W_xu, [W_hu if use_h_for_update], b_u. State {h, c} with
/// h [batch, H N_h] (head reads concatenated) and c [batch, C N_h] holding the
/// C copies as one split-layout complex vector of C n elements, copy s at
/// complex positions [s n, (s+1) n).
class AssocLstmCell final : public Cell {
 public:
  struct Gates {
    ad::Var forget, input, output;  // half-width gates duplicated to [batch, N_h]
    Vars update, key_in, key_out;   // one [batch, N_h] entry per head, all bounded
  };

  AssocLstmCell(CellConfig config, Rng& rng);
  std::size_t output_size() const override {
    return config_.hidden_size * config_.n_heads;
  }
  std::vector<ad::Tensor> initial_state(std::size_t batch) const override;

  Gates gates(std::span<const ad::Var> params, ad::Var h, ad::Var x) const;
  /// Writes every head into all copies and reads them back. Returns {h_t, c_t}.
  Vars update(const Gates& g, ad::Var c) const;

  Vars step(ad::Tape& tape, std::span<const ad::Var> params, std::span<const ad::Var> state,
            ad::Var x) const override;

  std::vector<Permutation> permutations() const override { return perms_; }
  void set_permutations(std::vector<Permutation> perms) override;

 private:
  void build_index_maps();

  bool single_identity_copy_ = true;

  std::vector<Permutation> perms_;
  std::vector<std::size_t> value_tile_;  // [batch, N_h] -> [batch, C N_h]
  std::vector<std::size_t> key_perm_;    // [batch, N_h] -> permuted copies
};

/// h_t = P h_{t-1} + W x_t with a fixed random permutation P over N_h reals.
/// Parameters: W [N_x, N_h]. State {h}.
class PermutationRnnCell final : public Cell {
 public:
  PermutationRnnCell(CellConfig config, Rng& rng);
  std::size_t output_size() const override { return config_.hidden_size; }
  Vars step(ad::Tape& tape, std::span<const ad::Var> params, std::span<const ad::Var> state,
            ad::Var x) const override;
  std::vector<Permutation> permutations() const override { return {perm_}; }
  void set_permutations(std::vector<Permutation> perms) override;

 private:
  Permutation perm_;
};

/// h_t = modReLU(D3 R2 F^-1 D2 P R1 F D1 h_{t-1} + V x_t) over n = N_h/2
/// complex units. D are diagonal phase matrices, R = I - 2 v v^H / |v|^2
/// complex reflections, F the unitary DFT and P a fixed permutation.
///
/// Plain variant parameters: theta1, theta2, theta3 [n], v1, v2 [1, N_h],
/// V [N_x, N_h], b_mod [n]. The multiplicative variant replaces the thetas
/// with input-conditioned phases x_t W_xr, W_xr [N_x, 3n].
class UnitaryRnnCell final : public Cell {
 public:
  UnitaryRnnCell(CellConfig config, Rng& rng);
  std::size_t output_size() const override { return config_.hidden_size; }
  bool multiplicative() const noexcept { return config_.kind == CellKind::kMultUnitaryRnn; }

  /// The unitary part W h_{t-1}; x only matters for the multiplicative variant.
  ad::Var recurrent_map(std::span<const ad::Var> params, ad::Var h, ad::Var x) const;
  /// |z| -> max(0, |z| + b) with the phase kept; 0 stays 0.
  static ad::Var modrelu(ad::Var z, ad::Var bias);

  Vars step(ad::Tape& tape, std::span<const ad::Var> params, std::span<const ad::Var> state,
            ad::Var x) const override;
  std::vector<Permutation> permutations() const override { return {perm_}; }
  void set_permutations(std::vector<Permutation> perms) override;

  /// Row-form matrix M of the recurrent map (h_t = h_{t-1} M before the
  /// nonlinearity) for the input row `x`.
  ad::Tensor recurrent_matrix(const ad::Tensor& x) const;

 protected:
  std::vector<const ad::Tensor*> fixed_tensors() const override { return {&dft_, &inv_dft_}; }

 private:
  ad::Var reflect(ad::Var h, ad::Var v) const;
  ad::Var phase_key(ad::Var theta) const;

  Permutation perm_;
  ad::Tensor dft_;      // [N_h, N_h] row-form unitary DFT
  ad::Tensor inv_dft_;  // [N_h, N_h] row-form inverse
};

std::unique_ptr<Cell> make_cell(const CellConfig& config, Rng& rng);

/// Runs the layers bottom to top within one time step, feeding each layer's
/// h_t to the next. `state` is updated in place; returns the top h_t.
ad::Var stack_step(ad::Tape& tape, std::span<const std::unique_ptr<Cell>> cells,
                   std::span<const Vars> params, std::vector<Vars>& state, ad::Var x);

struct ModelConfig {
  CellKind kind = CellKind::kLstm;
  std::size_t vocab_size = 0;
  std::size_t hidden_size = 128;
  std::size_t n_copies = 1;
  std::size_t n_heads = 1;
  std::size_t layers = 1;
  bool use_h_for_update = false;
  double forget_bias = 0.0;
  std::uint64_t seed = 0;
};

/// Stack of cells over one-hot inputs with an affine softmax readout
/// (head.W [H, V], head.b [V]).
class Model {
 public:
  using State = std::vector<std::vector<ad::Tensor>>;

  struct Bound {
    std::vector<Vars> layers;
    ad::Var head_w, head_b;
  };

  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<std::unique_ptr<Cell>>& layers() const noexcept { return cells_; }
  std::vector<std::unique_ptr<Cell>>& layers() noexcept { return cells_; }

  /// Every trainable tensor with a qualified name ("layer0.W_xh", "head.W").
  std::vector<NamedTensor*> parameters();
  std::vector<const NamedTensor*> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t count_parameters() const;

  /// Parameters as tape leaves; constants when `trainable` is false.
  Bound bind(ad::Tape& tape, bool trainable) const;
  State initial_state(std::size_t batch) const;
  std::vector<Vars> load_state(ad::Tape& tape, const State& state) const;
  static State snapshot(const std::vector<Vars>& state);

  /// One time step of the stack; returns logits [batch, V].
  ad::Var step(ad::Tape& tape, const Bound& bound, std::vector<Vars>& state, ad::Var x) const;

  /// Gradients after backward, aligned with parameters(). Zero where no
  /// gradient reached a parameter.
  std::vector<ad::Tensor> gradients(const Bound& bound) const;

 private:
  ModelConfig config_;
  std::vector<std::unique_ptr<Cell>> cells_;
  NamedTensor head_w_, head_b_;
};

std::size_t count_parameters(const Model& model);

/// One-hot rows [ids.size(), vocab].
ad::Tensor one_hot(std::span<const int> ids, std::size_t vocab);

}  // namespace holocell
