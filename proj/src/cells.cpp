// SPDX-License-Identifier: Apache-2.0
#include "holocell/cells.hpp"

#include <cmath>
#include <numbers>

#include "holocell/error.hpp"

namespace holocell {

using ad::Tape;
using ad::Tensor;
using ad::Var;
using ad::concat;

namespace {

void init_uniform(Tensor& t, double limit, Rng& rng) {
  for (double& v : t.data()) v = rng.uniform(-limit, limit);
}

/// Uniform(+-1/sqrt(fan_in)) with fan_in the number of rows.
void init_weight(Tensor& t, Rng& rng) {
  init_uniform(t, 1.0 / std::sqrt(static_cast<double>(t.shape()[0])), rng);
}

}  // namespace

std::string_view cell_kind_name(CellKind kind) {
  switch (kind) {
    case CellKind::kLstm: return "lstm";
    case CellKind::kAssocLstm: return "alstm";
    case CellKind::kPermutationRnn: return "permrnn";
    case CellKind::kUnitaryRnn: return "urnn";
    case CellKind::kMultUnitaryRnn: return "murnn";
  }
  return "?";
}

CellKind parse_cell_kind(std::string_view name) {
  for (CellKind k : {CellKind::kLstm, CellKind::kAssocLstm, CellKind::kPermutationRnn,
                     CellKind::kUnitaryRnn, CellKind::kMultUnitaryRnn})
    if (cell_kind_name(k) == name) return k;
  throw ContractViolation("unknown model '" + std::string(name) +
                          "' (expected lstm, alstm, permrnn, urnn or murnn)");
}

// ---------------------------------------------------------------------------
// Cell

Tensor& Cell::parameter(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p.value;
  throw ContractViolation("no parameter named '" + std::string(name) + "'");
}

const Tensor& Cell::parameter(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.value;
  throw ContractViolation("no parameter named '" + std::string(name) + "'");
}

std::size_t Cell::count_parameters() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<Tensor> Cell::initial_state(std::size_t batch) const {
  return {Tensor({batch, output_size()}, 0.0)};
}

Vars Cell::bind(Tape& tape, bool trainable) const {
  Vars vars;
  for (const auto& p : params_)
    vars.push_back(trainable ? tape.variable(p.value) : tape.constant(p.value));
  for (const Tensor* t : fixed_tensors()) vars.push_back(tape.constant(*t));
  return vars;
}

void Cell::set_permutations(std::vector<Permutation> perms) {
  require(perms.empty(), [&] {
    return std::string(cell_kind_name(config_.kind)) + " has no permutations";
  });
}

Tensor& Cell::add_parameter(std::string name, std::vector<std::size_t> shape) {
  params_.push_back({std::move(name), Tensor(std::move(shape), 0.0)});
  return params_.back().value;
}

void Cell::check_input(Var x, std::span<const Var> state, std::size_t n_state) const {
  const std::string kind(cell_kind_name(config_.kind));
  require(state.size() == n_state, [&] {
    return kind + ": expected " + std::to_string(n_state) + " state tensors, got " +
           std::to_string(state.size());
  });
  require(x.value().cols() == config_.input_size, [&] {
    return kind + ": input width " + std::to_string(x.value().cols()) + ", expected " +
           std::to_string(config_.input_size);
  });
  const Tensor& h = state[0].value();
  require(h.cols() == output_size() && h.rows() == x.value().rows(), [&] {
    return kind + ": hidden state shape " + h.shape_string() +
           " does not match batch " + std::to_string(x.value().rows()) + " x " +
           std::to_string(output_size());
  });
}

// ---------------------------------------------------------------------------
// LSTM

LstmCell::LstmCell(CellConfig config, Rng& rng) : Cell(config) {
  const std::size_t nx = config_.input_size, nh = config_.hidden_size;
  require(nx >= 1 && nh >= 1, "lstm: input and hidden sizes must be positive");
  init_weight(add_parameter("W_xh", {nx, 4 * nh}), rng);
  init_weight(add_parameter("W_hh", {nh, 4 * nh}), rng);
  Tensor& b = add_parameter("b_h", {4 * nh});
  for (std::size_t j = 0; j < nh; ++j) b[j] = config_.forget_bias;
}

std::vector<Tensor> LstmCell::initial_state(std::size_t batch) const {
  const std::size_t nh = config_.hidden_size;
  return {Tensor({batch, nh}, 0.0), Tensor({batch, nh}, 0.0)};
}

LstmCell::Gates LstmCell::gates(std::span<const Var> params, Var h, Var x) const {
  const std::size_t nh = config_.hidden_size;
  const Var pre = add(add(matmul(x, params[0]), matmul(h, params[1])), params[2]);
  return {sigmoid(slice(pre, 0, nh)), sigmoid(slice(pre, nh, 2 * nh)),
          sigmoid(slice(pre, 2 * nh, 3 * nh)), tanh(slice(pre, 3 * nh, 4 * nh))};
}

Vars LstmCell::update(const Gates& g, Var c) {
  const Var c_next = add(mul(g.forget, c), mul(g.input, g.update));
  return {mul(g.output, tanh(c_next)), c_next};
}

Vars LstmCell::step(Tape&, std::span<const Var> params, std::span<const Var> state,
                    Var x) const {
  check_input(x, state, 2);
  return update(gates(params, state[0], x), state[1]);
}

// ---------------------------------------------------------------------------
// Associative LSTM

AssocLstmCell::AssocLstmCell(CellConfig config, Rng& rng) : Cell(config) {
  const std::size_t nx = config_.input_size, nh = config_.hidden_size;
  const std::size_t heads = config_.n_heads, copies = config_.n_copies;
  require(nx >= 1, "alstm: input size must be positive");
  require(nh >= 2 && nh % 2 == 0, "alstm: hidden size must be even (complex pairs)");
  require(copies >= 1, "alstm: n_copies must be >= 1");
  require(heads >= 1, "alstm: n_heads must be >= 1");
  const std::size_t n = nh / 2;
  const std::size_t gate_cols = 3 * n + 2 * heads * nh;
  init_weight(add_parameter("W_xh", {nx, gate_cols}), rng);
  init_weight(add_parameter("W_hh", {heads * nh, gate_cols}), rng);
  Tensor& b = add_parameter("b_h", {gate_cols});
  for (std::size_t j = 0; j < n; ++j) b[j] = config_.forget_bias;
  init_weight(add_parameter("W_xu", {nx, heads * nh}), rng);
  if (config_.use_h_for_update) init_weight(add_parameter("W_hu", {heads * nh, heads * nh}), rng);
  add_parameter("b_u", {heads * nh});

  perms_.push_back(Permutation::identity(n));
  for (std::size_t s = 1; s < copies; ++s) perms_.push_back(Permutation::random(n, rng));
  build_index_maps();
}

void AssocLstmCell::set_permutations(std::vector<Permutation> perms) {
  require(perms.size() == config_.n_copies, "alstm: need one permutation per copy");
  for (const auto& p : perms)
    require(p.size() == config_.hidden_size / 2, "alstm: permutation size must be N_h/2");
  perms_ = std::move(perms);
  build_index_maps();
}

void AssocLstmCell::build_index_maps() {
  const std::size_t n = config_.hidden_size / 2, copies = perms_.size();
  value_tile_.assign(2 * copies * n, 0);
  key_perm_.assign(2 * copies * n, 0);
  for (std::size_t s = 0; s < copies; ++s) {
    for (std::size_t j = 0; j < n; ++j) {
      value_tile_[s * n + j] = j;
      value_tile_[copies * n + s * n + j] = n + j;
      key_perm_[s * n + j] = perms_[s][j];
      key_perm_[copies * n + s * n + j] = n + perms_[s][j];
    }
  }
  single_identity_copy_ = copies == 1 && perms_[0].is_identity();
}

std::vector<Tensor> AssocLstmCell::initial_state(std::size_t batch) const {
  return {Tensor({batch, output_size()}, 0.0),
          Tensor({batch, config_.n_copies * config_.hidden_size}, 0.0)};
}

AssocLstmCell::Gates AssocLstmCell::gates(std::span<const Var> params, Var h, Var x) const {
  const std::size_t nh = config_.hidden_size, n = nh / 2, heads = config_.n_heads;
  const Var pre = add(add(matmul(x, params[0]), matmul(h, params[1])), params[2]);
  Var u_pre = matmul(x, params[3]);
  if (config_.use_h_for_update) u_pre = add(u_pre, matmul(h, params[4]));
  u_pre = add(u_pre, params[config_.use_h_for_update ? 5 : 4]);

  auto duplicated = [](Var g) { return concat({g, g}); };
  Gates g;
  g.forget = duplicated(sigmoid(slice(pre, 0, n)));
  g.input = duplicated(sigmoid(slice(pre, n, 2 * n)));
  g.output = duplicated(sigmoid(slice(pre, 2 * n, 3 * n)));
  const std::size_t keys_in = 3 * n, keys_out = 3 * n + heads * nh;
  for (std::size_t q = 0; q < heads; ++q) {
    g.update.push_back(ad::cbound(slice(u_pre, q * nh, (q + 1) * nh)));
    g.key_in.push_back(ad::cbound(slice(pre, keys_in + q * nh, keys_in + (q + 1) * nh)));
    g.key_out.push_back(ad::cbound(slice(pre, keys_out + q * nh, keys_out + (q + 1) * nh)));
  }
  return g;
}

Vars AssocLstmCell::update(const Gates& g, Var c) const {
  const std::size_t nh = config_.hidden_size, heads = config_.n_heads;
  const double inv_copies = 1.0 / static_cast<double>(perms_.size());
  // Keys and values are laid out over all copies at once: [batch, C N_h].
  auto tile = [&](Var v) { return single_identity_copy_ ? v : gather(v, value_tile_); };
  auto permute = [&](Var key) { return single_identity_copy_ ? key : gather(key, key_perm_); };

  Var c_next = mul(tile(g.forget), c);
  for (std::size_t q = 0; q < heads; ++q)
    c_next = add(c_next, ad::cbind(permute(g.key_in[q]), tile(mul(g.input, g.update[q]))));

  Vars reads;
  for (std::size_t q = 0; q < heads; ++q) {
    Var read = ad::cbind(permute(g.key_out[q]), c_next);
    if (!single_identity_copy_) read = scale(scatter_add(read, value_tile_, nh), inv_copies);
    reads.push_back(mul(g.output, ad::cbound(read)));
  }
  return {heads == 1 ? reads[0] : ad::concat(reads), c_next};
}

Vars AssocLstmCell::step(Tape&, std::span<const Var> params, std::span<const Var> state,
                         Var x) const {
  check_input(x, state, 2);
  require(state[1].value().cols() == config_.n_copies * config_.hidden_size,
          "alstm: cell state must hold n_copies x N_h values per row");
  return update(gates(params, state[0], x), state[1]);
}

// ---------------------------------------------------------------------------
// Permutation RNN

PermutationRnnCell::PermutationRnnCell(CellConfig config, Rng& rng)
    : Cell(config), perm_(Permutation::identity(config.hidden_size)) {
  require(config_.input_size >= 1 && config_.hidden_size >= 1,
          "permrnn: input and hidden sizes must be positive");
  init_weight(add_parameter("W", {config_.input_size, config_.hidden_size}), rng);
  perm_ = Permutation::random(config_.hidden_size, rng);
}

void PermutationRnnCell::set_permutations(std::vector<Permutation> perms) {
  require(perms.size() == 1 && perms[0].size() == config_.hidden_size,
          "permrnn: expected one permutation over N_h");
  perm_ = std::move(perms[0]);
}

Vars PermutationRnnCell::step(Tape&, std::span<const Var> params, std::span<const Var> state,
                              Var x) const {
  check_input(x, state, 1);
  return {add(gather(state[0], perm_.map()), matmul(x, params[0]))};
}

// ---------------------------------------------------------------------------
// Unitary RNN

namespace {

/// Row-form split-layout DFT (h_row M = F h), unitary with 1/sqrt(n).
Tensor dft_matrix(std::size_t n, bool inverse) {
  Tensor m({2 * n, 2 * n}, 0.0);
  const double norm = 1.0 / std::sqrt(static_cast<double>(n));
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < n; ++k) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>((j * k) % n) /
                           static_cast<double>(n);
      const double fr = norm * std::cos(angle), fi = norm * sign * std::sin(angle);
      m.at(k, j) = fr;
      m.at(n + k, j) = -fi;
      m.at(k, n + j) = fi;
      m.at(n + k, n + j) = fr;
    }
  }
  return m;
}

}  // namespace

UnitaryRnnCell::UnitaryRnnCell(CellConfig config, Rng& rng)
    : Cell(config), perm_(Permutation::identity(1)) {
  const std::size_t nx = config_.input_size, nh = config_.hidden_size;
  require(nx >= 1, [&] {
    return std::string(cell_kind_name(config_.kind)) + ": input size must be positive";
  });
  require(nh >= 2 && nh % 2 == 0, [&] {
    return std::string(cell_kind_name(config_.kind)) + ": hidden size must be even";
  });
  const std::size_t n = nh / 2;
  if (!multiplicative()) {
    for (const char* name : {"theta1", "theta2", "theta3"})
      init_uniform(add_parameter(name, {n}), std::numbers::pi, rng);
  }
  init_uniform(add_parameter("v1", {1, nh}), 1.0, rng);
  init_uniform(add_parameter("v2", {1, nh}), 1.0, rng);
  init_weight(add_parameter("V", {nx, nh}), rng);
  add_parameter("b_mod", {n});
  if (multiplicative()) init_weight(add_parameter("W_xr", {nx, 3 * n}), rng);
  perm_ = Permutation::random(n, rng);
  dft_ = dft_matrix(n, false);
  inv_dft_ = dft_matrix(n, true);
}

void UnitaryRnnCell::set_permutations(std::vector<Permutation> perms) {
  require(perms.size() == 1 && perms[0].size() == config_.hidden_size / 2,
          "urnn: expected one permutation over N_h/2");
  perm_ = std::move(perms[0]);
}

Var UnitaryRnnCell::phase_key(Var theta) const { return concat({cos(theta), sin(theta)}); }

Var UnitaryRnnCell::reflect(Var h, Var v) const {
  const std::size_t n = config_.hidden_size / 2;
  Tape& tape = *h.tape();
  // v^H h = s_re + i s_im with s_re = h . [vr, vi], s_im = h . [-vi, vr]
  const Var v_rot = concat({neg(slice(v, n, 2 * n)), slice(v, 0, n)});
  const Var s_re = matmul(h, transpose(v));
  const Var s_im = matmul(h, transpose(v_rot));
  const Var projection = add(matmul(s_re, v), matmul(s_im, v_rot));
  const Var coef = div(tape.constant(Tensor::scalar(2.0)), maximum(sum(square(v)), 1e-16));
  return sub(h, mul(projection, coef));
}

Var UnitaryRnnCell::recurrent_map(std::span<const Var> params, Var h, Var x) const {
  const std::size_t n = config_.hidden_size / 2;
  const std::size_t fixed = params_.size();
  const Var& dft = params[fixed];
  const Var& inv_dft = params[fixed + 1];
  Var d1, d2, d3, v1, v2;
  if (multiplicative()) {
    // params: v1, v2, V, b_mod, W_xr
    const Var phases = matmul(x, params[4]);
    d1 = phase_key(slice(phases, 0, n));
    d2 = phase_key(slice(phases, n, 2 * n));
    d3 = phase_key(slice(phases, 2 * n, 3 * n));
    v1 = params[0];
    v2 = params[1];
  } else {
    // params: theta1, theta2, theta3, v1, v2, V, b_mod
    d1 = phase_key(params[0]);
    d2 = phase_key(params[1]);
    d3 = phase_key(params[2]);
    v1 = params[3];
    v2 = params[4];
  }
  std::vector<std::size_t> perm_index(2 * n);
  for (std::size_t j = 0; j < n; ++j) {
    perm_index[j] = perm_[j];
    perm_index[n + j] = n + perm_[j];
  }
  Var y = ad::cbind(d1, h);
  y = matmul(y, dft);
  y = reflect(y, v1);
  y = gather(y, std::move(perm_index));
  y = ad::cbind(d2, y);
  y = matmul(y, inv_dft);
  y = reflect(y, v2);
  return ad::cbind(d3, y);
}

Var UnitaryRnnCell::modrelu(Var z, Var bias) {
  const Var mod = ad::cmodulus(z);
  const Var factor = div(relu_shifted(mod, bias), maximum(mod, 1e-12));
  return mul(concat({factor, factor}), z);
}

Vars UnitaryRnnCell::step(Tape&, std::span<const Var> params, std::span<const Var> state,
                          Var x) const {
  check_input(x, state, 1);
  const Var& V = params[multiplicative() ? 2 : 5];
  const Var& bias = params[multiplicative() ? 3 : 6];
  return {modrelu(add(recurrent_map(params, state[0], x), matmul(x, V)), bias)};
}

Tensor UnitaryRnnCell::recurrent_matrix(const Tensor& x) const {
  const std::size_t nh = config_.hidden_size, nx = config_.input_size;
  require(x.size() == nx, "recurrent_matrix: input must have input_size values");
  Tape tape;
  const Vars params = bind(tape, false);
  Tensor eye({nh, nh}, 0.0);
  for (std::size_t i = 0; i < nh; ++i) eye.at(i, i) = 1.0;
  Tensor xs({nh, nx});
  for (std::size_t i = 0; i < nh; ++i)
    for (std::size_t j = 0; j < nx; ++j) xs.at(i, j) = x[j];
  return recurrent_map(params, tape.constant(std::move(eye)), tape.constant(std::move(xs)))
      .value();
}

// ---------------------------------------------------------------------------
// Factory, stacking, model

std::unique_ptr<Cell> make_cell(const CellConfig& config, Rng& rng) {
  switch (config.kind) {
    case CellKind::kLstm: return std::make_unique<LstmCell>(config, rng);
    case CellKind::kAssocLstm: return std::make_unique<AssocLstmCell>(config, rng);
    case CellKind::kPermutationRnn: return std::make_unique<PermutationRnnCell>(config, rng);
    case CellKind::kUnitaryRnn:
    case CellKind::kMultUnitaryRnn: return std::make_unique<UnitaryRnnCell>(config, rng);
  }
  throw ContractViolation("make_cell: unknown kind");
}

Var stack_step(Tape& tape, std::span<const std::unique_ptr<Cell>> cells,
               std::span<const Vars> params, std::vector<Vars>& state, Var x) {
  require(!cells.empty(), "stack_step: no layers");
  require(params.size() == cells.size() && state.size() == cells.size(),
          "stack_step: need params and state for every layer");
  Var input = x;
  for (std::size_t l = 0; l < cells.size(); ++l) {
    require(input.value().cols() == cells[l]->config().input_size, [&] {
      return "stack_step: layer " + std::to_string(l) + " expects input width " +
             std::to_string(cells[l]->config().input_size) + ", got " +
             std::to_string(input.value().cols());
    });
    state[l] = cells[l]->step(tape, params[l], state[l], input);
    input = state[l][0];
  }
  return input;
}

Model::Model(const ModelConfig& config) : config_(config) {
  require(config_.vocab_size >= 1, "model: vocab_size must be positive");
  require(config_.layers >= 1, "model: need at least one layer");
  require(config_.n_copies >= 1, "model: n_copies must be >= 1");
  require(config_.n_heads >= 1, "model: n_heads must be >= 1");
  Rng rng(config_.seed);
  std::size_t input = config_.vocab_size;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    CellConfig cc;
    cc.kind = config_.kind;
    cc.input_size = input;
    cc.hidden_size = config_.hidden_size;
    cc.n_copies = config_.n_copies;
    cc.n_heads = config_.n_heads;
    cc.use_h_for_update = config_.use_h_for_update;
    cc.forget_bias = config_.forget_bias;
    cells_.push_back(make_cell(cc, rng));
    input = cells_.back()->output_size();
  }
  head_w_ = {"head.W", Tensor({input, config_.vocab_size}, 0.0)};
  init_weight(head_w_.value, rng);
  head_b_ = {"head.b", Tensor({config_.vocab_size}, 0.0)};
}

std::vector<NamedTensor*> Model::parameters() {
  std::vector<NamedTensor*> out;
  for (auto& cell : cells_)
    for (auto& p : cell->parameters()) out.push_back(&p);
  out.push_back(&head_w_);
  out.push_back(&head_b_);
  return out;
}

std::vector<const NamedTensor*> Model::parameters() const {
  std::vector<const NamedTensor*> out;
  for (const auto& cell : cells_)
    for (const auto& p : cell->parameters()) out.push_back(&p);
  out.push_back(&head_w_);
  out.push_back(&head_b_);
  return out;
}

std::vector<std::string> Model::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < cells_.size(); ++l)
    for (const auto& p : cells_[l]->parameters())
      names.push_back("layer" + std::to_string(l) + "." + p.name);
  names.push_back(head_w_.name);
  names.push_back(head_b_.name);
  return names;
}

std::size_t Model::count_parameters() const {
  std::size_t n = head_w_.value.size() + head_b_.value.size();
  for (const auto& cell : cells_) n += cell->count_parameters();
  return n;
}

Model::Bound Model::bind(Tape& tape, bool trainable) const {
  Bound bound;
  for (const auto& cell : cells_) bound.layers.push_back(cell->bind(tape, trainable));
  bound.head_w = trainable ? tape.variable(head_w_.value) : tape.constant(head_w_.value);
  bound.head_b = trainable ? tape.variable(head_b_.value) : tape.constant(head_b_.value);
  return bound;
}

Model::State Model::initial_state(std::size_t batch) const {
  State state;
  for (const auto& cell : cells_) state.push_back(cell->initial_state(batch));
  return state;
}

std::vector<Vars> Model::load_state(Tape& tape, const State& state) const {
  require(state.size() == cells_.size(), "model: state has wrong number of layers");
  std::vector<Vars> vars;
  for (const auto& layer : state) {
    Vars v;
    for (const auto& t : layer) v.push_back(tape.constant(t));
    vars.push_back(std::move(v));
  }
  return vars;
}

Model::State Model::snapshot(const std::vector<Vars>& state) {
  State out;
  for (const auto& layer : state) {
    std::vector<Tensor> v;
    for (const auto& var : layer) v.push_back(var.value());
    out.push_back(std::move(v));
  }
  return out;
}

Var Model::step(Tape& tape, const Bound& bound, std::vector<Vars>& state, Var x) const {
  const Var top = stack_step(tape, cells_, bound.layers, state, x);
  return add(matmul(top, bound.head_w), bound.head_b);
}

std::vector<Tensor> Model::gradients(const Bound& bound) const {
  std::vector<Tensor> grads;
  auto grad_of = [](const Var& v) {
    const Tensor& g = v.grad();
    return g.size() == v.value().size() ? g : Tensor(v.value().shape(), 0.0);
  };
  for (std::size_t l = 0; l < cells_.size(); ++l)
    for (std::size_t i = 0; i < cells_[l]->parameters().size(); ++i)
      grads.push_back(grad_of(bound.layers[l][i]));
  grads.push_back(grad_of(bound.head_w));
  grads.push_back(grad_of(bound.head_b));
  return grads;
}

std::size_t count_parameters(const Model& model) { return model.count_parameters(); }

Tensor one_hot(std::span<const int> ids, std::size_t vocab) {
  Tensor out({ids.size(), vocab}, 0.0);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    require(ids[r] >= 0 && static_cast<std::size_t>(ids[r]) < vocab, [&] {
      return "one_hot: id " + std::to_string(ids[r]) + " outside vocabulary";
    });
    out.at(r, static_cast<std::size_t>(ids[r])) = 1.0;
  }
  return out;
}

}  // namespace holocell
