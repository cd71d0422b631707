// SPDX-License-Identifier: Apache-2.0
#pragma once

// Adam, truncated backpropagation through time, evaluation and learning-curve
// bookkeeping. Gradients reach the optimizer exactly as the tape produced
// them: nothing is clipped, rescaled or normalized on the way.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "holocell/cells.hpp"
#include "holocell/tasks.hpp"

namespace holocell {

inline constexpr const char* kLibraryVersion = "0.1.0";

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// One bias-corrected update. Throws NumericalError, leaving every
  /// parameter untouched, if any gradient is non-finite.
  void step(std::span<NamedTensor* const> params, std::span<const ad::Tensor> grads);

  std::size_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return config_; }
  const std::vector<ad::Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<ad::Tensor>& second_moments() const noexcept { return v_; }

 private:
  AdamConfig config_;
  std::size_t t_ = 0;
  std::vector<ad::Tensor> m_, v_;
};

struct RunConfig {
  TaskKind task = TaskKind::kCopy;
  CellKind model = CellKind::kAssocLstm;
  std::size_t hidden_size = 128;
  std::size_t n_copies = 1;
  std::size_t n_heads = 1;
  std::size_t layers = 1;
  std::size_t minibatch = 2;
  std::size_t tbptt_window = 100;
  std::uint64_t seed = 1;
  std::size_t max_steps = 1000;
  std::size_t eval_every = 500;
  /// Held-out episodes (episodic tasks) per evaluation.
  std::size_t eval_episodes = 200;
  /// Held-out symbols (online tasks) per evaluation.
  std::size_t eval_symbols = 20000;
  double learning_rate = 1e-3;
  double forget_bias = 0.0;
  /// Unset: true for arith and bytes, false otherwise.
  std::optional<bool> use_h_for_update;
  CopyTaskSpec copy;
  std::string bytes_path;
  double bytes_split = 0.1;

  bool update_uses_h() const;
  ModelConfig model_config(std::size_t vocab_size) const;
  /// Seed of the fixed held-out evaluation data.
  std::uint64_t eval_seed() const noexcept { return seed ^ 0x5eedf00dcafeULL; }
};

/// Throws ContractViolation on inconsistent settings.
void validate(const RunConfig& config);

struct Metrics {
  /// Nats per sequence (episodic) or per masked symbol (online).
  double cost = 0.0;
  double masked_accuracy = 0.0;
  /// Fraction of sequences (episodic) or answer segments (online) with every
  /// masked symbol predicted correctly.
  double exact_match = 0.0;
  std::size_t n_sequences = 0;
  std::size_t n_masked = 0;
};

struct CurveRecord {
  std::size_t step = 0;
  std::size_t examples_seen = 0;
  double train_cost = 0.0;
  double eval_cost = 0.0;
  double masked_accuracy = 0.0;
  double exact_match = 0.0;
  double wall_seconds = 0.0;
};

void write_curve_header(std::ostream& out);
void write_curve_row(std::ostream& out, const CurveRecord& record);

/// Per-position outcome of a forward pass over a batch of sequences.
struct SequenceStats {
  std::vector<double> cost;          // summed masked cross-entropy per row
  std::vector<std::size_t> masked;   // masked positions per row
  std::vector<std::size_t> correct;  // argmax hits among them
  /// Per row and step: -1 unmasked, 0 wrong, 1 right.
  std::vector<std::vector<signed char>> hits;
};

struct BatchResult {
  std::vector<ad::Tensor> grads;  // aligned with Model::parameters(); empty without backward
  double loss = 0.0;              // value of the scaled objective
  Model::State final_state;
  SequenceStats stats;
};

/// Forward (and optionally backward) over a batch of sequences starting from
/// `initial`. Sequences shorter than the longest are padded with unmasked
/// steps. The objective is `loss_scale` times the summed masked
/// cross-entropy. With `window` below the sequence length the batch is cut
/// into truncated-BPTT windows: the state carries over, gradients do not,
/// and the per-window gradients are summed.
BatchResult run_batch(const Model& model, std::span<const Episode> sequences,
                      const Model::State& initial, std::size_t window, bool backward,
                      double loss_scale, int pad_id = 0);

struct TrainHooks {
  /// Called after every evaluation; returning false stops training.
  std::function<bool(const CurveRecord&)> on_eval;
  /// Sees each minibatch gradient right before the optimizer does.
  std::function<void(std::size_t step, std::span<const ad::Tensor> grads)> on_gradients;
  /// Called at evaluation points and after the last step.
  std::function<void(std::size_t step, const Model& model)> on_checkpoint;
};

/// Fresh episodes per minibatch, full BPTT per episode, cost per sequence.
std::vector<CurveRecord> train_episodic(const RunConfig& config, Model& model,
                                        const TrainHooks& hooks = {});
/// Parallel streams cut into windows of config.tbptt_window with state
/// carried across windows; cost per masked symbol.
std::vector<CurveRecord> train_online(const RunConfig& config, Model& model,
                                      const TrainHooks& hooks = {});
/// Dispatches on the task.
std::vector<CurveRecord> train(const RunConfig& config, Model& model,
                               const TrainHooks& hooks = {});

/// Held-out metrics; `n` episodes for episodic tasks, `n` symbols otherwise.
/// No parameter changes; deterministic given `seed`.
Metrics evaluate(const Model& model, const RunConfig& config, std::size_t n, std::uint64_t seed);

/// Vocabulary the run trains on.
Vocab run_vocab(const RunConfig& config);

}  // namespace holocell
