// SPDX-License-Identifier: Apache-2.0
#include "holocell/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "holocell/error.hpp"

namespace holocell {

using ad::Tape;
using ad::Tensor;
using ad::Var;

void Adam::step(std::span<NamedTensor* const> params, std::span<const Tensor> grads) {
  require(params.size() == grads.size(), "adam: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i]->value.same_shape(grads[i]), [&] {
      return "adam: gradient shape " + grads[i].shape_string() + " does not match " +
             params[i]->name + " " + params[i]->value.shape_string();
    });
    for (double g : grads[i].data())
      if (!std::isfinite(g))
        throw NumericalError("adam: non-finite gradient for " + params[i]->name + " at step " +
                             std::to_string(t_ + 1));
  }
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->value.shape(), 0.0);
      v_.emplace_back(p->value.shape(), 0.0);
    }
  }
  require(m_.size() == params.size(), "adam: parameter set changed between steps");

  ++t_;
  const auto& c = config_;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i]->value.data();
    auto g = grads[i].data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      theta[k] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

bool RunConfig::update_uses_h() const {
  if (use_h_for_update) return *use_h_for_update;
  return task == TaskKind::kArith || task == TaskKind::kBytes;
}

ModelConfig RunConfig::model_config(std::size_t vocab_size) const {
  ModelConfig mc;
  mc.kind = model;
  mc.vocab_size = vocab_size;
  mc.hidden_size = hidden_size;
  mc.n_copies = n_copies;
  mc.n_heads = n_heads;
  mc.layers = layers;
  mc.use_h_for_update = update_uses_h();
  mc.forget_bias = forget_bias;
  mc.seed = seed;
  return mc;
}

void validate(const RunConfig& c) {
  require(c.minibatch >= 1, "minibatch must be >= 1");
  require(c.tbptt_window >= 1, "tbptt window must be >= 1");
  require(c.n_copies >= 1, "copies must be >= 1");
  require(c.n_heads >= 1, "heads must be >= 1");
  require(c.layers >= 1, "layers must be >= 1");
  require(c.hidden_size >= 2, "hidden size must be >= 2");
  require(c.eval_every >= 1, "eval interval must be >= 1");
  require(c.learning_rate > 0.0 && std::isfinite(c.learning_rate),
          "learning rate must be positive");
  const bool complex_cell = c.model != CellKind::kLstm && c.model != CellKind::kPermutationRnn;
  require(!complex_cell || c.hidden_size % 2 == 0, "complex cells need an even hidden size");
  require(c.model == CellKind::kAssocLstm || (c.n_heads == 1 && c.n_copies == 1),
          "copies and heads apply only to the associative LSTM");
  require(c.model == CellKind::kAssocLstm || !c.use_h_for_update.value_or(false),
          "use-h-update applies only to the associative LSTM");
  if (c.task == TaskKind::kBytes) {
    require(!c.bytes_path.empty(), "bytes task needs a data file");
    require(c.bytes_split > 0.0 && c.bytes_split < 1.0, "bytes split must be in (0, 1)");
  }
  if (is_episodic(c.task)) {
    require(c.copy.alphabet >= 1 && c.copy.max_length >= 1, "copy task needs symbols");
    require(c.eval_episodes >= 1, "eval needs at least one episode");
  } else {
    require(c.eval_symbols >= 1, "eval needs at least one symbol");
  }
}

void write_curve_header(std::ostream& out) {
  out << "step,examples_seen,train_cost,eval_cost,masked_accuracy,exact_match,wall_seconds\n";
}

void write_curve_row(std::ostream& out, const CurveRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.9e,%.9e,%.9e,%.9e,%.3f\n", r.step, r.examples_seen,
                r.train_cost, r.eval_cost, r.masked_accuracy, r.exact_match, r.wall_seconds);
  out << buf;
}

namespace {

// Cross-entropy and argmax of one logits row.
std::pair<double, bool> score_row(std::span<const double> logits, int target) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - top);
  const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
  const double ce = std::log(z) + top - logits[static_cast<std::size_t>(target)];
  return {ce, best == target};
}

void check_finite(double loss) {
  if (!std::isfinite(loss)) throw NumericalError("training: non-finite loss");
}

}  // namespace

BatchResult run_batch(const Model& model, std::span<const Episode> sequences,
                      const Model::State& initial, std::size_t window, bool backward,
                      double loss_scale, int pad_id) {
  require(!sequences.empty(), "run_batch: empty batch");
  require(window >= 1, "run_batch: window must be >= 1");
  const std::size_t batch = sequences.size();
  const std::size_t vocab = model.config().vocab_size;
  std::size_t length = 0;
  for (const auto& s : sequences) {
    require(s.targets.size() == s.size() && s.mask.size() == s.size(),
            "run_batch: ragged episode");
    length = std::max(length, s.size());
  }

  BatchResult out;
  out.final_state = initial;
  out.stats.cost.assign(batch, 0.0);
  out.stats.masked.assign(batch, 0);
  out.stats.correct.assign(batch, 0);
  out.stats.hits.assign(batch, std::vector<signed char>(length, -1));
  if (backward)
    for (const auto* p : model.parameters()) out.grads.emplace_back(p->value.shape(), 0.0);

  std::vector<int> inputs(batch), targets(batch);
  std::vector<double> weights(batch);
  for (std::size_t t0 = 0; t0 < length; t0 += window) {
    const std::size_t t1 = std::min(length, t0 + window);
    Tape tape;
    const Model::Bound bound = model.bind(tape, backward);
    std::vector<Vars> state = model.load_state(tape, out.final_state);
    Var loss;
    for (std::size_t t = t0; t < t1; ++t) {
      for (std::size_t r = 0; r < batch; ++r) {
        const Episode& s = sequences[r];
        const bool live = t < s.size();
        inputs[r] = live ? s.inputs[t] : pad_id;
        targets[r] = live ? s.targets[t] : pad_id;
        weights[r] = live && s.mask[t] ? loss_scale : 0.0;
      }
      const Var x = tape.constant(one_hot(inputs, vocab));
      const Var logits = model.step(tape, bound, state, x);
      bool any = false;
      for (std::size_t r = 0; r < batch; ++r) {
        if (weights[r] == 0.0) continue;
        any = true;
        const Tensor& lv = logits.value();
        const auto [ce, hit] = score_row(lv.data().subspan(r * vocab, vocab), targets[r]);
        out.stats.cost[r] += ce;
        out.stats.masked[r] += 1;
        out.stats.correct[r] += hit ? 1 : 0;
        out.stats.hits[r][t] = hit ? 1 : 0;
      }
      if (!any) continue;
      const Var step_loss = ad::softmax_cross_entropy(logits, targets, weights);
      loss = loss.valid() ? add(loss, step_loss) : step_loss;
    }
    out.final_state = Model::snapshot(state);
    if (!loss.valid()) continue;
    out.loss += loss.value()[0];
    check_finite(out.loss);
    if (backward) {
      tape.backward(loss);
      const auto grads = model.gradients(bound);
      for (std::size_t i = 0; i < grads.size(); ++i) {
        auto dst = out.grads[i].data();
        auto src = grads[i].data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }
  return out;
}

Vocab run_vocab(const RunConfig& config) {
  return is_episodic(config.task) ? copy_vocab(config.copy) : task_vocab(config.task);
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

CopyTaskSpec episode_spec(const RunConfig& config) {
  CopyTaskSpec spec = config.copy;
  spec.fixed_length = config.task == TaskKind::kCopy;
  return spec;
}

std::unique_ptr<ChunkSource> stream_source(const RunConfig& config, std::uint64_t seed,
                                           std::size_t row, bool test) {
  if (config.task != TaskKind::kBytes)
    return make_text_source(config.task, Rng::mix(seed ^ Rng::mix(row + 1)));
  const ByteCorpus corpus = gen_bytes(config.bytes_path, config.bytes_split);
  const auto& data = test ? corpus.test : corpus.train;
  if (data->empty()) throw DataError("bytes: split leaves no data");
  Rng rng = Rng::derive(seed, 0xb17e5, row);
  return std::make_unique<ByteSource>(data, static_cast<std::size_t>(rng.below(data->size())));
}

struct Tracker {
  double cost = 0.0;
  std::size_t units = 0;

  double take() {
    const double mean = units ? cost / static_cast<double>(units) : 0.0;
    cost = 0.0;
    units = 0;
    return mean;
  }
};

// Records an evaluation; returns false when the observer asks to stop.
bool record(const RunConfig& config, const Model& model, const TrainHooks& hooks,
            std::size_t step, std::size_t examples, Tracker& train, Clock::time_point start,
            std::vector<CurveRecord>& curve) {
  const std::size_t n = is_episodic(config.task) ? config.eval_episodes : config.eval_symbols;
  const Metrics m = evaluate(model, config, n, config.eval_seed());
  CurveRecord r;
  r.step = step;
  r.examples_seen = examples;
  r.train_cost = train.take();
  r.eval_cost = m.cost;
  r.masked_accuracy = m.masked_accuracy;
  r.exact_match = m.exact_match;
  r.wall_seconds = seconds_since(start);
  curve.push_back(r);
  if (hooks.on_checkpoint) hooks.on_checkpoint(step, model);
  return !hooks.on_eval || hooks.on_eval(r);
}

template <typename NextBatch>
std::vector<CurveRecord> train_loop(const RunConfig& config, Model& model,
                                    const TrainHooks& hooks, NextBatch next_batch,
                                    std::size_t examples_per_step) {
  validate(config);
  Adam adam(AdamConfig{.learning_rate = config.learning_rate});
  auto params = model.parameters();
  std::vector<CurveRecord> curve;
  Tracker train;
  const auto start = Clock::now();
  std::size_t last_eval = 0;
  for (std::size_t step = 1; step <= config.max_steps; ++step) {
    const auto [grads, cost, units] = next_batch();
    train.cost += cost;
    train.units += units;
    if (hooks.on_gradients) hooks.on_gradients(step, grads);
    adam.step(params, grads);
    if (step % config.eval_every == 0) {
      last_eval = step;
      if (!record(config, model, hooks, step, step * examples_per_step, train, start, curve))
        return curve;
    }
  }
  if (last_eval != config.max_steps && config.max_steps > 0)
    record(config, model, hooks, config.max_steps, config.max_steps * examples_per_step, train,
           start, curve);
  return curve;
}

struct StepOutcome {
  std::vector<Tensor> grads;
  double cost;
  std::size_t units;
};

}  // namespace

std::vector<CurveRecord> train_episodic(const RunConfig& config, Model& model,
                                        const TrainHooks& hooks) {
  require(is_episodic(config.task), "train_episodic: task is not episodic");
  Rng rng = Rng::derive(config.seed, 0x7a1);
  const CopyTaskSpec spec = episode_spec(config);
  const std::size_t b = config.minibatch;
  const auto initial = model.initial_state(b);
  auto next = [&]() -> StepOutcome {
    std::vector<Episode> episodes;
    for (std::size_t r = 0; r < b; ++r) episodes.push_back(gen_copy(rng, spec));
    const double scale = 1.0 / static_cast<double>(b);
    BatchResult res = run_batch(model, episodes, initial,
                                std::numeric_limits<std::size_t>::max(), true, scale);
    double cost = 0.0;
    for (double c : res.stats.cost) cost += c;
    return {std::move(res.grads), cost, b};
  };
  return train_loop(config, model, hooks, next, b);
}

std::vector<CurveRecord> train_online(const RunConfig& config, Model& model,
                                      const TrainHooks& hooks) {
  require(!is_episodic(config.task), "train_online: task is not stream-based");
  validate(config);
  std::vector<Stream> streams;
  for (std::size_t r = 0; r < config.minibatch; ++r)
    streams.emplace_back(stream_source(config, Rng::mix(config.seed ^ 0x7a1), r, false));
  Model::State state = model.initial_state(config.minibatch);
  auto next = [&]() -> StepOutcome {
    std::vector<Episode> windows;
    std::size_t masked = 0;
    for (auto& s : streams) {
      windows.push_back(s.next_window(config.tbptt_window));
      masked += windows.back().masked_count();
    }
    const double scale = 1.0 / static_cast<double>(std::max<std::size_t>(masked, 1));
    BatchResult res =
        run_batch(model, windows, state, config.tbptt_window, true, scale);
    state = std::move(res.final_state);
    double cost = 0.0;
    for (double c : res.stats.cost) cost += c;
    return {std::move(res.grads), cost, masked};
  };
  return train_loop(config, model, hooks, next, config.minibatch);
}

std::vector<CurveRecord> train(const RunConfig& config, Model& model, const TrainHooks& hooks) {
  return is_episodic(config.task) ? train_episodic(config, model, hooks)
                                  : train_online(config, model, hooks);
}

namespace {

constexpr std::size_t kEvalBatch = 50;
constexpr std::size_t kEvalStreams = 10;

Metrics evaluate_episodic(const Model& model, const RunConfig& config, std::size_t n,
                          std::uint64_t seed) {
  Rng rng(seed);
  const CopyTaskSpec spec = episode_spec(config);
  std::vector<Episode> all;
  for (std::size_t i = 0; i < n; ++i) all.push_back(gen_copy(rng, spec));
  Metrics m;
  double cost = 0.0;
  std::size_t correct = 0, exact = 0;
  for (std::size_t i = 0; i < n; i += kEvalBatch) {
    const std::size_t j = std::min(n, i + kEvalBatch);
    const std::span<const Episode> part(all.data() + i, j - i);
    const BatchResult res = run_batch(model, part, model.initial_state(part.size()),
                                      std::numeric_limits<std::size_t>::max(), false, 1.0);
    for (std::size_t r = 0; r < part.size(); ++r) {
      cost += res.stats.cost[r];
      m.n_masked += res.stats.masked[r];
      correct += res.stats.correct[r];
      exact += res.stats.correct[r] == res.stats.masked[r] ? 1 : 0;
    }
  }
  m.n_sequences = n;
  m.cost = n ? cost / static_cast<double>(n) : 0.0;
  m.masked_accuracy = m.n_masked ? static_cast<double>(correct) / m.n_masked : 0.0;
  m.exact_match = n ? static_cast<double>(exact) / n : 0.0;
  return m;
}

Metrics evaluate_online(const Model& model, const RunConfig& config, std::size_t n,
                        std::uint64_t seed) {
  const std::size_t rows = std::min(kEvalStreams, n);
  const std::size_t per_row = (n + rows - 1) / rows;
  std::vector<Stream> streams;
  for (std::size_t r = 0; r < rows; ++r) streams.emplace_back(stream_source(config, seed, r, true));
  Model::State state = model.initial_state(rows);
  const std::size_t window = std::max<std::size_t>(config.tbptt_window, 1);

  double cost = 0.0;
  std::size_t masked = 0, correct = 0, segments = 0, exact = 0;
  // Per row: -1 outside a scored segment, else whether it is still all-correct.
  std::vector<int> open(rows, -1);
  auto close = [&](std::size_t r) {
    if (open[r] < 0) return;
    ++segments;
    exact += open[r] == 1 ? 1 : 0;
    open[r] = -1;
  };
  for (std::size_t done = 0; done < per_row; done += window) {
    const std::size_t len = std::min(window, per_row - done);
    std::vector<Episode> windows;
    for (auto& s : streams) windows.push_back(s.next_window(len));
    BatchResult res = run_batch(model, windows, state, len, false, 1.0);
    state = std::move(res.final_state);
    for (std::size_t r = 0; r < rows; ++r) {
      cost += res.stats.cost[r];
      masked += res.stats.masked[r];
      correct += res.stats.correct[r];
      for (signed char h : res.stats.hits[r]) {
        if (h < 0) {
          close(r);
        } else {
          if (open[r] < 0) open[r] = 1;
          if (h == 0) open[r] = 0;
        }
      }
    }
  }
  for (std::size_t r = 0; r < rows; ++r) close(r);

  Metrics m;
  m.n_sequences = segments;
  m.n_masked = masked;
  m.cost = masked ? cost / static_cast<double>(masked) : 0.0;
  m.masked_accuracy = masked ? static_cast<double>(correct) / masked : 0.0;
  m.exact_match = segments ? static_cast<double>(exact) / segments : 0.0;
  return m;
}

}  // namespace

Metrics evaluate(const Model& model, const RunConfig& config, std::size_t n,
                 std::uint64_t seed) {
  require(model.config().vocab_size == run_vocab(config).size(),
          "evaluate: model vocabulary does not match the task");
  if (n == 0) return {};
  return is_episodic(config.task) ? evaluate_episodic(model, config, n, seed)
                                  : evaluate_online(model, config, n, seed);
}

}  // namespace holocell
