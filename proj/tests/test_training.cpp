// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <cstring>
#include <sstream>

#include "holocell/checkpoint.hpp"
#include "holocell/error.hpp"
#include "holocell/training.hpp"

using namespace holocell;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

// Straight-line Adam for one scalar.
struct ReferenceAdam {
  double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0, v = 0;
  int t = 0;
  double step(double theta, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    return theta - lr * mh / (std::sqrt(vh) + eps);
  }
};

RunConfig small_config(TaskKind task, CellKind model = CellKind::kAssocLstm) {
  RunConfig c;
  c.task = task;
  c.model = model;
  c.hidden_size = 8;
  c.minibatch = 2;
  c.tbptt_window = 20;
  c.seed = 3;
  c.max_steps = 6;
  c.eval_every = 3;
  c.eval_episodes = 6;
  c.eval_symbols = 300;
  c.copy.delay = 5;
  c.copy.max_length = 4;
  return c;
}

Model make_model(const RunConfig& c) { return Model(c.model_config(run_vocab(c).size())); }

void zero_head(Model& model) {
  for (auto* p : model.parameters())
    if (p->name.rfind("head.", 0) == 0)
      for (double& v : p->value.storage()) v = 0.0;
}

NamedTensor* find(Model& model, const std::string& name) {
  auto params = model.parameters();
  const auto names = model.parameter_names();
  for (std::size_t i = 0; i < params.size(); ++i)
    if (names[i] == name) return params[i];
  return nullptr;
}

double log_softmax_at(std::span<const double> logits, int target) {
  double top = logits[0];
  for (double l : logits) top = std::max(top, l);
  double z = 0;
  for (double l : logits) z += std::exp(l - top);
  return logits[static_cast<std::size_t>(target)] - top - std::log(z);
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("adam first step moves by the step size against the gradient") {
    NamedTensor w{"w", Tensor::vector({0.7, -0.2})};
    Adam adam;
    NamedTensor* ps[] = {&w};
    const Tensor g = Tensor::vector({2.5, -0.01});
    adam.step(ps, std::span(&g, 1));
    CHECK(w.value[0] == doctest::Approx(0.7 - 1e-3 * 2.5 / (2.5 + 1e-8)).epsilon(1e-15));
    CHECK(w.value[1] == doctest::Approx(-0.2 + 1e-3 * 0.01 / (0.01 + 1e-8)).epsilon(1e-15));
    CHECK(adam.steps() == 1);
  }

  TEST_CASE("adam leaves parameters alone under zero gradients") {
    NamedTensor w{"w", Tensor::vector({1.0, 2.0, 3.0})};
    const Tensor before = w.value;
    Adam adam;
    NamedTensor* ps[] = {&w};
    const Tensor g({3}, 0.0);
    for (int i = 0; i < 100; ++i) adam.step(ps, std::span(&g, 1));
    CHECK(w.value == before);
  }

  TEST_CASE("adam on a quadratic matches the straight-line reference for 1000 steps") {
    NamedTensor w{"w", Tensor::scalar(-4.0)};
    Adam adam(AdamConfig{.learning_rate = 0.05});
    ReferenceAdam ref;
    ref.lr = 0.05;
    double theta = -4.0;
    NamedTensor* ps[] = {&w};
    for (int i = 0; i < 1000; ++i) {
      const Tensor g = Tensor::scalar(2.0 * (w.value[0] - 3.0));
      adam.step(ps, std::span(&g, 1));
      theta = ref.step(theta, 2.0 * (theta - 3.0));
      REQUIRE(std::abs(w.value[0] - theta) <= 1e-12);
    }
    CHECK(std::abs(theta - 3.0) < 0.1);
  }

  TEST_CASE("adam aborts on non-finite gradients without touching parameters") {
    NamedTensor a{"a", Tensor::vector({1.0})}, b{"b", Tensor::vector({2.0})};
    Adam adam;
    NamedTensor* ps[] = {&a, &b};
    const Tensor gs[] = {Tensor::vector({0.5}), Tensor::vector({std::nan("")})};
    CHECK_THROWS_AS(adam.step(ps, gs), NumericalError);
    CHECK(a.value[0] == 1.0);
    CHECK(b.value[0] == 2.0);
    const Tensor bad_shape[] = {Tensor::vector({0.5, 1.0}), Tensor::vector({0.0})};
    CHECK_THROWS_AS(adam.step(ps, bad_shape), ContractViolation);
  }

  TEST_CASE("run config validation and defaults") {
    RunConfig c = small_config(TaskKind::kArith);
    CHECK(c.update_uses_h());
    c.task = TaskKind::kAssign;
    CHECK_FALSE(c.update_uses_h());
    c.use_h_for_update = true;
    CHECK(c.update_uses_h());
    CHECK_NOTHROW(validate(c));
    c.minibatch = 0;
    CHECK_THROWS_AS(validate(c), ContractViolation);
    c = small_config(TaskKind::kCopy, CellKind::kLstm);
    c.n_heads = 2;
    CHECK_THROWS_AS(validate(c), ContractViolation);
    c = small_config(TaskKind::kCopy);
    c.tbptt_window = 0;
    CHECK_THROWS_AS(validate(c), ContractViolation);
  }

  TEST_CASE("copy task: uniform over data symbols costs 10 ln 8 per sequence") {
    RunConfig c = small_config(TaskKind::kCopy);
    c.copy = CopyTaskSpec{};
    Model model = make_model(c);
    zero_head(model);
    Tensor& b = find(model, "head.b")->value;
    b[8] = b[9] = -1e3;
    const Metrics m = evaluate(model, c, 20, 1);
    CHECK(m.cost == doctest::Approx(10.0 * std::log(8.0)).epsilon(1e-12));
    CHECK(m.n_sequences == 20);
    CHECK(m.n_masked == 200);
  }

  TEST_CASE("untrained copy model is near the uniform cost over the vocabulary") {
    RunConfig c = small_config(TaskKind::kCopy);
    c.copy = CopyTaskSpec{};
    c.hidden_size = 128;
    const Metrics m = evaluate(make_model(c), c, 10, 1);
    CHECK(m.cost > 10.0 * std::log(8.0));
    CHECK(m.cost < 10.0 * std::log(10.0) * 1.1);
    CHECK(m.exact_match == 0.0);
  }

  TEST_CASE("uniform model on arithmetic costs ln(vocab) per masked symbol") {
    RunConfig c = small_config(TaskKind::kArith);
    Model model = make_model(c);
    zero_head(model);
    const Metrics m = evaluate(model, c, 500, 4);
    CHECK(m.cost == doctest::Approx(std::log(14.0)).epsilon(1e-12));
    CHECK(m.n_masked > 0);
  }

  TEST_CASE("an oracle model scores perfectly") {
    // Bytes "0123456789" cycled: the next byte is a function of the current one.
    const auto dir = std::filesystem::temp_directory_path() / "holocell_oracle_model";
    std::filesystem::create_directories(dir);
    {
      std::ofstream out(dir / "digits.bin", std::ios::binary);
      for (int i = 0; i < 100; ++i) out << "0123456789";
    }
    RunConfig c = small_config(TaskKind::kBytes, CellKind::kLstm);
    c.bytes_path = (dir / "digits.bin").string();
    c.hidden_size = 10;
    Model model = make_model(c);
    for (auto* p : model.parameters())
      for (double& v : p->value.storage()) v = 0.0;
    const std::size_t nh = 10;
    Tensor& wx = find(model, "layer0.W_xh")->value;
    Tensor& bh = find(model, "layer0.b_h")->value;
    Tensor& hw = find(model, "head.W")->value;
    for (std::size_t k = 0; k < nh; ++k) {
      wx.at('0' + k, 3 * nh + k) = 5.0;
      bh[k] = -30.0;
      bh[nh + k] = 30.0;
      bh[2 * nh + k] = 30.0;
      hw.at(k, '0' + (k + 1) % 10) = 60.0;
    }
    const Metrics m = evaluate(model, c, 1000, 2);
    CHECK(m.masked_accuracy == 1.0);
    CHECK(m.exact_match == 1.0);
    CHECK(m.cost < 1e-6);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("evaluation is deterministic and leaves parameters alone") {
    RunConfig c = small_config(TaskKind::kXml);
    Model model = make_model(c);
    const Tensor before = find(model, "head.W")->value;
    const Metrics a = evaluate(model, c, 400, 9), b = evaluate(model, c, 400, 9);
    CHECK(a.cost == b.cost);
    CHECK(a.masked_accuracy == b.masked_accuracy);
    CHECK(a.exact_match == b.exact_match);
    CHECK(find(model, "head.W")->value == before);
    CHECK(evaluate(model, c, 400, 10).cost != a.cost);
  }

  TEST_CASE("masked loss equals per-position recomputation") {
    RunConfig c = small_config(TaskKind::kAssign);
    Model model = make_model(c);
    Stream s = gen_var_assign(5), t = gen_var_assign(6);
    const std::vector<Episode> eps{s.next_window(60), t.next_window(60)};
    const auto res = run_batch(model, eps, model.initial_state(2), 1000, false, 1.0);

    // Oracle: step the model one row at a time and sum -log p(target) at masked steps.
    double total = 0.0;
    for (std::size_t r = 0; r < 2; ++r) {
      Tape tape;
      const auto bound = model.bind(tape, false);
      auto state = model.load_state(tape, model.initial_state(1));
      double row_cost = 0.0;
      for (std::size_t i = 0; i < eps[r].size(); ++i) {
        const std::vector<int> id{eps[r].inputs[i]};
        const Var logits = model.step(tape, bound, state, tape.constant(one_hot(id, run_vocab(c).size())));
        if (eps[r].mask[i]) row_cost -= log_softmax_at(logits.value().data(), eps[r].targets[i]);
      }
      CHECK(res.stats.cost[r] == doctest::Approx(row_cost).epsilon(1e-12));
      total += row_cost;
    }
    CHECK(res.loss == doctest::Approx(total).epsilon(1e-12));

    // Unmasked targets contribute exactly nothing.
    std::vector<Episode> scrambled = eps;
    for (auto& e : scrambled)
      for (std::size_t i = 0; i < e.size(); ++i)
        if (!e.mask[i]) e.targets[i] = 0;
    const auto res2 = run_batch(model, scrambled, model.initial_state(2), 1000, false, 1.0);
    CHECK(res2.loss == res.loss);
  }

  TEST_CASE("window at least the sequence length equals full bptt") {
    RunConfig c = small_config(TaskKind::kCopy);
    Model model = make_model(c);
    Rng rng(1);
    const std::vector<Episode> eps{gen_copy(rng, c.copy), gen_copy(rng, c.copy)};
    const std::size_t len = eps[0].size();
    const auto full = run_batch(model, eps, model.initial_state(2), std::size_t(-1), true, 0.5);
    const auto same = run_batch(model, eps, model.initial_state(2), len, true, 0.5);
    REQUIRE(full.grads.size() == same.grads.size());
    for (std::size_t i = 0; i < full.grads.size(); ++i)
      for (std::size_t k = 0; k < full.grads[i].size(); ++k)
        CHECK(std::abs(full.grads[i][k] - same.grads[i][k]) <= 1e-12);
    CHECK(full.loss == same.loss);
  }

  TEST_CASE("truncated windows carry state but cut gradients") {
    RunConfig c = small_config(TaskKind::kXml);
    Model model = make_model(c);
    Stream s = gen_xml(8);
    const std::vector<Episode> eps{s.next_window(250)};
    const auto full = run_batch(model, eps, model.initial_state(1), 250, true, 1.0);
    const auto cut = run_batch(model, eps, model.initial_state(1), 100, true, 1.0);
    // Forward values do not depend on the window.
    CHECK(cut.loss == doctest::Approx(full.loss).epsilon(1e-12));
    for (std::size_t l = 0; l < full.final_state.size(); ++l)
      for (std::size_t k = 0; k < full.final_state[l].size(); ++k)
        CHECK(cut.final_state[l][k] == full.final_state[l][k]);
    double diff = 0.0;
    for (std::size_t i = 0; i < full.grads.size(); ++i)
      for (std::size_t k = 0; k < full.grads[i].size(); ++k)
        diff = std::max(diff, std::abs(full.grads[i][k] - cut.grads[i][k]));
    CHECK(diff > 1e-9);

    // Three windows (100, 100, 50) with state handed over equal one pass of 250.
    Stream a = gen_xml(8);
    Model::State state = model.initial_state(1);
    double loss = 0.0;
    for (std::size_t len : {100, 100, 50}) {
      const std::vector<Episode> w{a.next_window(len)};
      auto r = run_batch(model, w, state, 100, false, 1.0);
      state = r.final_state;
      loss += r.loss;
    }
    CHECK(loss == doctest::Approx(full.loss).epsilon(1e-12));
  }

  TEST_CASE("non-finite parameters abort the run") {
    RunConfig c = small_config(TaskKind::kCopy);
    Model model = make_model(c);
    find(model, "head.b")->value[0] = std::nan("");
    CHECK_THROWS_AS(train(c, model), NumericalError);
  }

  TEST_CASE("the optimizer sees raw gradients and applies plain adam") {
    for (auto task : {TaskKind::kCopyVariable, TaskKind::kAssign}) {
      RunConfig c = small_config(task);
      c.learning_rate = 0.01;
      Model model = make_model(c);
      std::vector<Tensor> start;
      for (const auto* p : std::as_const(model).parameters()) start.push_back(p->value);
      std::vector<std::vector<Tensor>> seen;
      TrainHooks hooks;
      hooks.on_gradients = [&](std::size_t, std::span<const Tensor> g) {
        seen.emplace_back(g.begin(), g.end());
      };
      train(c, model, hooks);
      REQUIRE(seen.size() == c.max_steps);
      // Replay every coordinate through the straight-line reference.
      const auto params = std::as_const(model).parameters();
      for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t k = 0; k < start[i].size(); k += 7) {
          ReferenceAdam ref;
          ref.lr = 0.01;
          double theta = start[i][k];
          for (const auto& g : seen) theta = ref.step(theta, g[i][k]);
          REQUIRE(std::abs(theta - params[i]->value[k]) <= 1e-15 * std::max(1.0, std::abs(theta)));
        }
    }
  }

  TEST_CASE("learning curves are monotone in step and deterministic") {
    for (auto task : {TaskKind::kCopy, TaskKind::kArith}) {
      RunConfig c = small_config(task);
      Model a = make_model(c), b = make_model(c);
      const auto ca = train(c, a), cb = train(c, b);
      REQUIRE(ca.size() == 2);
      REQUIRE(cb.size() == 2);
      for (std::size_t i = 0; i < ca.size(); ++i) {
        CHECK(ca[i].step == (i + 1) * 3);
        CHECK(ca[i].examples_seen == ca[i].step * c.minibatch);
        CHECK(ca[i].train_cost == cb[i].train_cost);
        CHECK(ca[i].eval_cost == cb[i].eval_cost);
        CHECK(ca[i].masked_accuracy == cb[i].masked_accuracy);
      }
      std::ostringstream out;
      write_curve_header(out);
      write_curve_row(out, ca[0]);
      CHECK(out.str().rfind("step,examples_seen,train_cost,eval_cost,masked_accuracy,exact_match,wall_seconds\n3,6,", 0) == 0);
    }
  }

  TEST_CASE("an early stop from the observer ends training") {
    RunConfig c = small_config(TaskKind::kCopy);
    Model model = make_model(c);
    TrainHooks hooks;
    hooks.on_eval = [](const CurveRecord&) { return false; };
    CHECK(train(c, model, hooks).size() == 1);
  }

  TEST_CASE("a short copy run lowers the training cost") {
    RunConfig c = small_config(TaskKind::kCopy);
    c.learning_rate = 0.01;
    c.max_steps = 200;
    c.eval_every = 100;
    Model model = make_model(c);
    const auto curve = train(c, model);
    REQUIRE(curve.size() == 2);
    CHECK(curve[1].train_cost < curve[0].train_cost);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip is bit exact and keeps permutations") {
    const auto dir = std::filesystem::temp_directory_path() / "holocell_ckpt_test";
    std::filesystem::create_directories(dir);
    RunConfig c = small_config(TaskKind::kAssign);
    c.n_copies = 3;
    c.n_heads = 2;
    c.layers = 2;
    Model model = make_model(c);
    Rng rng(4);
    for (auto* p : model.parameters())
      for (double& v : p->value.storage()) v = rng.normal() * 1e-3 + 1.0 / 3.0;
    save_checkpoint(dir / "m", model, c, 17);
    const Checkpoint ck = load_checkpoint(dir / "m");
    CHECK(ck.step == 17);
    CHECK(ck.config.n_heads == 2);
    CHECK(ck.config.task == TaskKind::kAssign);
    const auto a = std::as_const(model).parameters();
    const auto b = std::as_const(*ck.model).parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      REQUIRE(a[i]->value.same_shape(b[i]->value));
      CHECK(std::memcmp(a[i]->value.data().data(), b[i]->value.data().data(),
                        8 * a[i]->value.size()) == 0);
    }
    for (std::size_t l = 0; l < 2; ++l)
      CHECK(model.layers()[l]->permutations() == ck.model->layers()[l]->permutations());
    CHECK(evaluate(model, c, 300, 1).cost == evaluate(*ck.model, ck.config, 300, 1).cost);
    CHECK(load_checkpoint(dir / "m.json").step == 17);
    CHECK(load_checkpoint(dir / "m.bin").step == 17);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("corrupt or missing checkpoints are data errors") {
    const auto dir = std::filesystem::temp_directory_path() / "holocell_ckpt_bad";
    std::filesystem::create_directories(dir);
    RunConfig c = small_config(TaskKind::kCopy);
    Model model = make_model(c);
    save_checkpoint(dir / "m", model, c, 1);
    CHECK_THROWS_AS(load_checkpoint(dir / "nothing"), DataError);
    {
      std::fstream f(dir / "m.bin", std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(40);
      f.put('\x7f');
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "m"), DataError);
    save_checkpoint(dir / "m", model, c, 1);
    {
      std::ofstream f(dir / "m.json", std::ios::trunc);
      f << "{\"format\": 1, \"config\": ";
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "m"), DataError);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("run manifest captures the configuration") {
    RunConfig c = small_config(TaskKind::kArith);
    c.n_heads = 3;
    const auto j = run_manifest(c);
    CHECK(j["version"] == kLibraryVersion);
    CHECK(j["seed"] == 3);
    const RunConfig back = run_config_from_json(j["config"]);
    CHECK(back.n_heads == 3);
    CHECK(back.task == TaskKind::kArith);
    CHECK(back.update_uses_h());
    CHECK(to_json(back) == to_json(c));
  }
}
