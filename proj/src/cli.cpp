// SPDX-License-Identifier: Apache-2.0
#include "holocell/cli.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "holocell/checkpoint.hpp"
#include "holocell/error.hpp"
#include "holocell/holo_memory.hpp"
#include "holocell/tasks.hpp"
#include "holocell/training.hpp"

namespace holocell {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::size_t parse_count(std::string_view s) {
  std::size_t v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && end == s.data() + s.size() && !s.empty(), [&] {
    return "not a non-negative integer: '" + std::string(s) + "'";
  });
  return v;
}

std::uint64_t resolve_seed(const CLI::Option* flag, std::uint64_t value, std::uint64_t fallback) {
  if (flag->count() > 0) return value;
  if (const char* env = std::getenv("HOLOCELL_SEED"); env && *env) {
    try {
      return parse_count(env);
    } catch (const ContractViolation&) {
      throw ContractViolation(std::string("HOLOCELL_SEED is not an integer: '") + env + "'");
    }
  }
  return fallback;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

std::string csv_text(std::span<const CurveRecord> curve) {
  std::ostringstream ss;
  write_curve_header(ss);
  for (const auto& r : curve) write_curve_row(ss, r);
  return ss.str();
}

json metrics_json(const Metrics& m) {
  return {{"cost", m.cost},
          {"masked_accuracy", m.masked_accuracy},
          {"exact_match", m.exact_match},
          {"n_sequences", m.n_sequences},
          {"n_masked", m.n_masked}};
}

// ---- capacity ----

struct CapacityArgs {
  std::string items = "1..100", copies = "50";
  std::size_t n_h = 36300, trials = 5;
  std::uint64_t seed = 1;
  bool paired = false;
  unsigned threads = 1;
  std::string out;
  std::string image;
  std::size_t width = 110, height = 110, channels = 3;
  std::size_t image_items = 0;
  CLI::Option* seed_flag = nullptr;
};

void cmd_capacity(const CapacityArgs& a, std::ostream& out) {
  SweepSpec spec;
  spec.items = parse_range(a.items);
  spec.copies = parse_range(a.copies);
  spec.paired = a.paired;
  spec.n_h = a.n_h;
  spec.n_trials = a.trials;
  spec.seed = resolve_seed(a.seed_flag, a.seed, 1);
  spec.threads = a.threads;
  require(spec.n_h >= 2 && spec.n_h % 2 == 0, "--nh must be an even number >= 2");
  require(spec.n_trials >= 1, "--trials must be >= 1");
  require(spec.threads >= 1, "--threads must be >= 1");
  require(!spec.paired || spec.items.size() == spec.copies.size(),
          "--paired needs --items and --copies of equal length");

  json manifest = {{"library", "holocell"},
                   {"version", kLibraryVersion},
                   {"command", "capacity"},
                   {"seed", spec.seed},
                   {"items", spec.items},
                   {"copies", spec.copies},
                   {"paired", spec.paired},
                   {"n_h", spec.n_h},
                   {"n_trials", spec.n_trials}};
  const bool images = a.image_items > 0;
  const ImageShape shape{a.width, a.height, a.channels};
  if (images) {
    require(shape.length() >= 2 && shape.length() % 2 == 0,
            "image width*height*channels must be even");
    manifest["image"] = {{"file", a.image},
                         {"width", a.width},
                         {"height", a.height},
                         {"channels", a.channels},
                         {"items", a.image_items},
                         {"copies", spec.copies.front()}};
  }
  const fs::path dir = a.out;
  if (!a.out.empty()) {
    ensure_dir(dir);
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  }

  const auto reports = capacity_sweep(spec);
  std::ostringstream csv;
  write_capacity_csv(csv, reports);
  if (a.out.empty())
    out << csv.str();
  else
    write_file(dir / "capacity.csv", csv.str());

  if (!images) return;
  Rng rng = Rng::derive(spec.seed, 0x1a6e);
  std::vector<std::vector<double>> items;
  if (a.image.empty()) {
    for (std::size_t i = 0; i < a.image_items; ++i)
      items.push_back(synthetic_image(shape.length(), rng));
  } else {
    items = load_raw_images(a.image, shape, a.image_items, rng);
  }
  const RoundtripResult rt = image_roundtrip(items, spec.copies.front(), spec.seed);
  const json summary = {{"n_items", a.image_items},
                        {"n_copies", spec.copies.front()},
                        {"mse", rt.mse}};
  if (a.out.empty()) {
    out << summary.dump() << "\n";
  } else {
    write_raw_image(dir / "original.raw", rt.original);
    write_raw_image(dir / "reconstruction.raw", rt.reconstruction);
    write_file(dir / "roundtrip.json", summary.dump(2) + "\n");
  }
}

// ---- train ----

struct TrainArgs {
  std::string task = "copy", model = "alstm";
  RunConfig run;
  std::string data;
  bool use_h = false, no_h = false;
  std::string out = "run";
  std::size_t checkpoint_every = 0;
  CLI::Option* seed_flag = nullptr;
  CLI::Option* heads_flag = nullptr;
  CLI::Option* copies_flag = nullptr;
  CLI::Option* minibatch_flag = nullptr;
};

void cmd_train(TrainArgs& a, std::ostream& out) {
  RunConfig& c = a.run;
  c.task = parse_task(a.task);
  c.model = parse_cell_kind(a.model);
  c.seed = resolve_seed(a.seed_flag, c.seed, 1);
  c.bytes_path = a.data;
  require(!(a.use_h && a.no_h), "--use-h-update and --no-h-update are exclusive");
  if (a.use_h) c.use_h_for_update = true;
  if (a.no_h) c.use_h_for_update = false;
  require(c.model == CellKind::kAssocLstm || a.heads_flag->count() == 0,
          "--heads applies only to --model alstm");
  require(c.model == CellKind::kAssocLstm || a.copies_flag->count() == 0,
          "--copies applies only to --model alstm");
  if (c.task == TaskKind::kBytes && a.minibatch_flag->count() == 0) c.minibatch = 10;
  validate(c);

  const fs::path dir = a.out;
  ensure_dir(dir);
  write_file(dir / "manifest.json", run_manifest(c).dump(2) + "\n");

  const Vocab vocab = run_vocab(c);
  Model model(c.model_config(vocab.size()));
  std::vector<CurveRecord> curve;
  const std::size_t every = a.checkpoint_every ? a.checkpoint_every : c.eval_every;
  TrainHooks hooks;
  hooks.on_eval = [&](const CurveRecord& r) {
    curve.push_back(r);
    write_file(dir / "curve.csv", csv_text(curve));
    return true;
  };
  hooks.on_checkpoint = [&](std::size_t step, const Model& m) {
    if (step % every == 0) save_checkpoint(dir / ("checkpoint-" + std::to_string(step)), m, c, step);
  };
  train(c, model, hooks);
  write_file(dir / "curve.csv", csv_text(curve));
  save_checkpoint(dir / "model", model, c, c.max_steps);
  if (!curve.empty()) {
    const auto& r = curve.back();
    out << json{{"step", r.step},
                {"train_cost", r.train_cost},
                {"eval_cost", r.eval_cost},
                {"masked_accuracy", r.masked_accuracy},
                {"exact_match", r.exact_match}}
               .dump()
        << "\n";
  }
}

// ---- eval ----

struct EvalArgs {
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  CLI::Option* seed_flag = nullptr;
};

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  RunConfig probe = ck.config;
  probe.seed = resolve_seed(a.seed_flag, a.seed, ck.config.seed);
  const std::size_t n =
      a.n ? a.n : (is_episodic(ck.config.task) ? ck.config.eval_episodes : ck.config.eval_symbols);
  const Metrics m = evaluate(*ck.model, ck.config, n, probe.eval_seed());
  json j = metrics_json(m);
  j["task"] = task_name(ck.config.task);
  j["model"] = cell_kind_name(ck.config.model);
  j["step"] = ck.step;
  j["seed"] = probe.seed;
  out << j.dump() << "\n";
}

// ---- dump ----

struct DumpArgs {
  std::string task = "copy";
  std::size_t n = 5;
  std::uint64_t seed = 1;
  CopyTaskSpec copy;
  std::string data;
  double split = 0.1;
  CLI::Option* seed_flag = nullptr;
};

std::string underline(const std::vector<bool>& scored) {
  std::string line;
  for (bool s : scored) line.push_back(s ? '^' : ' ');
  while (!line.empty() && line.back() == ' ') line.pop_back();
  return line;
}

void cmd_dump(const DumpArgs& a, std::ostream& out) {
  const TaskKind task = parse_task(a.task);
  const std::uint64_t seed = resolve_seed(a.seed_flag, a.seed, 1);
  if (is_episodic(task)) {
    CopyTaskSpec spec = a.copy;
    spec.fixed_length = task == TaskKind::kCopy;
    require(spec.alphabet >= 1 && spec.alphabet <= 26 && spec.max_length >= 1,
            "copy task needs 1..26 symbols and length >= 1");
    const Vocab vocab = copy_vocab(spec);
    Rng rng(seed);
    for (std::size_t i = 0; i < a.n; ++i) {
      const Episode e = gen_copy(rng, spec);
      std::string in, tg;
      for (std::size_t t = 0; t < e.size(); ++t) {
        in.push_back(vocab.glyph(e.inputs[t]));
        tg.push_back(vocab.glyph(e.targets[t]));
      }
      out << in << "\n" << tg << "\n" << underline(e.mask) << "\n";
    }
    return;
  }
  std::unique_ptr<ChunkSource> source;
  if (task == TaskKind::kBytes) {
    require(!a.data.empty(), "dump --task bytes needs --data");
    source = std::make_unique<ByteSource>(gen_bytes(a.data, a.split).train, 0);
  } else {
    source = make_text_source(task, seed);
  }
  for (std::size_t i = 0; i < a.n; ++i) {
    const Chunk c = source->next();
    std::string text = c.text;
    if (task == TaskKind::kBytes)
      for (char& ch : text)
        if (static_cast<unsigned char>(ch) < 0x20 || static_cast<unsigned char>(ch) >= 0x7f) ch = '.';
    out << text << "\n" << underline(c.scored) << "\n";
  }
}

}  // namespace

std::vector<std::size_t> parse_range(std::string_view text) {
  std::vector<std::size_t> values;
  if (const auto dots = text.find(".."); dots != std::string_view::npos) {
    const std::size_t lo = parse_count(text.substr(0, dots));
    const std::size_t hi = parse_count(text.substr(dots + 2));
    require(lo >= 1 && lo <= hi, [&] { return "invalid range '" + std::string(text) + "'"; });
    for (std::size_t v = lo; v <= hi; ++v) values.push_back(v);
    return values;
  }
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = std::min(text.find(',', start), text.size());
    const std::size_t v = parse_count(text.substr(start, comma - start));
    require(v >= 1, "range values must be >= 1");
    values.push_back(v);
    start = comma + 1;
  }
  return values;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Holographic associative memory and Associative LSTM toolkit", "holocell"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kLibraryVersion);

  CapacityArgs cap;
  auto* capacity = app.add_subcommand("capacity", "Associative memory capacity sweep");
  capacity->add_option("--items", cap.items, "Items stored: N, A..B or A,B,C")->capture_default_str();
  capacity->add_option("--copies", cap.copies, "Redundant copies: N, A..B or A,B,C")
      ->capture_default_str();
  capacity->add_option("--nh", cap.n_h, "Reals per trace (even)")->capture_default_str();
  capacity->add_option("--trials", cap.trials, "Trials per cell")->capture_default_str();
  cap.seed_flag = capacity->add_option("--seed", cap.seed, "Seed (else HOLOCELL_SEED, else 1)");
  capacity->add_flag("--paired", cap.paired, "Pair items[i] with copies[i]");
  capacity->add_option("--threads", cap.threads, "Worker threads")->capture_default_str();
  capacity->add_option("--out", cap.out, "Output directory (CSV to stdout if omitted)");
  capacity->add_option("--image", cap.image, "Raw RGB file for the image round trip");
  capacity->add_option("--width", cap.width, "Image width")->capture_default_str();
  capacity->add_option("--height", cap.height, "Image height")->capture_default_str();
  capacity->add_option("--channels", cap.channels, "Image channels")->capture_default_str();
  capacity->add_option("--image-items", cap.image_items,
                       "Images stored in the round trip (0 skips it)");

  TrainArgs tr;
  auto* trainc = app.add_subcommand("train", "Train a model and write curves and checkpoints");
  trainc->add_option("--task", tr.task, "copy, copyvar, xml, assign, arith, bytes")
      ->capture_default_str();
  trainc->add_option("--model", tr.model, "lstm, alstm, permrnn, urnn, murnn")
      ->capture_default_str();
  trainc->add_option("--nh", tr.run.hidden_size, "Hidden size in reals")->capture_default_str();
  tr.copies_flag = trainc->add_option("--copies", tr.run.n_copies, "Redundant copies (alstm)");
  tr.heads_flag = trainc->add_option("--heads", tr.run.n_heads, "Read/write heads (alstm)");
  trainc->add_option("--layers", tr.run.layers, "Stacked layers")->capture_default_str();
  tr.minibatch_flag =
      trainc->add_option("--minibatch", tr.run.minibatch, "Sequences per minibatch (bytes: 10)");
  trainc->add_option("--window", tr.run.tbptt_window, "Truncated BPTT window")
      ->capture_default_str();
  tr.seed_flag = trainc->add_option("--seed", tr.run.seed, "Seed (else HOLOCELL_SEED, else 1)");
  trainc->add_option("--steps", tr.run.max_steps, "Minibatches")->capture_default_str();
  trainc->add_option("--eval-every", tr.run.eval_every, "Minibatches between evaluations")
      ->capture_default_str();
  trainc->add_option("--eval-episodes", tr.run.eval_episodes, "Episodes per evaluation")
      ->capture_default_str();
  trainc->add_option("--eval-symbols", tr.run.eval_symbols, "Stream symbols per evaluation")
      ->capture_default_str();
  trainc->add_option("--lr", tr.run.learning_rate, "Adam step size")->capture_default_str();
  trainc->add_option("--forget-bias", tr.run.forget_bias, "Initial forget-gate bias")
      ->capture_default_str();
  trainc->add_flag("--use-h-update", tr.use_h, "Feed h into the alstm update");
  trainc->add_flag("--no-h-update", tr.no_h, "Update from the input only");
  trainc->add_option("--delay", tr.run.copy.delay, "Copy task blanks")->capture_default_str();
  trainc->add_option("--alphabet", tr.run.copy.alphabet, "Copy task symbols")
      ->capture_default_str();
  trainc->add_option("--length", tr.run.copy.max_length, "Copy task (maximum) length")
      ->capture_default_str();
  trainc->add_option("--data", tr.data, "Byte file for --task bytes");
  trainc->add_option("--split", tr.run.bytes_split, "Trailing test fraction of --data")
      ->capture_default_str();
  trainc->add_option("--checkpoint-every", tr.checkpoint_every,
                     "Minibatches between checkpoints (default: eval interval)");
  trainc->add_option("--out", tr.out, "Output directory")->capture_default_str();

  EvalArgs ev;
  auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint; prints one JSON object");
  evalc->add_option("checkpoint", ev.checkpoint, "Checkpoint stem or manifest")->required();
  ev.seed_flag = evalc->add_option("--seed", ev.seed, "Held-out data seed (default: the run's)");
  evalc->add_option("-n", ev.n, "Episodes or symbols (default: the run's)");

  DumpArgs du;
  auto* dump = app.add_subcommand("dump", "Print task samples with scored targets marked");
  dump->add_option("--task", du.task, "copy, copyvar, xml, assign, arith, bytes")
      ->capture_default_str();
  dump->add_option("-n", du.n, "Samples")->capture_default_str();
  du.seed_flag = dump->add_option("--seed", du.seed, "Seed (else HOLOCELL_SEED, else 1)");
  dump->add_option("--delay", du.copy.delay, "Copy task blanks")->capture_default_str();
  dump->add_option("--alphabet", du.copy.alphabet, "Copy task symbols")->capture_default_str();
  dump->add_option("--length", du.copy.max_length, "Copy task (maximum) length")
      ->capture_default_str();
  dump->add_option("--data", du.data, "Byte file for --task bytes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kLibraryVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "holocell: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*capacity) cmd_capacity(cap, out);
    if (*trainc) cmd_train(tr, out);
    if (*evalc) cmd_eval(ev, out);
    if (*dump) cmd_dump(du, out);
    out.flush();
    return kExitOk;
  } catch (const ContractViolation& e) {
    err << "holocell: usage: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "holocell: numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DataError& e) {
    err << "holocell: data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "holocell: data error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace holocell
