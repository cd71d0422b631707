// SPDX-License-Identifier: Apache-2.0
#include "holocell/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "holocell/error.hpp"

namespace holocell {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormat = 1;

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f64(const std::string& in, std::size_t offset) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw DataError("cannot read " + path.string());
  return ss.str();
}

template <typename T>
T field(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest field '") + key + "': " + e.what());
  }
}

}  // namespace

void write_file(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError("cannot write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot rename " + tmp.string() + ": " + ec.message());
}

json to_json(const RunConfig& c) {
  json j;
  j["task"] = task_name(c.task);
  j["model"] = cell_kind_name(c.model);
  j["hidden_size"] = c.hidden_size;
  j["n_copies"] = c.n_copies;
  j["n_heads"] = c.n_heads;
  j["layers"] = c.layers;
  j["minibatch"] = c.minibatch;
  j["tbptt_window"] = c.tbptt_window;
  j["seed"] = c.seed;
  j["max_steps"] = c.max_steps;
  j["eval_every"] = c.eval_every;
  j["eval_episodes"] = c.eval_episodes;
  j["eval_symbols"] = c.eval_symbols;
  j["learning_rate"] = c.learning_rate;
  j["forget_bias"] = c.forget_bias;
  j["use_h_for_update"] = c.update_uses_h();
  j["copy"] = {{"alphabet", c.copy.alphabet},
               {"max_length", c.copy.max_length},
               {"delay", c.copy.delay}};
  j["bytes_path"] = c.bytes_path;
  j["bytes_split"] = c.bytes_split;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    c.task = parse_task(field<std::string>(j, "task"));
    c.model = parse_cell_kind(field<std::string>(j, "model"));
  } catch (const ContractViolation& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  c.hidden_size = field<std::size_t>(j, "hidden_size");
  c.n_copies = field<std::size_t>(j, "n_copies");
  c.n_heads = field<std::size_t>(j, "n_heads");
  c.layers = field<std::size_t>(j, "layers");
  c.minibatch = field<std::size_t>(j, "minibatch");
  c.tbptt_window = field<std::size_t>(j, "tbptt_window");
  c.seed = field<std::uint64_t>(j, "seed");
  c.max_steps = field<std::size_t>(j, "max_steps");
  c.eval_every = field<std::size_t>(j, "eval_every");
  c.eval_episodes = field<std::size_t>(j, "eval_episodes");
  c.eval_symbols = field<std::size_t>(j, "eval_symbols");
  c.learning_rate = field<double>(j, "learning_rate");
  c.forget_bias = field<double>(j, "forget_bias");
  c.use_h_for_update = field<bool>(j, "use_h_for_update");
  const json copy = field<json>(j, "copy");
  c.copy.alphabet = field<std::size_t>(copy, "alphabet");
  c.copy.max_length = field<std::size_t>(copy, "max_length");
  c.copy.delay = field<std::size_t>(copy, "delay");
  c.copy.fixed_length = c.task == TaskKind::kCopy;
  c.bytes_path = field<std::string>(j, "bytes_path");
  c.bytes_split = field<double>(j, "bytes_split");
  return c;
}

json run_manifest(const RunConfig& config) {
  return {{"library", "holocell"},
          {"version", kLibraryVersion},
          {"seed", config.seed},
          {"config", to_json(config)}};
}

void save_checkpoint(const fs::path& stem, const Model& model, const RunConfig& config,
                     std::size_t step) {
  std::string payload;
  json tensors = json::array();
  const auto names = model.parameter_names();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params[i]->value;
    tensors.push_back({{"name", names[i]}, {"shape", t.shape()}, {"offset", payload.size()}});
    for (double v : t.data()) put_f64(payload, v);
  }
  json perms = json::array();
  for (const auto& cell : model.layers()) {
    json layer = json::array();
    for (const auto& p : cell->permutations()) layer.push_back(p.map());
    perms.push_back(layer);
  }
  const Vocab vocab = run_vocab(config);
  json j = run_manifest(config);
  j["format"] = kFormat;
  j["step"] = step;
  j["vocab"] = vocab.glyphs().size() == 256 ? json("bytes") : json(vocab.glyphs());
  j["permutations"] = perms;
  j["tensors"] = tensors;
  j["payload"] = {{"file", stem.filename().string() + ".bin"},
                  {"bytes", payload.size()},
                  {"fnv1a64", fnv1a(payload)}};
  write_file(fs::path(stem.string() + ".bin"), payload);
  write_file(fs::path(stem.string() + ".json"), j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& path) {
  fs::path manifest = path;
  if (manifest.extension() == ".bin") manifest.replace_extension(".json");
  if (manifest.extension() != ".json") manifest = fs::path(path.string() + ".json");

  json j;
  try {
    j = json::parse(read_file(manifest));
  } catch (const json::exception& e) {
    throw DataError("checkpoint manifest " + manifest.string() + " is not valid JSON: " +
                    e.what());
  }
  if (field<int>(j, "format") != kFormat) throw DataError("unsupported checkpoint format");

  Checkpoint ck;
  ck.config = run_config_from_json(field<json>(j, "config"));
  ck.step = field<std::size_t>(j, "step");
  const Vocab vocab = run_vocab(ck.config);
  const json jv = field<json>(j, "vocab");
  const std::string want = vocab.glyphs().size() == 256 ? "bytes" : vocab.glyphs();
  if (!jv.is_string() || jv.get<std::string>() != want)
    throw DataError("checkpoint vocabulary does not match its task");

  const json pay = field<json>(j, "payload");
  const fs::path bin = manifest.parent_path() / field<std::string>(pay, "file");
  const std::string payload = read_file(bin);
  if (payload.size() != field<std::size_t>(pay, "bytes") ||
      fnv1a(payload) != field<std::uint64_t>(pay, "fnv1a64"))
    throw DataError("checkpoint payload " + bin.string() + " is corrupt");

  try {
    validate(ck.config);
    ck.model = std::make_unique<Model>(ck.config.model_config(vocab.size()));
  } catch (const ContractViolation& e) {
    throw DataError(std::string("checkpoint configuration rejected: ") + e.what());
  }
  Model& model = *ck.model;

  const json perms = field<json>(j, "permutations");
  if (!perms.is_array() || perms.size() != model.layers().size())
    throw DataError("checkpoint permutation table does not match the model");
  try {
    for (std::size_t l = 0; l < perms.size(); ++l) {
      std::vector<Permutation> ps;
      for (const auto& m : perms[l]) ps.emplace_back(m.get<std::vector<std::size_t>>());
      if (!ps.empty()) model.layers()[l]->set_permutations(std::move(ps));
    }
  } catch (const std::exception& e) {
    throw DataError(std::string("checkpoint permutations rejected: ") + e.what());
  }

  const json tensors = field<json>(j, "tensors");
  const auto names = model.parameter_names();
  auto params = model.parameters();
  if (!tensors.is_array() || tensors.size() != params.size())
    throw DataError("checkpoint tensor table does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const json& t = tensors[i];
    auto& value = params[i]->value;
    if (field<std::string>(t, "name") != names[i] ||
        field<std::vector<std::size_t>>(t, "shape") != value.shape())
      throw DataError("checkpoint tensor " + std::to_string(i) + " does not match " + names[i]);
    const std::size_t offset = field<std::size_t>(t, "offset");
    if (offset + 8 * value.size() > payload.size())
      throw DataError("checkpoint tensor " + names[i] + " runs past the payload");
    for (std::size_t k = 0; k < value.size(); ++k) value[k] = get_f64(payload, offset + 8 * k);
  }
  return ck;
}

}  // namespace holocell
