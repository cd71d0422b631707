// SPDX-License-Identifier: Apache-2.0
#include "holocell/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "holocell/error.hpp"

namespace holocell {

namespace {

const std::string kLower = "abcdefghijklmnopqrstuvwxyz";

std::string random_name(Rng& rng, std::size_t min_len, std::size_t max_len) {
  const auto len = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(min_len),
                                                        static_cast<std::int64_t>(max_len)));
  std::string name;
  for (std::size_t i = 0; i < len; ++i) name += kLower[rng.below(kLower.size())];
  return name;
}

void append(Chunk& chunk, std::string_view text, bool scored) {
  chunk.text += text;
  chunk.scored.insert(chunk.scored.end(), text.size(), scored);
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocab / Episode

Vocab::Vocab(std::string glyphs) : glyphs_(std::move(glyphs)) {
  index_.fill(-1);
  for (std::size_t i = 0; i < glyphs_.size(); ++i) {
    const auto b = static_cast<unsigned char>(glyphs_[i]);
    require(index_[b] < 0, "Vocab: duplicate glyph");
    index_[b] = static_cast<int>(i);
  }
}

Vocab Vocab::bytes() {
  std::string all(256, '\0');
  for (int i = 0; i < 256; ++i) all[static_cast<std::size_t>(i)] = static_cast<char>(i);
  return Vocab(std::move(all));
}

int Vocab::id(char glyph) const {
  const int i = index_[static_cast<unsigned char>(glyph)];
  if (i < 0) throw ContractViolation(std::string("Vocab: unknown glyph '") + glyph + "'");
  return i;
}

char Vocab::glyph(int id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < glyphs_.size(), "Vocab: id out of range");
  return glyphs_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(char glyph) const noexcept {
  return index_[static_cast<unsigned char>(glyph)] >= 0;
}

std::size_t Episode::masked_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

std::string_view task_name(TaskKind task) {
  switch (task) {
    case TaskKind::kCopy: return "copy";
    case TaskKind::kCopyVariable: return "copyvar";
    case TaskKind::kXml: return "xml";
    case TaskKind::kAssign: return "assign";
    case TaskKind::kArith: return "arith";
    case TaskKind::kBytes: return "bytes";
  }
  return "?";
}

TaskKind parse_task(std::string_view name) {
  for (TaskKind t : {TaskKind::kCopy, TaskKind::kCopyVariable, TaskKind::kXml, TaskKind::kAssign,
                     TaskKind::kArith, TaskKind::kBytes})
    if (task_name(t) == name) return t;
  throw ContractViolation("unknown task '" + std::string(name) +
                          "' (expected copy, copyvar, xml, assign, arith or bytes)");
}

bool is_episodic(TaskKind task) {
  return task == TaskKind::kCopy || task == TaskKind::kCopyVariable;
}

// ---------------------------------------------------------------------------
// Copy

Vocab copy_vocab(const CopyTaskSpec& spec) {
  require(spec.alphabet >= 1 && spec.alphabet <= 26, "copy: alphabet must be 1..26 symbols");
  return Vocab(kLower.substr(0, spec.alphabet) + "_|");
}

Episode gen_copy(Rng& rng, const CopyTaskSpec& spec) {
  require(spec.max_length >= 1, "copy: max_length must be >= 1");
  require(spec.alphabet >= 1 && spec.alphabet <= 26, "copy: alphabet must be 1..26 symbols");
  const int blank = static_cast<int>(spec.alphabet);
  const int delimiter = blank + 1;
  const std::size_t k =
      spec.fixed_length
          ? spec.max_length
          : static_cast<std::size_t>(rng.between(1, static_cast<std::int64_t>(spec.max_length)));
  Episode ep;
  std::vector<int> data(k);
  for (int& s : data) s = static_cast<int>(rng.below(spec.alphabet));
  auto push = [&](int input, int target, bool masked) {
    ep.inputs.push_back(input);
    ep.targets.push_back(target);
    ep.mask.push_back(masked);
  };
  for (int s : data) push(s, blank, false);
  for (std::size_t i = 0; i < spec.delay; ++i) push(blank, blank, false);
  push(delimiter, blank, false);
  for (int s : data) push(blank, s, true);
  return ep;
}

Episode gen_copy(std::uint64_t seed, bool fixed_length) {
  Rng rng(seed);
  CopyTaskSpec spec;
  spec.fixed_length = fixed_length;
  return gen_copy(rng, spec);
}

// ---------------------------------------------------------------------------
// XML

XmlSource::XmlSource(std::uint64_t seed) : rng_(seed), vocab_(kLower + "</>") {}

Chunk XmlSource::next() {
  Chunk chunk;
  const bool close = !open_.empty() && (open_.size() == kMaxDepth || rng_.coin());
  if (close) {
    // The '<' is predictable after any '>', the '/' is not, the name and '>'
    // follow from the stack.
    append(chunk, "<", true);
    append(chunk, "/", false);
    append(chunk, open_.back(), true);
    append(chunk, ">", true);
    open_.pop_back();
  } else {
    std::string name = random_name(rng_, 1, 10);
    append(chunk, "<", true);
    append(chunk, name, false);
    append(chunk, ">", false);
    open_.push_back(std::move(name));
  }
  return chunk;
}

// ---------------------------------------------------------------------------
// Variable assignment

AssignSource::AssignSource(std::uint64_t seed) : rng_(seed), vocab_(kLower + "(),.") {}

Chunk AssignSource::next() {
  const auto n = static_cast<std::size_t>(rng_.between(1, 4));
  std::vector<std::string> names;
  std::vector<char> values;
  while (names.size() < n) {
    std::string name = random_name(rng_, 1, 4);
    if (std::find(names.begin(), names.end(), name) != names.end()) continue;
    names.push_back(std::move(name));
    values.push_back(kLower[rng_.below(kLower.size())]);
  }
  const std::size_t query = rng_.below(n);
  Chunk chunk;
  for (std::size_t i = 0; i < n; ++i)
    append(chunk, "s(" + names[i] + "," + values[i] + "),", false);
  append(chunk, "q(" + names[query] + ")", false);
  append(chunk, std::string(1, values[query]), true);
  append(chunk, ".", true);
  return chunk;
}

// ---------------------------------------------------------------------------
// Arithmetic

ArithSource::ArithSource(std::uint64_t seed) : rng_(seed), vocab_("0123456789+-=]") {}

Chunk ArithSource::next() {
  auto operand = [&] {
    const std::int64_t digits = rng_.between(1, 8);
    if (digits == 1) return rng_.between(0, 9);
    std::int64_t lo = 1;
    for (std::int64_t i = 1; i < digits; ++i) lo *= 10;
    return rng_.between(lo, lo * 10 - 1);
  };
  std::int64_t a = operand();
  if (a != 0 && rng_.coin()) a = -a;
  const bool plus = rng_.coin();
  const std::int64_t b = operand();
  const std::int64_t result = plus ? a + b : a - b;
  std::string answer = std::to_string(result);
  std::reverse(answer.begin(), answer.end());
  Chunk chunk;
  append(chunk, std::to_string(a) + (plus ? "+" : "-") + std::to_string(b) + "=", false);
  append(chunk, answer + "]", true);
  return chunk;
}

// ---------------------------------------------------------------------------
// Bytes

ByteSource::ByteSource(std::shared_ptr<const std::vector<std::uint8_t>> data, std::size_t offset,
                       std::size_t chunk)
    : data_(std::move(data)), pos_(0), chunk_(chunk), vocab_(Vocab::bytes()) {
  require(data_ && !data_->empty(), "ByteSource: empty data");
  require(chunk_ >= 1, "ByteSource: chunk must be >= 1");
  pos_ = offset % data_->size();
}

Chunk ByteSource::next() {
  Chunk chunk;
  for (std::size_t i = 0; i < chunk_; ++i) {
    chunk.text.push_back(static_cast<char>((*data_)[pos_]));
    pos_ = (pos_ + 1) % data_->size();
  }
  chunk.scored.assign(chunk.text.size(), true);
  return chunk;
}

ByteCorpus gen_bytes(const std::filesystem::path& path, double test_fraction) {
  require(test_fraction >= 0.0 && test_fraction < 1.0, "bytes: split must be in [0, 1)");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read byte corpus " + path.string());
  std::vector<std::uint8_t> all((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  if (all.empty()) throw DataError("byte corpus " + path.string() + " is empty");
  const auto n_test = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(all.size())));
  const std::size_t n_train = all.size() - n_test;
  ByteCorpus corpus;
  corpus.train = std::make_shared<const std::vector<std::uint8_t>>(all.begin(),
                                                                   all.begin() + n_train);
  corpus.test =
      std::make_shared<const std::vector<std::uint8_t>>(all.begin() + n_train, all.end());
  return corpus;
}

// ---------------------------------------------------------------------------
// Stream

Stream::Stream(std::unique_ptr<ChunkSource> source) : source_(std::move(source)) {
  require(source_ != nullptr, "Stream: null source");
}

void Stream::fill(std::size_t count) {
  while (ids_.size() < count) {
    const Chunk chunk = source_->next();
    for (std::size_t i = 0; i < chunk.text.size(); ++i) {
      ids_.push_back(source_->vocab().id(chunk.text[i]));
      scored_.push_back(chunk.scored[i]);
    }
  }
}

Episode Stream::next_window(std::size_t length) {
  require(length >= 1, "Stream: window length must be >= 1");
  fill(length + 1);
  Episode window;
  window.inputs.assign(ids_.begin(), ids_.begin() + static_cast<std::ptrdiff_t>(length));
  window.targets.assign(ids_.begin() + 1, ids_.begin() + static_cast<std::ptrdiff_t>(length) + 1);
  window.mask.assign(scored_.begin() + 1, scored_.begin() + static_cast<std::ptrdiff_t>(length) + 1);
  ids_.erase(ids_.begin(), ids_.begin() + static_cast<std::ptrdiff_t>(length));
  scored_.erase(scored_.begin(), scored_.begin() + static_cast<std::ptrdiff_t>(length));
  position_ += length;
  return window;
}

Stream gen_xml(std::uint64_t seed) { return Stream(std::make_unique<XmlSource>(seed)); }
Stream gen_var_assign(std::uint64_t seed) { return Stream(std::make_unique<AssignSource>(seed)); }
Stream gen_arithmetic(std::uint64_t seed) { return Stream(std::make_unique<ArithSource>(seed)); }

Vocab task_vocab(TaskKind task, const CopyTaskSpec& copy) {
  switch (task) {
    case TaskKind::kCopy:
    case TaskKind::kCopyVariable: return copy_vocab(copy);
    case TaskKind::kXml: return XmlSource(0).vocab();
    case TaskKind::kAssign: return AssignSource(0).vocab();
    case TaskKind::kArith: return ArithSource(0).vocab();
    case TaskKind::kBytes: return Vocab::bytes();
  }
  throw ContractViolation("task_vocab: unknown task");
}

std::unique_ptr<ChunkSource> make_text_source(TaskKind task, std::uint64_t seed) {
  switch (task) {
    case TaskKind::kXml: return std::make_unique<XmlSource>(seed);
    case TaskKind::kAssign: return std::make_unique<AssignSource>(seed);
    case TaskKind::kArith: return std::make_unique<ArithSource>(seed);
    default: break;
  }
  throw ContractViolation("make_text_source: " + std::string(task_name(task)) +
                          " is not a generated text task");
}

}  // namespace holocell
