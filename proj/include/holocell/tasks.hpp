// SPDX-License-Identifier: Apache-2.0
#pragma once

// Seeded generators for the synthetic memorization tasks.
//
// Episodic tasks (copy) produce self-contained Episodes. Online tasks produce
// an unbounded Stream of symbols, each flagged as scored or not; a window of
// the stream pairs every input symbol with the next symbol as its target and
// masks the loss to scored targets.

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "holocell/random.hpp"

namespace holocell {

/// Symbol table mapping single-byte glyphs to dense ids.
class Vocab {
 public:
  explicit Vocab(std::string glyphs);
  /// All 256 byte values, id = byte.
  static Vocab bytes();

  std::size_t size() const noexcept { return glyphs_.size(); }
  int id(char glyph) const;
  char glyph(int id) const;
  const std::string& glyphs() const noexcept { return glyphs_; }
  bool contains(char glyph) const noexcept;

 private:
  std::string glyphs_;
  std::array<int, 256> index_{};
};

/// A sequence with per-step inputs, targets and loss mask (same length).
struct Episode {
  std::vector<int> inputs;
  std::vector<int> targets;
  std::vector<bool> mask;

  std::size_t size() const noexcept { return inputs.size(); }
  std::size_t masked_count() const;
};

enum class TaskKind { kCopy, kCopyVariable, kXml, kAssign, kArith, kBytes };

/// "copy", "copyvar", "xml", "assign", "arith", "bytes".
std::string_view task_name(TaskKind task);
TaskKind parse_task(std::string_view name);
bool is_episodic(TaskKind task);

struct CopyTaskSpec {
  bool fixed_length = true;
  std::size_t alphabet = 8;  // data symbols
  std::size_t max_length = 10;
  std::size_t delay = 100;  // blanks between the data and the delimiter
};

/// Data symbols 'a'.., then blank '_' and delimiter '|'.
Vocab copy_vocab(const CopyTaskSpec& spec);

/// k data symbols, `delay` blanks, the delimiter, then k blanks during which
/// the first k symbols are the targets (the only masked steps). k is
/// max_length when fixed, otherwise uniform on 1..max_length. Unmasked targets
/// are blank.
Episode gen_copy(Rng& rng, const CopyTaskSpec& spec);
Episode gen_copy(std::uint64_t seed, bool fixed_length);

/// A generated piece of text with a per-character scored flag.
struct Chunk {
  std::string text;
  std::vector<bool> scored;
};

class ChunkSource {
 public:
  virtual ~ChunkSource() = default;
  virtual Chunk next() = 0;
  virtual const Vocab& vocab() const = 0;
};

/// Nested tags "<name>" ... "</name>", names of 1..10 lowercase letters, at
/// most 4 open at once. One chunk per tag. Scored: every '<', and the name and
/// '>' of closing tags.
class XmlSource final : public ChunkSource {
 public:
  static constexpr std::size_t kMaxDepth = 4;
  explicit XmlSource(std::uint64_t seed);
  Chunk next() override;
  const Vocab& vocab() const override { return vocab_; }
  std::size_t depth() const noexcept { return open_.size(); }

 private:
  Rng rng_;
  Vocab vocab_;
  std::vector<std::string> open_;
};

/// Blocks "s(ml,a),s(qc,n),q(ml)a." with 1..4 assignments to distinct
/// variables named by 1..4 lowercase letters, single-letter values, and a query
/// of one assigned variable. One chunk per block; scored: answer and '.'.
class AssignSource final : public ChunkSource {
 public:
  explicit AssignSource(std::uint64_t seed);
  Chunk next() override;
  const Vocab& vocab() const override { return vocab_; }

 private:
  Rng rng_;
  Vocab vocab_;
};

/// Expressions "[-]A+B=" or "[-]A-B=" followed by the decimal result written
/// in reverse and ']'. Operands have 1..8 digits without leading zeros. One
/// chunk per expression; scored: the reversed result and ']'.
class ArithSource final : public ChunkSource {
 public:
  explicit ArithSource(std::uint64_t seed);
  Chunk next() override;
  const Vocab& vocab() const override { return vocab_; }

 private:
  Rng rng_;
  Vocab vocab_;
};

/// Cycles through a byte buffer from `offset`, every byte scored.
class ByteSource final : public ChunkSource {
 public:
  ByteSource(std::shared_ptr<const std::vector<std::uint8_t>> data, std::size_t offset,
             std::size_t chunk = 100);
  Chunk next() override;
  const Vocab& vocab() const override { return vocab_; }

 private:
  std::shared_ptr<const std::vector<std::uint8_t>> data_;
  std::size_t pos_;
  std::size_t chunk_;
  Vocab vocab_;
};

/// Train/test split of a byte file: the trailing `test_fraction` is the test set.
struct ByteCorpus {
  std::shared_ptr<const std::vector<std::uint8_t>> train;
  std::shared_ptr<const std::vector<std::uint8_t>> test;
};
ByteCorpus gen_bytes(const std::filesystem::path& path, double test_fraction);

/// Windows over a chunk source. Consecutive windows partition the symbol
/// sequence: the last target of one window is the first input of the next.
class Stream {
 public:
  explicit Stream(std::unique_ptr<ChunkSource> source);

  /// `length` steps: inputs s_t, targets s_{t+1}, mask scored(s_{t+1}).
  Episode next_window(std::size_t length);
  const Vocab& vocab() const { return source_->vocab(); }
  /// Symbols consumed as inputs so far.
  std::size_t position() const noexcept { return position_; }

 private:
  void fill(std::size_t count);

  std::unique_ptr<ChunkSource> source_;
  std::deque<int> ids_;
  std::deque<bool> scored_;
  std::size_t position_ = 0;
};

Stream gen_xml(std::uint64_t seed);
Stream gen_var_assign(std::uint64_t seed);
Stream gen_arithmetic(std::uint64_t seed);

/// Vocabulary of an online task (bytes -> all 256 values).
Vocab task_vocab(TaskKind task, const CopyTaskSpec& copy = {});

/// Chunk source of an online text task.
std::unique_ptr<ChunkSource> make_text_source(TaskKind task, std::uint64_t seed);

}  // namespace holocell
