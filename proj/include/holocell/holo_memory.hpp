// SPDX-License-Identifier: Apache-2.0
#pragma once

// Redundant holographic associative memory. Every stored pair is written into
// N_copies traces, each under its own fixed permutation of the key; retrieval
// averages the conjugate-key readouts of all copies so that the cross-talk
// noise of different copies partially cancels.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "holocell/complex_core.hpp"
#include "holocell/random.hpp"

namespace holocell {

class MemoryTrace {
 public:
  /// Copy 0 uses the identity permutation, copies 1.. are drawn from `rng`.
  MemoryTrace(std::size_t width, std::size_t n_copies, Rng& rng);
  /// Explicit permutations, one per copy, each over width/2 elements.
  MemoryTrace(std::size_t width, std::vector<Permutation> perms);

  void store(const ComplexVec& key, const ComplexVec& value);
  ComplexVec retrieve(const ComplexVec& key) const;
  /// Retrieval with the key elements outside `known` zeroed. `known` has one
  /// flag per complex element; at least one must be set.
  ComplexVec partial_key_query(const ComplexVec& key, const std::vector<bool>& known) const;

  std::size_t width() const noexcept { return width_; }
  std::size_t n_copies() const noexcept { return perms_.size(); }
  std::size_t n_items_stored() const noexcept { return n_items_; }
  const std::vector<Permutation>& permutations() const noexcept { return perms_; }
  /// Trace row of copy s.
  ComplexVec copy(std::size_t s) const;

  /// Element-wise sum of two traces built with the same permutations.
  MemoryTrace& operator+=(const MemoryTrace& other);

 private:
  void check_width(const ComplexVec& v, const char* what) const;
  std::span<double> row(std::size_t s) noexcept { return {copies_.data() + s * width_, width_}; }
  std::span<const double> row(std::size_t s) const noexcept {
    return {copies_.data() + s * width_, width_};
  }

  std::size_t width_;
  std::vector<Permutation> perms_;
  std::vector<double> copies_;  // n_copies x width, row-major
  std::size_t n_items_ = 0;
};

struct CapacityReport {
  std::size_t n_items = 0;
  std::size_t n_copies = 0;
  double mse_per_element = 0.0;
  std::size_t n_trials = 0;
  std::uint64_t seed = 0;
};

struct SweepSpec {
  std::vector<std::size_t> items;
  std::vector<std::size_t> copies;
  /// Pair items[i] with copies[i] instead of taking the cross product.
  bool paired = false;
  std::size_t n_h = 0;
  std::size_t n_trials = 1;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// Store random unit-key / standard-normal-value pairs, retrieve every item and
/// report the mean squared error per real element. Cells are ordered
/// items-major; each (cell, trial) draws from its own stream so the result does
/// not depend on `threads`.
std::vector<CapacityReport> capacity_sweep(const SweepSpec& spec);

/// One sweep cell, averaged over spec.n_trials.
CapacityReport capacity_cell(std::size_t n_items, std::size_t n_copies, std::size_t n_h,
                             std::size_t n_trials, std::uint64_t seed, std::uint64_t cell_index);

void write_capacity_csv(std::ostream& out, std::span<const CapacityReport> reports);

struct ImageShape {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::size_t length() const noexcept { return width * height * channels; }
};

struct RoundtripResult {
  std::vector<double> original;        // item 0
  std::vector<double> reconstruction;  // item 0 as retrieved
  double mse = 0.0;                    // per real element
};

/// Stores each item (an even-length real vector, first half real parts) under
/// a random unit-modulus key and retrieves item 0.
RoundtripResult image_roundtrip(std::span<const std::vector<double>> items, std::size_t n_copies,
                                std::uint64_t seed);

/// Reads consecutive raw row-major images from `path`, bytes mapped to [0,1].
/// If the file holds fewer than `n_items` images the rest are synthetic.
std::vector<std::vector<double>> load_raw_images(const std::filesystem::path& path,
                                                 const ImageShape& shape, std::size_t n_items,
                                                 Rng& rng);

/// Uniform [0,1] values, a stand-in for a natural image.
std::vector<double> synthetic_image(std::size_t length, Rng& rng);

/// Values clamped to [0,1] and quantized to bytes.
void write_raw_image(const std::filesystem::path& path, std::span<const double> values);

}  // namespace holocell
