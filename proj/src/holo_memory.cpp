// SPDX-License-Identifier: Apache-2.0
#include "holocell/holo_memory.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <string>
#include <thread>

#include "holocell/error.hpp"

namespace holocell {

namespace {

std::vector<Permutation> default_permutations(std::size_t width, std::size_t n_copies, Rng& rng) {
  require(n_copies >= 1, "MemoryTrace: n_copies must be >= 1");
  require(width >= 2 && width % 2 == 0, "MemoryTrace: width must be even and >= 2");
  const std::size_t n_complex = width / 2;
  std::vector<Permutation> perms;
  perms.reserve(n_copies);
  perms.push_back(Permutation::identity(n_complex));
  for (std::size_t s = 1; s < n_copies; ++s) perms.push_back(Permutation::random(n_complex, rng));
  return perms;
}

}  // namespace

MemoryTrace::MemoryTrace(std::size_t width, std::size_t n_copies, Rng& rng)
    : MemoryTrace(width, default_permutations(width, n_copies, rng)) {}

MemoryTrace::MemoryTrace(std::size_t width, std::vector<Permutation> perms)
    : width_(width), perms_(std::move(perms)) {
  require(width_ >= 2 && width_ % 2 == 0, "MemoryTrace: width must be even and >= 2");
  require(!perms_.empty(), "MemoryTrace: need at least one copy");
  for (const auto& p : perms_)
    require(p.size() == width_ / 2, "MemoryTrace: permutation size does not match width/2");
  copies_.assign(perms_.size() * width_, 0.0);
}

void MemoryTrace::check_width(const ComplexVec& v, const char* what) const {
  if (v.size() != width_)
    throw ContractViolation(std::string("MemoryTrace: ") + what + " has length " +
                            std::to_string(v.size()) + ", trace width is " +
                            std::to_string(width_));
}

void MemoryTrace::store(const ComplexVec& key, const ComplexVec& value) {
  check_width(key, "key");
  check_width(value, "value");
  const std::size_t n = width_ / 2;
  const auto kr = key.real(), ki = key.imag(), xr = value.real(), xi = value.imag();
  for (std::size_t s = 0; s < perms_.size(); ++s) {
    auto c = row(s);
    const auto& p = perms_[s].map();
    for (std::size_t j = 0; j < n; ++j) {
      const double pr = kr[p[j]], pi = ki[p[j]];
      c[j] += pr * xr[j] - pi * xi[j];
      c[j + n] += pr * xi[j] + pi * xr[j];
    }
  }
  ++n_items_;
}

ComplexVec MemoryTrace::retrieve(const ComplexVec& key) const {
  check_width(key, "key");
  const std::size_t n = width_ / 2;
  ComplexVec out = ComplexVec::zeros(n);
  auto outr = out.real(), outi = out.imag();
  const auto kr = key.real(), ki = key.imag();
  for (std::size_t s = 0; s < perms_.size(); ++s) {
    const auto c = row(s);
    const auto& p = perms_[s].map();
    for (std::size_t j = 0; j < n; ++j) {
      // conj(P_s r)[j] * c_s[j]
      const double pr = kr[p[j]], pi = ki[p[j]];
      outr[j] += pr * c[j] + pi * c[j + n];
      outi[j] += pr * c[j + n] - pi * c[j];
    }
  }
  out *= 1.0 / static_cast<double>(perms_.size());
  return out;
}

ComplexVec MemoryTrace::partial_key_query(const ComplexVec& key,
                                          const std::vector<bool>& known) const {
  check_width(key, "key");
  require(known.size() == width_ / 2, "partial_key_query: mask length must be width/2");
  if (std::none_of(known.begin(), known.end(), [](bool b) { return b; }))
    throw DegenerateQueryError("partial_key_query: no key element is known");
  ComplexVec masked = key;
  for (std::size_t k = 0; k < known.size(); ++k) {
    if (!known[k]) masked.set(k, 0.0);
  }
  return retrieve(masked);
}

ComplexVec MemoryTrace::copy(std::size_t s) const {
  require(s < perms_.size(), "MemoryTrace::copy: index out of range");
  const auto c = row(s);
  return ComplexVec(std::vector<double>(c.begin(), c.end()));
}

MemoryTrace& MemoryTrace::operator+=(const MemoryTrace& other) {
  require(width_ == other.width_ && perms_ == other.perms_,
          "MemoryTrace +=: traces must share width and permutations");
  for (std::size_t i = 0; i < copies_.size(); ++i) copies_[i] += other.copies_[i];
  n_items_ += other.n_items_;
  return *this;
}

CapacityReport capacity_cell(std::size_t n_items, std::size_t n_copies, std::size_t n_h,
                             std::size_t n_trials, std::uint64_t seed, std::uint64_t cell_index) {
  require(n_items >= 1 && n_copies >= 1, "capacity_cell: items and copies must be >= 1");
  require(n_trials >= 1, "capacity_cell: n_trials must be >= 1");
  require(n_h >= 2 && n_h % 2 == 0, "capacity_cell: n_h must be even and >= 2");
  const std::size_t n = n_h / 2;
  double total = 0.0;
  for (std::size_t trial = 0; trial < n_trials; ++trial) {
    Rng rng = Rng::derive(seed, cell_index, trial);
    MemoryTrace trace(n_h, n_copies, rng);
    std::vector<ComplexVec> keys, values;
    keys.reserve(n_items);
    values.reserve(n_items);
    for (std::size_t k = 0; k < n_items; ++k) {
      keys.push_back(random_unit_key(n, rng));
      values.push_back(random_normal(n, rng));
      trace.store(keys.back(), values.back());
    }
    double sq = 0.0;
    for (std::size_t k = 0; k < n_items; ++k) {
      const ComplexVec got = trace.retrieve(keys[k]);
      const auto& a = got.data();
      const auto& b = values[k].data();
      for (std::size_t i = 0; i < n_h; ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
    }
    total += sq / static_cast<double>(n_items * n_h);
  }
  return {n_items, n_copies, total / static_cast<double>(n_trials), n_trials, seed};
}

std::vector<CapacityReport> capacity_sweep(const SweepSpec& spec) {
  require(!spec.items.empty() && !spec.copies.empty(), "capacity_sweep: empty range");
  require(spec.n_trials >= 1, "capacity_sweep: n_trials must be >= 1");
  if (spec.paired)
    require(spec.items.size() == spec.copies.size(),
            "capacity_sweep: paired sweep needs equal-length ranges");

  std::vector<std::pair<std::size_t, std::size_t>> cells;
  if (spec.paired) {
    for (std::size_t i = 0; i < spec.items.size(); ++i)
      cells.emplace_back(spec.items[i], spec.copies[i]);
  } else {
    for (std::size_t items : spec.items)
      for (std::size_t copies : spec.copies) cells.emplace_back(items, copies);
  }

  std::vector<CapacityReport> reports(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++)
      reports[i] = capacity_cell(cells[i].first, cells[i].second, spec.n_h, spec.n_trials,
                                 spec.seed, i);
  };
  const unsigned n_threads =
      std::max(1u, std::min<unsigned>(spec.threads, static_cast<unsigned>(cells.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  return reports;
}

void write_capacity_csv(std::ostream& out, std::span<const CapacityReport> reports) {
  out << "n_items,n_copies,mse,n_trials,seed\n";
  char buf[64];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%.9e", r.mse_per_element);
    out << r.n_items << ',' << r.n_copies << ',' << buf << ',' << r.n_trials << ',' << r.seed
        << '\n';
  }
}

RoundtripResult image_roundtrip(std::span<const std::vector<double>> items, std::size_t n_copies,
                                std::uint64_t seed) {
  require(!items.empty(), "image_roundtrip: need at least one item");
  const std::size_t len = items.front().size();
  for (const auto& item : items) {
    require(item.size() == len, "image_roundtrip: items differ in length");
    require(len >= 2 && len % 2 == 0, [&] {
      return "image_roundtrip: vector length " + std::to_string(len) + " is odd";
    });
  }
  Rng rng(seed);
  MemoryTrace trace(len, n_copies, rng);
  ComplexVec first_key = ComplexVec::zeros(len / 2);
  for (std::size_t k = 0; k < items.size(); ++k) {
    ComplexVec key = random_unit_key(len / 2, rng);
    trace.store(key, ComplexVec(items[k]));
    if (k == 0) first_key = std::move(key);
  }
  RoundtripResult result;
  result.original = items.front();
  result.reconstruction = trace.retrieve(first_key).data();
  double sq = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    const double d = result.reconstruction[i] - result.original[i];
    sq += d * d;
  }
  result.mse = sq / static_cast<double>(len);
  return result;
}

std::vector<double> synthetic_image(std::size_t length, Rng& rng) {
  std::vector<double> out(length);
  for (double& v : out) v = rng.uniform();
  return out;
}

std::vector<std::vector<double>> load_raw_images(const std::filesystem::path& path,
                                                 const ImageShape& shape, std::size_t n_items,
                                                 Rng& rng) {
  const std::size_t len = shape.length();
  require(len > 0, "load_raw_images: empty image shape");
  require(len % 2 == 0, [&] {
    return "load_raw_images: image length " + std::to_string(len) + " is odd";
  });
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read image file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < len)
    throw DataError("image file " + path.string() + " holds " + std::to_string(bytes.size()) +
                    " bytes, need at least " + std::to_string(len));
  std::vector<std::vector<double>> items;
  const std::size_t in_file = bytes.size() / len;
  for (std::size_t k = 0; k < n_items; ++k) {
    if (k < in_file) {
      std::vector<double> item(len);
      for (std::size_t i = 0; i < len; ++i) item[i] = bytes[k * len + i] / 255.0;
      items.push_back(std::move(item));
    } else {
      items.push_back(synthetic_image(len, rng));
    }
  }
  return items;
}

void write_raw_image(const std::filesystem::path& path, std::span<const double> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (double v : values) {
    const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
    out.put(static_cast<char>(static_cast<unsigned char>(q)));
  }
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace holocell
