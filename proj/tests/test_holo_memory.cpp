// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "holocell/error.hpp"
#include "holocell/holo_memory.hpp"

using namespace holocell;

namespace {

double mse(const ComplexVec& a, const ComplexVec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double max_abs_diff(const ComplexVec& a, const ComplexVec& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// Direct per-element loop over the stored log; no shared code with MemoryTrace.
std::vector<std::complex<double>> oracle_row(const std::vector<ComplexVec>& keys,
                                             const std::vector<ComplexVec>& values,
                                             const Permutation& p) {
  const std::size_t n = keys.front().complex_size();
  std::vector<std::complex<double>> row(n, 0.0);
  for (std::size_t k = 0; k < keys.size(); ++k)
    for (std::size_t j = 0; j < n; ++j) row[j] += keys[k].at(p[j]) * values[k].at(j);
  return row;
}

}  // namespace

TEST_SUITE("holo_memory") {
  TEST_CASE("single item round trip is exact for any number of copies") {
    for (std::size_t copies = 1; copies <= 20; ++copies) {
      Rng rng(copies);
      MemoryTrace trace(64, copies, rng);
      const ComplexVec key = random_unit_key(32, rng), value = random_normal(32, rng);
      trace.store(key, value);
      CHECK(mse(trace.retrieve(key), value) < 1e-20);
      CHECK(trace.n_items_stored() == 1);
    }
  }

  TEST_CASE("empty trace retrieves zero; storing zero changes nothing") {
    Rng rng(2);
    MemoryTrace trace(16, 3, rng);
    const ComplexVec key = random_unit_key(8, rng);
    CHECK(trace.retrieve(key) == ComplexVec::zeros(8));
    trace.store(key, ComplexVec::zeros(8));
    for (std::size_t s = 0; s < 3; ++s) CHECK(trace.copy(s) == ComplexVec::zeros(8));
  }

  TEST_CASE("copy 0 is the identity permutation") {
    Rng rng(4);
    MemoryTrace trace(40, 5, rng);
    CHECK(trace.permutations()[0].is_identity());
    for (std::size_t s = 1; s < 5; ++s) CHECK_FALSE(trace.permutations()[s].is_identity());
  }

  TEST_CASE("two pairs, one copy: noise term matches the direct expansion") {
    Rng rng(5);
    MemoryTrace trace(24, 1, rng);
    const ComplexVec r1 = random_unit_key(12, rng), r2 = random_unit_key(12, rng);
    const ComplexVec x1 = random_normal(12, rng), x2 = random_normal(12, rng);
    trace.store(r1, x1);
    trace.store(r2, x2);
    ComplexVec expect = x1 + bind(conjugate(r1), bind(r2, x2));
    CHECK(max_abs_diff(trace.retrieve(r1), expect) < 1e-14);
  }

  TEST_CASE("trace rows equal the replayed log") {
    Rng rng(6);
    MemoryTrace trace(30, 4, rng);
    std::vector<ComplexVec> keys, values;
    for (int k = 0; k < 7; ++k) {
      keys.push_back(random_normal(15, rng));
      values.push_back(random_normal(15, rng));
      trace.store(keys.back(), values.back());
    }
    for (std::size_t s = 0; s < 4; ++s) {
      const auto row = oracle_row(keys, values, trace.permutations()[s]);
      const ComplexVec c = trace.copy(s);
      for (std::size_t j = 0; j < 15; ++j) CHECK(std::abs(c.at(j) - row[j]) < 1e-12);
    }
  }

  TEST_CASE("retrieve averages conjugate readouts over copies") {
    Rng rng(7);
    MemoryTrace trace(20, 3, rng);
    for (int k = 0; k < 4; ++k) trace.store(random_unit_key(10, rng), random_normal(10, rng));
    const ComplexVec q = random_unit_key(10, rng);
    ComplexVec expect = ComplexVec::zeros(10);
    for (std::size_t s = 0; s < 3; ++s)
      expect += bind(conjugate(apply_permutation(trace.permutations()[s], q)), trace.copy(s));
    expect *= 1.0 / 3.0;
    CHECK(max_abs_diff(trace.retrieve(q), expect) < 1e-14);
  }

  TEST_CASE("dimension mismatches are rejected") {
    Rng rng(8);
    MemoryTrace trace(20, 2, rng);
    CHECK_THROWS_AS(trace.store(ComplexVec::zeros(5), ComplexVec::zeros(10)), ContractViolation);
    CHECK_THROWS_AS(trace.retrieve(ComplexVec::zeros(4)), ContractViolation);
    CHECK_THROWS_AS(MemoryTrace(20, 0, rng), ContractViolation);
    CHECK_THROWS_AS(MemoryTrace(7, 1, rng), ContractViolation);
  }

  TEST_CASE("partial key query") {
    Rng rng(9);
    MemoryTrace trace(32, 3, rng);
    for (int k = 0; k < 3; ++k) trace.store(random_unit_key(16, rng), random_normal(16, rng));
    const ComplexVec key = random_unit_key(16, rng);
    CHECK(trace.partial_key_query(key, std::vector<bool>(16, true)) == trace.retrieve(key));
    CHECK_THROWS_AS(trace.partial_key_query(key, std::vector<bool>(16, false)),
                    DegenerateQueryError);
    CHECK_THROWS_AS(trace.partial_key_query(key, std::vector<bool>(15, true)), ContractViolation);
  }

  TEST_CASE("half key with complementary permutations covers every dimension") {
    const std::size_t n = 10;
    std::vector<std::size_t> shift(n);
    for (std::size_t j = 0; j < n; ++j) shift[j] = (j + n / 2) % n;
    MemoryTrace trace(2 * n, {Permutation::identity(n), Permutation(shift)});
    Rng rng(10);
    const ComplexVec key = random_unit_key(n, rng), value = random_normal(n, rng);
    trace.store(key, value);
    std::vector<bool> known(n, false);
    for (std::size_t j = 0; j < n / 2; ++j) known[j] = true;
    const ComplexVec out = trace.partial_key_query(key, known);
    for (std::size_t j = 0; j < n; ++j) {
      CHECK(std::abs(out.at(j)) > 0.0);
      // Exactly one copy sees the known key element for each dimension.
      CHECK(std::abs(out.at(j) - value.at(j) * 0.5) < 1e-14);
    }
  }

  TEST_CASE("partial-key error decreases with the known fraction") {
    const std::size_t n = 64;
    std::vector<double> err;
    for (double f : {0.25, 0.5, 0.75, 1.0}) {
      double total = 0.0;
      for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        MemoryTrace trace(2 * n, 8, rng);
        std::vector<ComplexVec> keys;
        ComplexVec target = ComplexVec::zeros(n);
        for (int k = 0; k < 2; ++k) {
          keys.push_back(random_unit_key(n, rng));
          const ComplexVec v = random_normal(n, rng);
          if (k == 0) target = v;
          trace.store(keys.back(), v);
        }
        std::vector<bool> known(n, false);
        const auto perm = Permutation::random(n, rng);
        for (std::size_t j = 0; j < static_cast<std::size_t>(f * n); ++j) known[perm[j]] = true;
        total += mse(trace.partial_key_query(keys[0], known), target);
      }
      err.push_back(total / 100.0);
    }
    for (std::size_t i = 1; i < err.size(); ++i) CHECK(err[i] < err[i - 1]);
  }

  TEST_CASE("property: retrieval is linear in the trace") {
    Rng rng(12);
    std::vector<Permutation> perms;
    for (int s = 0; s < 3; ++s) perms.push_back(Permutation::random(8, rng));
    MemoryTrace a(16, perms), b(16, perms), sum(16, perms);
    for (int k = 0; k < 4; ++k) {
      const ComplexVec r = random_unit_key(8, rng), x = random_normal(8, rng);
      (k % 2 ? a : b).store(r, x);
      sum.store(r, x);
    }
    const ComplexVec q = random_unit_key(8, rng);
    MemoryTrace ab = a;
    ab += b;
    CHECK(max_abs_diff(ab.retrieve(q), a.retrieve(q) + b.retrieve(q)) < 1e-13);
    CHECK(max_abs_diff(ab.retrieve(q), sum.retrieve(q)) < 1e-13);
    MemoryTrace other(16, 3, rng);
    CHECK_THROWS_AS(a += other, ContractViolation);
  }

  TEST_CASE("property: retrieval noise has zero mean") {
    const std::size_t n = 16;
    const int seeds = 1000;
    std::vector<double> sum(2 * n, 0.0), sumsq(2 * n, 0.0);
    for (int seed = 0; seed < seeds; ++seed) {
      Rng rng(1000 + seed);
      MemoryTrace trace(2 * n, 1, rng);
      std::vector<ComplexVec> keys, values;
      for (int k = 0; k < 10; ++k) {
        keys.push_back(random_unit_key(n, rng));
        values.push_back(random_normal(n, rng));
        trace.store(keys.back(), values.back());
      }
      const ComplexVec noise = trace.retrieve(keys[0]) - values[0];
      for (std::size_t i = 0; i < 2 * n; ++i) {
        sum[i] += noise.data()[i];
        sumsq[i] += noise.data()[i] * noise.data()[i];
      }
    }
    int outside = 0;
    for (std::size_t i = 0; i < 2 * n; ++i) {
      const double mean = sum[i] / seeds;
      const double var = sumsq[i] / seeds - mean * mean;
      if (std::abs(mean) >= 3.0 * std::sqrt(var / seeds)) ++outside;
    }
    // 32 independent z-tests at 3 sigma: more than one exceedance has p < 0.005.
    CHECK(outside <= 1);
  }

  TEST_CASE("single-item mse is near zero; noise grows with items") {
    SweepSpec spec;
    spec.items = {1, 11, 21};
    spec.copies = {1, 5};
    spec.n_h = 400;
    spec.n_trials = 10;
    spec.seed = 3;
    const auto rows = capacity_sweep(spec);
    REQUIRE(rows.size() == 6);
    CHECK(rows[0].n_items == 1);
    CHECK(rows[1].n_copies == 5);
    CHECK(rows[0].mse_per_element < 1e-20);
    CHECK(rows[1].mse_per_element < 1e-20);
    // Expected (N_items - 1) / N_copies for unit keys and N(0,1) values.
    CHECK(rows[2].mse_per_element == doctest::Approx(10.0).epsilon(0.1));
    CHECK(rows[3].mse_per_element == doctest::Approx(2.0).epsilon(0.1));
    CHECK(rows[4].mse_per_element == doctest::Approx(20.0).epsilon(0.1));
  }

  TEST_CASE("capacity sweep is independent of the worker count") {
    SweepSpec spec;
    spec.items = {3, 8};
    spec.copies = {2, 4, 6};
    spec.n_h = 128;
    spec.n_trials = 3;
    spec.seed = 77;
    const auto one = capacity_sweep(spec);
    spec.threads = 4;
    const auto four = capacity_sweep(spec);
    REQUIRE(one.size() == four.size());
    for (std::size_t i = 0; i < one.size(); ++i)
      CHECK(one[i].mse_per_element == four[i].mse_per_element);
  }

  TEST_CASE("paired sweep and csv schema") {
    SweepSpec spec;
    spec.items = {2, 3};
    spec.copies = {2, 3};
    spec.paired = true;
    spec.n_h = 20;
    spec.seed = 5;
    const auto rows = capacity_sweep(spec);
    REQUIRE(rows.size() == 2);
    CHECK(rows[1].n_items == 3);
    CHECK(rows[1].n_copies == 3);
    std::ostringstream out;
    write_capacity_csv(out, rows);
    const std::string text = out.str();
    CHECK(text.rfind("n_items,n_copies,mse,n_trials,seed\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);
    spec.items = {1};
    CHECK_THROWS_AS(capacity_sweep(spec), ContractViolation);
  }

  TEST_CASE("image round trip") {
    Rng rng(13);
    std::vector<std::vector<double>> one{synthetic_image(300, rng)};
    CHECK(image_roundtrip(one, 4, 1).mse < 1e-15);
    std::vector<std::vector<double>> odd{std::vector<double>(7, 0.5)};
    CHECK_THROWS_AS(image_roundtrip(odd, 1, 1), ContractViolation);

    double m1 = 0, m4 = 0, m20 = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng r(seed);
      std::vector<std::vector<double>> items;
      for (int k = 0; k < 20; ++k) items.push_back(synthetic_image(200, r));
      m1 += image_roundtrip(items, 1, seed).mse;
      m4 += image_roundtrip(items, 4, seed).mse;
      m20 += image_roundtrip(items, 20, seed).mse;
    }
    CHECK(m4 < m1);
    CHECK(m20 < m4);
    CHECK(m20 < m1 / 5.0);
  }

  TEST_CASE("raw image files") {
    const auto dir = std::filesystem::temp_directory_path() / "holocell_img_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "img.raw";
    {
      std::ofstream out(path, std::ios::binary);
      const unsigned char bytes[6] = {0, 51, 102, 153, 204, 255};
      out.write(reinterpret_cast<const char*>(bytes), 6);
    }
    Rng rng(1);
    const auto items = load_raw_images(path, {1, 2, 3}, 2, rng);
    REQUIRE(items.size() == 2);
    CHECK(items[0] == std::vector<double>{0.0, 0.2, 0.4, 0.6, 0.8, 1.0});
    CHECK(items[1].size() == 6);
    CHECK_THROWS_AS(load_raw_images(dir / "missing.raw", {1, 2, 3}, 1, rng), DataError);
    CHECK_THROWS_AS(load_raw_images(path, {2, 2, 3}, 1, rng), DataError);

    write_raw_image(dir / "out.raw", std::vector<double>{-1.0, 0.5, 2.0, 1.0});
    std::ifstream in(dir / "out.raw", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    REQUIRE(bytes.size() == 4);
    CHECK(static_cast<unsigned char>(bytes[0]) == 0);
    CHECK(static_cast<unsigned char>(bytes[1]) == 128);
    CHECK(static_cast<unsigned char>(bytes[2]) == 255);
    std::filesystem::remove_all(dir);
  }
}
