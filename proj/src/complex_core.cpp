// SPDX-License-Identifier: Apache-2.0
#include "holocell/complex_core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "holocell/error.hpp"

namespace holocell {

ComplexVec::ComplexVec(std::vector<double> data) : data_(std::move(data)) {
  require(data_.size() >= 2 && data_.size() % 2 == 0, [&] {
    return "ComplexVec: length must be even and >= 2, got " + std::to_string(data_.size());
  });
}

ComplexVec ComplexVec::zeros(std::size_t n_complex) {
  return ComplexVec(std::vector<double>(2 * n_complex, 0.0));
}

ComplexVec ComplexVec::from_parts(std::span<const double> real, std::span<const double> imag) {
  require(real.size() == imag.size(), "ComplexVec::from_parts: part lengths differ");
  std::vector<double> data(real.begin(), real.end());
  data.insert(data.end(), imag.begin(), imag.end());
  return ComplexVec(std::move(data));
}

ComplexVec ComplexVec::from_polar(std::span<const double> modulus,
                                  std::span<const double> phase) {
  require(modulus.size() == phase.size(), "ComplexVec::from_polar: part lengths differ");
  const std::size_t n = modulus.size();
  std::vector<double> data(2 * n);
  for (std::size_t k = 0; k < n; ++k) {
    data[k] = modulus[k] * std::cos(phase[k]);
    data[k + n] = modulus[k] * std::sin(phase[k]);
  }
  return ComplexVec(std::move(data));
}

ComplexVec ComplexVec::filled(std::size_t n_complex, std::complex<double> value) {
  ComplexVec out = zeros(n_complex);
  std::fill(out.real().begin(), out.real().end(), value.real());
  std::fill(out.imag().begin(), out.imag().end(), value.imag());
  return out;
}

ComplexVec& ComplexVec::operator+=(const ComplexVec& other) {
  require(size() == other.size(), "ComplexVec +=: length mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

ComplexVec& ComplexVec::operator-=(const ComplexVec& other) {
  require(size() == other.size(), "ComplexVec -=: length mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

ComplexVec& ComplexVec::operator*=(double scale) {
  for (double& v : data_) v *= scale;
  return *this;
}

ComplexVec operator+(ComplexVec lhs, const ComplexVec& rhs) { return lhs += rhs; }
ComplexVec operator-(ComplexVec lhs, const ComplexVec& rhs) { return lhs -= rhs; }

Permutation::Permutation(std::vector<std::size_t> map) : map_(std::move(map)) {
  std::vector<bool> seen(map_.size(), false);
  for (std::size_t v : map_) {
    require(v < map_.size() && !seen[v], "Permutation: map is not a bijection");
    seen[v] = true;
  }
}

Permutation Permutation::identity(std::size_t n) {
  std::vector<std::size_t> map(n);
  for (std::size_t j = 0; j < n; ++j) map[j] = j;
  return Permutation(std::move(map));
}

Permutation Permutation::random(std::size_t n, Rng& rng) {
  std::vector<std::size_t> map(n);
  for (std::size_t j = 0; j < n; ++j) map[j] = j;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(map[i - 1], map[j]);
  }
  return Permutation(std::move(map));
}

Permutation Permutation::inverse() const {
  std::vector<std::size_t> inv(map_.size());
  for (std::size_t j = 0; j < map_.size(); ++j) inv[map_[j]] = j;
  return Permutation(std::move(inv));
}

bool Permutation::is_identity() const noexcept {
  for (std::size_t j = 0; j < map_.size(); ++j)
    if (map_[j] != j) return false;
  return true;
}

ComplexVec bind(const ComplexVec& r, const ComplexVec& x) {
  require(r.size() == x.size(), [&] {
    return "bind: length mismatch (" + std::to_string(r.size()) + " vs " +
           std::to_string(x.size()) + ")";
  });
  const std::size_t n = r.complex_size();
  ComplexVec out = ComplexVec::zeros(n);
  const auto rr = r.real(), ri = r.imag(), xr = x.real(), xi = x.imag();
  auto outr = out.real(), outi = out.imag();
  for (std::size_t k = 0; k < n; ++k) {
    outr[k] = rr[k] * xr[k] - ri[k] * xi[k];
    outi[k] = rr[k] * xi[k] + ri[k] * xr[k];
  }
  return out;
}

ComplexVec conjugate(const ComplexVec& r) {
  ComplexVec out = r;
  for (double& v : out.imag()) v = -v;
  return out;
}

ComplexVec key_inverse(const ComplexVec& r) {
  const std::size_t n = r.complex_size();
  ComplexVec out = ComplexVec::zeros(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double re = r.real()[k], im = r.imag()[k];
    const double mod2 = re * re + im * im;
    if (mod2 == 0.0)
      throw SingularKeyError("key_inverse: element " + std::to_string(k) + " has zero modulus");
    // 1/z = conj(z) / |z|^2
    out.real()[k] = re / mod2;
    out.imag()[k] = -im / mod2;
  }
  return out;
}

ComplexVec bound(const ComplexVec& h) {
  ComplexVec out = h;
  auto re = out.real(), im = out.imag();
  for (std::size_t k = 0; k < out.complex_size(); ++k) {
    const double d = std::max(1.0, std::sqrt(re[k] * re[k] + im[k] * im[k]));
    re[k] /= d;
    im[k] /= d;
  }
  return out;
}

ComplexVec apply_permutation(const Permutation& p, const ComplexVec& r) {
  require(p.size() == r.complex_size(), [&] {
    return "apply_permutation: permutation covers " + std::to_string(p.size()) +
           " elements, vector has " + std::to_string(r.complex_size());
  });
  const std::size_t n = r.complex_size();
  ComplexVec out = ComplexVec::zeros(n);
  for (std::size_t j = 0; j < n; ++j) {
    out.real()[j] = r.real()[p[j]];
    out.imag()[j] = r.imag()[p[j]];
  }
  return out;
}

std::vector<double> modulus(const ComplexVec& h) {
  std::vector<double> out(h.complex_size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::hypot(h.real()[k], h.imag()[k]);
  return out;
}

ComplexVec random_unit_key(std::size_t n_complex, Rng& rng) {
  ComplexVec out = ComplexVec::zeros(n_complex);
  for (std::size_t k = 0; k < n_complex; ++k) {
    const double phase = 2.0 * std::numbers::pi * rng.uniform();
    out.real()[k] = std::cos(phase);
    out.imag()[k] = std::sin(phase);
  }
  return out;
}

ComplexVec random_normal(std::size_t n_complex, Rng& rng) {
  ComplexVec out = ComplexVec::zeros(n_complex);
  for (double& v : out.data()) v = rng.normal();
  return out;
}

}  // namespace holocell
