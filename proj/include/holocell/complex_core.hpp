// SPDX-License-Identifier: Apache-2.0
#pragma once

// Complex vectors in split layout: a real vector h of even length N_h holds
// N_h/2 complex numbers, real parts in h[0, N_h/2) and imaginary parts in
// h[N_h/2, N_h). Binding is element-wise complex multiplication.

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "holocell/random.hpp"

namespace holocell {

class ComplexVec {
 public:
  /// Takes ownership of a stacked [real; imag] buffer. Length must be even and >= 2.
  explicit ComplexVec(std::vector<double> data);

  static ComplexVec zeros(std::size_t n_complex);
  static ComplexVec from_parts(std::span<const double> real, std::span<const double> imag);
  static ComplexVec from_polar(std::span<const double> modulus, std::span<const double> phase);
  /// Every element is `value`.
  static ComplexVec filled(std::size_t n_complex, std::complex<double> value);

  /// Number of reals, N_h.
  std::size_t size() const noexcept { return data_.size(); }
  /// Number of complex elements, N_h/2.
  std::size_t complex_size() const noexcept { return data_.size() / 2; }

  std::span<const double> real() const noexcept { return {data_.data(), complex_size()}; }
  std::span<const double> imag() const noexcept {
    return {data_.data() + complex_size(), complex_size()};
  }
  std::span<double> real() noexcept { return {data_.data(), complex_size()}; }
  std::span<double> imag() noexcept { return {data_.data() + complex_size(), complex_size()}; }

  std::complex<double> at(std::size_t k) const {
    return {data_[k], data_[k + complex_size()]};
  }
  void set(std::size_t k, std::complex<double> z) {
    data_[k] = z.real();
    data_[k + complex_size()] = z.imag();
  }

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  ComplexVec& operator+=(const ComplexVec& other);
  ComplexVec& operator-=(const ComplexVec& other);
  ComplexVec& operator*=(double scale);

  friend bool operator==(const ComplexVec&, const ComplexVec&) = default;

 private:
  std::vector<double> data_;
};

ComplexVec operator+(ComplexVec lhs, const ComplexVec& rhs);
ComplexVec operator-(ComplexVec lhs, const ComplexVec& rhs);

/// Bijection on {0, ..., n-1}. Applied to a ComplexVec as out[j] = in[map[j]],
/// identically on the real and imaginary halves.
class Permutation {
 public:
  explicit Permutation(std::vector<std::size_t> map);

  static Permutation identity(std::size_t n);
  /// Fisher-Yates shuffle driven by `rng`.
  static Permutation random(std::size_t n, Rng& rng);

  Permutation inverse() const;

  std::size_t size() const noexcept { return map_.size(); }
  std::size_t operator[](std::size_t j) const noexcept { return map_[j]; }
  const std::vector<std::size_t>& map() const noexcept { return map_; }
  bool is_identity() const noexcept;

  friend bool operator==(const Permutation&, const Permutation&) = default;

 private:
  std::vector<std::size_t> map_;
};

ComplexVec bind(const ComplexVec& r, const ComplexVec& x);
ComplexVec conjugate(const ComplexVec& r);
/// Per element: modulus inverted, phase negated. Throws SingularKeyError on a zero element.
ComplexVec key_inverse(const ComplexVec& r);
/// Divides each complex element by max(1, |z|).
ComplexVec bound(const ComplexVec& h);
ComplexVec apply_permutation(const Permutation& p, const ComplexVec& r);
std::vector<double> modulus(const ComplexVec& h);

/// Unit-modulus key with phases uniform on [0, 2*pi).
ComplexVec random_unit_key(std::size_t n_complex, Rng& rng);
/// I.i.d. standard normal real and imaginary parts.
ComplexVec random_normal(std::size_t n_complex, Rng& rng);

}  // namespace holocell
