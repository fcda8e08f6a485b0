#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hdnn/error.hpp"

namespace hdnn {

using Real = double;
using Vector = std::vector<Real>;

// Dense row-major matrix. Storage is double; files hold 32- or 64-bit reals.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, Real fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<Real> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  Real operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<Real> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const Real> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::vector<Real>& data() noexcept { return data_; }
  const std::vector<Real>& data() const noexcept { return data_; }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  void fill(Real v);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

// out = a * b^T + bias (bias broadcast over rows, may be empty). Each output
// element is one dot product summed in ascending index order.
Matrix matmul_transposed(const Matrix& a, const Matrix& b, std::span<const Real> bias = {});
// out = a * b
Matrix matmul(const Matrix& a, const Matrix& b);
// out += a^T * b
void accumulate_transposed_product(const Matrix& a, const Matrix& b, Matrix& out);
// Column sums added into out.
void accumulate_column_sums(const Matrix& a, std::span<Real> out);

bool all_finite(std::span<const Real> values) noexcept;

Real sigmoid(Real x) noexcept;

// y_j = exp(z_j / T) / sum_i exp(z_i / T).
Vector softmax_with_temperature(std::span<const Real> logits, Real temperature);
// Row-wise softmax of a logit matrix.
Matrix softmax_rows(const Matrix& logits, Real temperature);
// Row-wise log-softmax, log y_j = z_j/T - lse(z/T).
Matrix log_softmax_rows(const Matrix& logits, Real temperature);

Real log_sum_exp(std::span<const Real> values);
// log(exp(a) + exp(b)); handles -inf on either side.
Real log_add(Real a, Real b) noexcept;

std::size_t argmax(std::span<const Real> values);

// SplitMix64 stream keyed by (seed, consumer name). The consumer name is
// hashed with FNV-1a and mixed into the seed so every named consumer gets an
// independent, platform-stable sequence.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view consumer);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept;
  // Uniform in [0, 1) with 53 random bits.
  Real uniform() noexcept;
  Real uniform(Real lo, Real hi) noexcept;
  // Uniform integer in [0, n), rejection sampled.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller (no cached spare, so streams stay simple).
  Real normal() noexcept;

  // Derived stream: same seed, name "<parent>/<child>".
  Rng fork(std::string_view child) const;

 private:
  std::uint64_t seed_;
  std::string name_;
  std::uint64_t state_;
};

std::uint64_t fnv1a64(std::string_view text) noexcept;

Matrix uniform_init(std::size_t rows, std::size_t cols, Real lo, Real hi, Rng& rng);

template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace hdnn
