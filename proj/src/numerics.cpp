#include "hdnn/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace hdnn {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kInvalidArchitecture: return "invalid architecture";
    case ErrorKind::kDegenerateLattice: return "degenerate lattice";
    case ErrorKind::kChecksum: return "checksum error";
    case ErrorKind::kVersion: return "version error";
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kParse: return "parse error";
  }
  return "error";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<Real> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows_ * cols_, ErrorKind::kShape, "matrix data length does not match rows x cols");
}

void Matrix::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

Matrix matmul_transposed(const Matrix& a, const Matrix& b, std::span<const Real> bias) {
  require(a.cols() == b.cols(), ErrorKind::kShape, "matmul_transposed: inner dimensions differ");
  require(bias.empty() || bias.size() == b.rows(), ErrorKind::kShape, "matmul_transposed: bias length");
  Matrix out(a.rows(), b.rows());
  const std::size_t inner = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const Real* ar = a.data().data() + i * inner;
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const Real* br = b.data().data() + j * inner;
      Real acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += ar[k] * br[k];
      out(i, j) = bias.empty() ? acc : acc + bias[j];
    }
  }
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), ErrorKind::kShape, "matmul: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const Real aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

void accumulate_transposed_product(const Matrix& a, const Matrix& b, Matrix& out) {
  require(a.rows() == b.rows() && out.rows() == a.cols() && out.cols() == b.cols(), ErrorKind::kShape,
          "accumulate_transposed_product: shape mismatch");
  for (std::size_t n = 0; n < a.rows(); ++n) {
    auto arow = a.row(n);
    auto brow = b.row(n);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const Real ai = arow[i];
      if (ai == 0.0) continue;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += ai * brow[j];
    }
  }
}

void accumulate_column_sums(const Matrix& a, std::span<Real> out) {
  require(out.size() == a.cols(), ErrorKind::kShape, "accumulate_column_sums: length mismatch");
  for (std::size_t n = 0; n < a.rows(); ++n) {
    auto r = a.row(n);
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
  }
}

bool all_finite(std::span<const Real> values) noexcept {
  return std::all_of(values.begin(), values.end(), [](Real v) { return std::isfinite(v); });
}

Real sigmoid(Real x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const Real e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

void check_temperature(Real temperature) {
  require(temperature > 0.0 && std::isfinite(temperature), ErrorKind::kInvalidArgument,
          "temperature must be positive");
}

void softmax_into(std::span<const Real> logits, Real temperature, std::span<Real> out) {
  Real max_scaled = -std::numeric_limits<Real>::infinity();
  for (Real z : logits) max_scaled = std::max(max_scaled, z / temperature);
  Real total = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = std::exp(logits[j] / temperature - max_scaled);
    total += out[j];
  }
  for (Real& v : out) v /= total;
}

}  // namespace

Vector softmax_with_temperature(std::span<const Real> logits, Real temperature) {
  check_temperature(temperature);
  require(!logits.empty(), ErrorKind::kInvalidArgument, "softmax of empty vector");
  Vector out(logits.size());
  softmax_into(logits, temperature, out);
  return out;
}

Matrix softmax_rows(const Matrix& logits, Real temperature) {
  check_temperature(temperature);
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t n = 0; n < logits.rows(); ++n) softmax_into(logits.row(n), temperature, out.row(n));
  return out;
}

Matrix log_softmax_rows(const Matrix& logits, Real temperature) {
  check_temperature(temperature);
  Matrix out(logits.rows(), logits.cols());
  Vector scaled(logits.cols());
  for (std::size_t n = 0; n < logits.rows(); ++n) {
    auto z = logits.row(n);
    for (std::size_t j = 0; j < z.size(); ++j) scaled[j] = z[j] / temperature;
    const Real lse = log_sum_exp(scaled);
    auto o = out.row(n);
    for (std::size_t j = 0; j < z.size(); ++j) o[j] = scaled[j] - lse;
  }
  return out;
}

Real log_sum_exp(std::span<const Real> values) {
  require(!values.empty(), ErrorKind::kInvalidArgument, "log_sum_exp of empty sequence");
  if (values.size() == 1) return values[0];
  const Real m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) return m;
  Real total = 0.0;
  for (Real v : values) total += std::exp(v - m);
  return m + std::log(total);
}

Real log_add(Real a, Real b) noexcept {
  if (a < b) std::swap(a, b);
  if (b == -std::numeric_limits<Real>::infinity()) return a;
  return a + std::log1p(std::exp(b - a));
}

std::size_t argmax(std::span<const Real> values) {
  require(!values.empty(), ErrorKind::kInvalidArgument, "argmax of empty sequence");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

std::uint64_t splitmix_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::string_view consumer)
    : seed_(seed), name_(consumer), state_(splitmix_mix(seed ^ splitmix_mix(fnv1a64(consumer)))) {}

std::uint64_t Rng::next_u64() noexcept {
  state_ += 0x9e3779b97f4a7c15ULL;
  return splitmix_mix(state_);
}

Real Rng::uniform() noexcept { return static_cast<Real>(next_u64() >> 11) * 0x1.0p-53; }

Real Rng::uniform(Real lo, Real hi) noexcept {
  const Real v = lo + (hi - lo) * uniform();
  return v < hi ? v : lo;
}

std::uint64_t Rng::below(std::uint64_t n) {
  require(n > 0, ErrorKind::kInvalidArgument, "Rng::below(0)");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

Real Rng::normal() noexcept {
  Real u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const Real u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::fork(std::string_view child) const {
  std::string name = name_;
  name += '/';
  name += child;
  return Rng(seed_, name);
}

Matrix uniform_init(std::size_t rows, std::size_t cols, Real lo, Real hi, Rng& rng) {
  require(lo < hi, ErrorKind::kInvalidArgument, "uniform_init requires lo < hi");
  Matrix out(rows, cols);
  for (Real& v : out.data()) v = rng.uniform(lo, hi);
  return out;
}

}  // namespace hdnn
