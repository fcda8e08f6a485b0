#include "hdnn/losses.hpp"

#include <cmath>
#include <limits>

namespace hdnn {

namespace {

constexpr Real kLogFloor = std::numeric_limits<Real>::min();

Real weight_at(FrameWeights weights, std::size_t n) { return weights.empty() ? 1.0 : weights[n]; }

void check_weights(FrameWeights weights, std::size_t frames) {
  require(weights.empty() || weights.size() == frames, ErrorKind::kShape, "frame weight count mismatch");
}

}  // namespace

LossResult ce_loss(const Matrix& posteriors, std::span<const int> labels, FrameWeights weights) {
  const std::size_t N = posteriors.rows();
  const std::size_t K = posteriors.cols();
  require(labels.size() == N, ErrorKind::kShape, "ce_loss: label count does not match frames");
  require(N > 0, ErrorKind::kInvalidArgument, "ce_loss: empty batch");
  check_weights(weights, N);
  LossResult r{0.0, Matrix(N, K)};
  Real total = 0.0;
  const Real inv_n = 1.0 / static_cast<Real>(N);
  for (std::size_t n = 0; n < N; ++n) {
    const int label = labels[n];
    require(label >= 0 && static_cast<std::size_t>(label) < K, ErrorKind::kInvalidArgument,
            "ce_loss: label " + std::to_string(label) + " out of range");
    const Real w = weight_at(weights, n);
    total += -w * std::log(std::max(posteriors(n, static_cast<std::size_t>(label)), kLogFloor));
    auto y = posteriors.row(n);
    auto d = r.dlogits.row(n);
    for (std::size_t j = 0; j < K; ++j) d[j] = y[j] * w * inv_n;
    d[static_cast<std::size_t>(label)] -= w * inv_n;
  }
  r.value = total * inv_n;
  return r;
}

void validate_soft_targets(const SoftTargets& targets, Real tolerance) {
  require(targets.temperature_used > 0.0, ErrorKind::kInvalidArgument, "soft targets: temperature must be positive");
  for (std::size_t n = 0; n < targets.posteriors.rows(); ++n) {
    Real sum = 0.0;
    for (Real v : targets.posteriors.row(n)) {
      require(v >= 0.0, ErrorKind::kInvalidArgument, "soft targets: negative probability");
      sum += v;
    }
    require(std::abs(sum - 1.0) <= tolerance, ErrorKind::kInvalidArgument,
            "soft targets: row " + std::to_string(n) + " does not sum to 1");
  }
}

LossResult kd_loss(const Matrix& student_logits, const SoftTargets& targets, Real temperature,
                   FrameWeights weights, KdOptions options) {
  require(temperature > 0.0, ErrorKind::kInvalidArgument, "kd_loss: temperature must be positive");
  require(targets.temperature_used == temperature, ErrorKind::kInvalidArgument,
          "kd_loss: soft targets were produced at a different temperature");
  require(student_logits.same_shape(targets.posteriors), ErrorKind::kShape, "kd_loss: logits and targets differ in shape");
  const std::size_t N = student_logits.rows();
  const std::size_t K = student_logits.cols();
  require(N > 0, ErrorKind::kInvalidArgument, "kd_loss: empty batch");
  check_weights(weights, N);

  const Real student_t = options.teacher_only_temperature ? 1.0 : temperature;
  const Matrix log_y = log_softmax_rows(student_logits, student_t);
  LossResult r{0.0, Matrix(N, K)};
  const Real scale = 1.0 / (static_cast<Real>(N) * student_t);
  Real total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const Real w = weight_at(weights, n);
    auto lp = log_y.row(n);
    auto tgt = targets.posteriors.row(n);
    auto d = r.dlogits.row(n);
    Real frame = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      if (tgt[j] > 0.0) frame -= tgt[j] * lp[j];
      d[j] = (std::exp(lp[j]) - tgt[j]) * w * scale;
    }
    total += w * frame;
  }
  r.value = total / static_cast<Real>(N);
  return r;
}

LossResult hybrid_loss(const Matrix& student_logits, const SoftTargets& targets, std::span<const int> labels,
                       Real q, Real temperature, FrameWeights weights, KdOptions options) {
  require(q >= 0.0, ErrorKind::kInvalidArgument, "hybrid_loss: q must be non-negative");
  LossResult kd = kd_loss(student_logits, targets, temperature, weights, options);
  if (q == 0.0) return kd;
  const LossResult ce = ce_loss(softmax_rows(student_logits, 1.0), labels, weights);
  kd.value += q * ce.value;
  for (std::size_t i = 0; i < kd.dlogits.size(); ++i) kd.dlogits.data()[i] += q * ce.dlogits.data()[i];
  return kd;
}

Real mean_entropy(const Matrix& posteriors) {
  if (posteriors.rows() == 0) return 0.0;
  Real total = 0.0;
  for (Real v : posteriors.data()) {
    if (v > 0.0) total -= v * std::log(v);
  }
  return total / static_cast<Real>(posteriors.rows());
}

}  // namespace hdnn
