#pragma once

#include <vector>

#include "hdnn/numerics.hpp"

namespace hdnn {

using HardLabels = std::vector<int>;

struct SoftTargets {
  Matrix posteriors;  // N x output_dim, rows on the simplex
  Real temperature_used = 1.0;
};

// value is a mean over frames; dlogits is d(value)/d(logits).
struct LossResult {
  Real value = 0.0;
  Matrix dlogits;
};

// Optional per-frame weights; empty means every frame weighs 1.
using FrameWeights = std::span<const Real>;

// -(1/N) sum_t w_t log y_{label_t, t}. Gradient is the fused softmax-CE form
// (y - onehot) w_t / N and assumes posteriors came from a T = 1 softmax.
LossResult ce_loss(const Matrix& posteriors, std::span<const int> labels, FrameWeights weights = {});

struct KdOptions {
  // Smooth only the teacher; the student softmax stays at T = 1.
  bool teacher_only_temperature = false;
};

// -(1/N) sum_t sum_j yt_jt log y_jt with y = softmax(z / T); gradient
// (y - yt) / (N T). No T^2 rescaling.
LossResult kd_loss(const Matrix& student_logits, const SoftTargets& targets, Real temperature,
                   FrameWeights weights = {}, KdOptions options = {});

// kd + q * ce, the CE term evaluated at T = 1 on the same logits.
LossResult hybrid_loss(const Matrix& student_logits, const SoftTargets& targets, std::span<const int> labels,
                       Real q, Real temperature, FrameWeights weights = {}, KdOptions options = {});

// Mean per-frame entropy of a posterior matrix.
Real mean_entropy(const Matrix& posteriors);

void validate_soft_targets(const SoftTargets& targets, Real tolerance = 1e-5);

}  // namespace hdnn
