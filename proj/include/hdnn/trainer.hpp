#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "hdnn/losses.hpp"
#include "hdnn/network.hpp"
#include "hdnn/sequence.hpp"

namespace hdnn {

enum class LossKind { kCe, kKd, kHybrid, kSmbrKd };
enum class UpdateScope { kAll, kGatesOnly };
enum class LrSchedule { kConstant, kHalveOnCvStall };
enum class SequenceRegularizer { kKd, kCe };
enum class AdaptMode { kTwoPassCe, kOnePassKd };

const char* to_string(LossKind v);
const char* to_string(UpdateScope v);
const char* to_string(LrSchedule v);
const char* to_string(AdaptMode v);
LossKind parse_loss_kind(std::string_view text);
UpdateScope parse_update_scope(std::string_view text);
LrSchedule parse_lr_schedule(std::string_view text);
AdaptMode parse_adapt_mode(std::string_view text);

struct TrainConfig {
  Real learning_rate = 0.1;
  Real momentum_after_first_epoch = 0.9;
  std::size_t minibatch_size = 256;
  std::size_t max_epochs = 10;
  LrSchedule lr_schedule = LrSchedule::kConstant;
  std::uint64_t seed = 1;
  LossKind loss_kind = LossKind::kCe;
  Real q = 0.0;
  Real temperature = 1.0;
  Real p = 0.2;
  UpdateScope update_scope = UpdateScope::kAll;
  // Learning rate applies per frame: the step is lr times the summed (not
  // mean) loss gradient over the minibatch or utterance.
  bool lr_per_sample = false;
  KdOptions kd_options;
  SmbrConfig smbr;
  SequenceRegularizer sequence_regularizer = SequenceRegularizer::kKd;

  void validate() const;
};

struct EpochReport {
  std::size_t epoch = 0;  // 0 is the evaluation before any update
  Real train_loss = 0.0;
  std::optional<Real> cv_frame_error;
  Real seconds = 0.0;
  Real learning_rate = 0.0;
  Real momentum = 0.0;
  std::optional<Real> train_expected_accuracy;  // sequence training only, per frame
};

// One JSON object per line: epoch, loss, cv_frame_error, seconds, plus lr,
// momentum and (sequence training) expected_accuracy.
void write_report_line(std::ostream& os, const EpochReport& report);
std::vector<EpochReport> read_reports(std::istream& is);

using MomentumState = ParameterSet;

MomentumState make_momentum_state(const Network& net);

// velocity = momentum * velocity - lr * grad; param += velocity.
void sgd_step(Network& net, const GradientSet& grads, MomentumState& state, Real lr, Real momentum,
              UpdateScope scope);

// Spliced features with optional hard labels (empty = unlabelled).
struct FrameSet {
  Matrix features;
  std::vector<int> labels;

  std::size_t frames() const noexcept { return features.rows(); }
  bool labelled() const noexcept { return !labels.empty(); }
  void validate(std::size_t input_dim, std::size_t output_dim) const;
};

struct SequenceUtterance {
  Matrix features;
  ReferenceAlignment alignment;
  Lattice lattice;
};

struct TrainResult {
  Network net;
  std::vector<EpochReport> reports;
};

// Momentum is forced to 0 for epoch 1 and momentum_after_first_epoch after.
Real momentum_for_epoch(const TrainConfig& cfg, std::size_t epoch);

Real evaluate_frame_error(const Network& net, const FrameSet& data);

TrainResult train_ce(Network net, const FrameSet& train, const FrameSet& cv, const TrainConfig& cfg);

// Student built from student_cfg with cfg.seed. Teacher posteriors use the
// same temperature as the student (cfg.temperature).
TrainResult distill(const NetworkConfig& student_cfg, const Network& teacher, const FrameSet& train,
                    const FrameSet& cv, const TrainConfig& cfg);
// Continue distillation from an existing student.
TrainResult distill_from(Network student, const Network& teacher, const FrameSet& train, const FrameSet& cv,
                         const TrainConfig& cfg);

// Distillation from precomputed (exported) teacher posteriors, one row per
// training frame.
TrainResult distill_offline(Network student, const SoftTargets& targets, const FrameSet& train, const FrameSet& cv,
                            const TrainConfig& cfg);

// sMBR fine-tuning with a KD (teacher given) or CE (teacher null) smoothing
// term weighted by cfg.p.
TrainResult sequence_train(Network net, const std::vector<SequenceUtterance>& utterances, const Network* teacher,
                           const FrameSet& cv, const TrainConfig& cfg);

// Unsupervised adaptation. Two-pass CE labels the data with the SI model's
// own per-frame argmax first; one-pass KD uses teacher posteriors directly.
// `cv` may be empty, in which case reports carry no frame error.
TrainResult adapt(const Network& si_net, const Matrix& features, AdaptMode mode, const Network* teacher,
                  const FrameSet& cv, const TrainConfig& cfg);

// Default adaptation recipe: 5 iterations, lr 2e-4 per frame, no momentum.
TrainConfig default_adapt_config();

std::vector<int> decode_frames(const Network& net, const Matrix& features);

// Teacher posteriors at temperature T.
SoftTargets teacher_targets(const Network& teacher, const Matrix& features, Real temperature);

}  // namespace hdnn
