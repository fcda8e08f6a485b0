#include "hdnn/trainer.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

namespace hdnn {

const char* to_string(LossKind v) {
  switch (v) {
    case LossKind::kCe: return "ce";
    case LossKind::kKd: return "kd";
    case LossKind::kHybrid: return "hybrid";
    case LossKind::kSmbrKd: return "smbr_kd";
  }
  return "?";
}
const char* to_string(UpdateScope v) { return v == UpdateScope::kAll ? "all" : "gates_only"; }
const char* to_string(LrSchedule v) { return v == LrSchedule::kConstant ? "constant" : "halve-on-cv-stall"; }
const char* to_string(AdaptMode v) { return v == AdaptMode::kTwoPassCe ? "two_pass_ce" : "one_pass_kd"; }

LossKind parse_loss_kind(std::string_view text) {
  for (auto v : {LossKind::kCe, LossKind::kKd, LossKind::kHybrid, LossKind::kSmbrKd}) {
    if (text == to_string(v)) return v;
  }
  fail(ErrorKind::kInvalidArgument, "unknown loss kind '" + std::string(text) + "'");
}
UpdateScope parse_update_scope(std::string_view text) {
  if (text == "all") return UpdateScope::kAll;
  if (text == "gates_only" || text == "gates") return UpdateScope::kGatesOnly;
  fail(ErrorKind::kInvalidArgument, "unknown update scope '" + std::string(text) + "'");
}
LrSchedule parse_lr_schedule(std::string_view text) {
  if (text == "constant") return LrSchedule::kConstant;
  if (text == "halve-on-cv-stall") return LrSchedule::kHalveOnCvStall;
  fail(ErrorKind::kInvalidArgument, "unknown lr schedule '" + std::string(text) + "'");
}
AdaptMode parse_adapt_mode(std::string_view text) {
  if (text == "two_pass_ce") return AdaptMode::kTwoPassCe;
  if (text == "one_pass_kd") return AdaptMode::kOnePassKd;
  fail(ErrorKind::kInvalidArgument, "unknown adaptation mode '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorKind::kInvalidArgument,
          "learning rate must be finite and non-negative");
  require(q >= 0.0, ErrorKind::kInvalidArgument, "q must be non-negative");
  require(p >= 0.0, ErrorKind::kInvalidArgument, "p must be non-negative");
  require(temperature > 0.0, ErrorKind::kInvalidArgument, "temperature must be positive");
  require(minibatch_size >= 1, ErrorKind::kInvalidArgument, "minibatch size must be >= 1");
}

void write_report_line(std::ostream& os, const EpochReport& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["loss"] = r.train_loss;
  j["cv_frame_error"] = r.cv_frame_error ? nlohmann::ordered_json(*r.cv_frame_error) : nlohmann::ordered_json();
  j["seconds"] = r.seconds;
  j["lr"] = r.learning_rate;
  j["momentum"] = r.momentum;
  if (r.train_expected_accuracy) j["expected_accuracy"] = *r.train_expected_accuracy;
  os << j.dump() << '\n';
}

std::vector<EpochReport> read_reports(std::istream& is) {
  std::vector<EpochReport> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kParse, std::string("report line: ") + e.what());
    }
    EpochReport r;
    r.epoch = j.at("epoch").get<std::size_t>();
    r.train_loss = j.at("loss").get<Real>();
    if (!j.at("cv_frame_error").is_null()) r.cv_frame_error = j.at("cv_frame_error").get<Real>();
    r.seconds = j.value("seconds", 0.0);
    r.learning_rate = j.value("lr", 0.0);
    r.momentum = j.value("momentum", 0.0);
    if (j.contains("expected_accuracy")) r.train_expected_accuracy = j["expected_accuracy"].get<Real>();
    out.push_back(r);
  }
  return out;
}

MomentumState make_momentum_state(const Network& net) { return net.params().zeros_like(); }

void sgd_step(Network& net, const GradientSet& grads, MomentumState& state, Real lr, Real momentum,
              UpdateScope scope) {
  require(scope == UpdateScope::kAll || net.is_highway(), ErrorKind::kInvalidArgument,
          "gates_only updates need a highway network");
  auto params = net.params().tensors();
  const auto g = grads.tensors();
  auto v = state.tensors();
  require(params.size() == g.size() && params.size() == v.size(), ErrorKind::kShape,
          "sgd_step: gradient/momentum tensors do not match network");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i].values.size() == g[i].values.size() && params[i].values.size() == v[i].values.size(),
            ErrorKind::kShape, "sgd_step: shape mismatch for " + params[i].name);
    if (scope == UpdateScope::kGatesOnly && !params[i].is_gate) continue;
    auto& p = params[i].values;
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[i].values[k] = momentum * v[i].values[k] - lr * g[i].values[k];
      p[k] += v[i].values[k];
    }
  }
}

void FrameSet::validate(std::size_t input_dim, std::size_t output_dim) const {
  require(features.cols() == input_dim, ErrorKind::kShape,
          "frame set feature dim " + std::to_string(features.cols()) + " != network input " + std::to_string(input_dim));
  require(labels.empty() || labels.size() == frames(), ErrorKind::kShape, "frame set label count mismatch");
  for (int l : labels) {
    require(l >= 0 && static_cast<std::size_t>(l) < output_dim, ErrorKind::kInvalidArgument, "label out of range");
  }
}

Real momentum_for_epoch(const TrainConfig& cfg, std::size_t epoch) {
  return epoch <= 1 ? 0.0 : cfg.momentum_after_first_epoch;
}

namespace {

using Clock = std::chrono::steady_clock;

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = m.row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels, std::span<const std::size_t> idx) {
  std::vector<int> out;
  if (labels.empty()) return out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels[i]);
  return out;
}

struct Batch {
  Matrix features;
  std::vector<int> labels;
  std::span<const std::size_t> rows;  // indices into the training set
};

// Loss on a batch given the student's T = 1 forward trace.
using BatchLoss = std::function<LossResult(const ForwardTrace&, const Batch&)>;

std::optional<Real> cv_error(const Network& net, const FrameSet& cv) {
  if (cv.frames() == 0 || !cv.labelled()) return std::nullopt;
  return evaluate_frame_error(net, cv);
}

Real full_pass_loss(const Network& net, const FrameSet& data, const TrainConfig& cfg, const BatchLoss& loss) {
  Real total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.frames(); start += cfg.minibatch_size) {
    idx.resize(std::min(cfg.minibatch_size, data.frames() - start));
    std::iota(idx.begin(), idx.end(), start);
    Batch b{gather_rows(data.features, idx), gather_labels(data.labels, idx), idx};
    total += loss(forward(net, b.features, 1.0), b).value * static_cast<Real>(idx.size());
  }
  return total / static_cast<Real>(data.frames());
}

TrainResult run_frame_loop(Network net, const FrameSet& train, const FrameSet& cv, const TrainConfig& cfg,
                           const BatchLoss& loss, std::string_view stream) {
  cfg.validate();
  require(train.frames() > 0, ErrorKind::kInvalidArgument, "training corpus is empty");
  train.validate(net.config().input_dim, net.config().output_dim);
  if (cv.frames() > 0) cv.validate(net.config().input_dim, net.config().output_dim);

  TrainResult result{std::move(net), {}};
  Network& model = result.net;
  MomentumState velocity = make_momentum_state(model);
  Real lr = cfg.learning_rate;

  EpochReport initial;
  initial.train_loss = full_pass_loss(model, train, cfg, loss);
  initial.cv_frame_error = cv_error(model, cv);
  initial.learning_rate = lr;
  result.reports.push_back(initial);
  std::optional<Real> best_cv = initial.cv_frame_error;

  std::vector<std::size_t> order(train.frames());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const Rng shuffle_root(cfg.seed, std::string(stream) + "/shuffle");

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto started = Clock::now();
    const Real momentum = momentum_for_epoch(cfg, epoch);
    Rng rng = shuffle_root.fork("epoch-" + std::to_string(epoch));
    shuffle(order, rng);
    Real loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.minibatch_size, order.size() - start));
      Batch b{gather_rows(train.features, idx), gather_labels(train.labels, idx), idx};
      const ForwardTrace trace = forward(model, b.features, 1.0);
      const LossResult l = loss(trace, b);
      loss_sum += l.value * static_cast<Real>(idx.size());
      const GradientSet g = backward(model, trace, l.dlogits);
      const Real step = cfg.lr_per_sample ? lr * static_cast<Real>(idx.size()) : lr;
      sgd_step(model, g, velocity, step, momentum, cfg.update_scope);
    }
    EpochReport r;
    r.epoch = epoch;
    r.train_loss = loss_sum / static_cast<Real>(train.frames());
    r.cv_frame_error = cv_error(model, cv);
    r.learning_rate = lr;
    r.momentum = momentum;
    r.seconds = std::chrono::duration<Real>(Clock::now() - started).count();
    result.reports.push_back(r);
    if (cfg.lr_schedule == LrSchedule::kHalveOnCvStall && r.cv_frame_error && best_cv) {
      if (*r.cv_frame_error >= *best_cv) lr *= 0.5;
    }
    if (r.cv_frame_error && (!best_cv || *r.cv_frame_error < *best_cv)) best_cv = r.cv_frame_error;
  }
  return result;
}

}  // namespace

Real evaluate_frame_error(const Network& net, const FrameSet& data) {
  require(data.labelled(), ErrorKind::kInvalidArgument, "frame error needs labels");
  data.validate(net.config().input_dim, net.config().output_dim);
  return frame_error(forward(net, data.features, 1.0).posteriors, data.labels);
}

TrainResult train_ce(Network net, const FrameSet& train, const FrameSet& cv, const TrainConfig& cfg) {
  require(cfg.loss_kind == LossKind::kCe, ErrorKind::kInvalidArgument, "train_ce requires loss_kind=ce");
  require(train.labelled(), ErrorKind::kInvalidArgument, "CE training needs labels");
  const BatchLoss loss = [](const ForwardTrace& trace, const Batch& b) { return ce_loss(trace.posteriors, b.labels); };
  return run_frame_loop(std::move(net), train, cv, cfg, loss, "train_ce");
}

SoftTargets teacher_targets(const Network& teacher, const Matrix& features, Real temperature) {
  return SoftTargets{forward(teacher, features, temperature).posteriors, temperature};
}

TrainResult distill(const NetworkConfig& student_cfg, const Network& teacher, const FrameSet& train,
                    const FrameSet& cv, const TrainConfig& cfg) {
  return distill_from(build_network(student_cfg, cfg.seed), teacher, train, cv, cfg);
}

TrainResult distill_from(Network student, const Network& teacher, const FrameSet& train, const FrameSet& cv,
                         const TrainConfig& cfg) {
  require(cfg.loss_kind == LossKind::kKd || cfg.loss_kind == LossKind::kHybrid, ErrorKind::kInvalidArgument,
          "distill requires loss_kind kd or hybrid");
  require(teacher.config().output_dim == student.config().output_dim, ErrorKind::kShape,
          "teacher and student output dims differ");
  require(teacher.config().input_dim == student.config().input_dim, ErrorKind::kShape,
          "teacher and student input dims differ");
  const Real q = cfg.loss_kind == LossKind::kHybrid ? cfg.q : 0.0;
  require(q == 0.0 || train.labelled(), ErrorKind::kInvalidArgument, "hybrid loss with q > 0 needs labels");
  const BatchLoss loss = [&teacher, &cfg, q](const ForwardTrace& trace, const Batch& b) {
    const SoftTargets targets = teacher_targets(teacher, b.features, cfg.temperature);
    return hybrid_loss(trace.logits, targets, b.labels, q, cfg.temperature, {}, cfg.kd_options);
  };
  return run_frame_loop(std::move(student), train, cv, cfg, loss, "distill");
}

TrainResult distill_offline(Network student, const SoftTargets& targets, const FrameSet& train, const FrameSet& cv,
                            const TrainConfig& cfg) {
  require(cfg.loss_kind == LossKind::kKd || cfg.loss_kind == LossKind::kHybrid, ErrorKind::kInvalidArgument,
          "distill requires loss_kind kd or hybrid");
  require(targets.posteriors.rows() == train.frames() && targets.posteriors.cols() == student.config().output_dim,
          ErrorKind::kShape, "soft targets do not cover the training frames");
  require(targets.temperature_used == cfg.temperature, ErrorKind::kInvalidArgument,
          "soft targets were exported at a different temperature");
  const Real q = cfg.loss_kind == LossKind::kHybrid ? cfg.q : 0.0;
  require(q == 0.0 || train.labelled(), ErrorKind::kInvalidArgument, "hybrid loss with q > 0 needs labels");
  const BatchLoss loss = [&targets, &cfg, q](const ForwardTrace& trace, const Batch& b) {
    const SoftTargets batch{gather_rows(targets.posteriors, b.rows), targets.temperature_used};
    return hybrid_loss(trace.logits, batch, b.labels, q, cfg.temperature, {}, cfg.kd_options);
  };
  return run_frame_loop(std::move(student), train, cv, cfg, loss, "distill");
}

TrainResult sequence_train(Network net, const std::vector<SequenceUtterance>& utterances, const Network* teacher,
                           const FrameSet& cv, const TrainConfig& cfg) {
  cfg.validate();
  require(!utterances.empty(), ErrorKind::kInvalidArgument, "sequence training needs lattices");
  require(cfg.sequence_regularizer == SequenceRegularizer::kCe || teacher != nullptr, ErrorKind::kInvalidArgument,
          "KD-smoothed sequence training needs a teacher");
  const std::size_t K = net.config().output_dim;
  for (const auto& u : utterances) {
    require(u.features.rows() == u.lattice.num_frames && u.alignment.size() == u.lattice.num_frames,
            ErrorKind::kInvalidArgument, "utterance features, alignment and lattice disagree on frame count");
    require(u.features.cols() == net.config().input_dim, ErrorKind::kShape, "utterance feature dim mismatch");
    u.lattice.validate();
  }
  if (cv.frames() > 0) cv.validate(net.config().input_dim, K);
  cfg.smbr.validate(K);

  struct Eval {
    LossResult objective;
    Real accuracy_per_frame;
    ForwardTrace trace;
  };
  auto evaluate = [&](const Network& model, const SequenceUtterance& u) {
    ForwardTrace trace = forward(model, u.features, 1.0);
    const SmbrResult smbr = smbr_objective(u.lattice, trace.posteriors, u.alignment, cfg.smbr);
    LossResult reg = teacher != nullptr && cfg.sequence_regularizer == SequenceRegularizer::kKd
                         ? kd_loss(trace.logits, teacher_targets(*teacher, u.features, cfg.temperature),
                                   cfg.temperature, {}, cfg.kd_options)
                         : ce_loss(trace.posteriors, u.alignment);
    const Real acc = smbr.expected_accuracy / static_cast<Real>(u.lattice.num_frames);
    return Eval{smbr_kd_objective(smbr, reg, cfg.p), acc, std::move(trace)};
  };

  TrainResult result{std::move(net), {}};
  Network& model = result.net;
  MomentumState velocity = make_momentum_state(model);

  EpochReport initial;
  {
    Real loss = 0.0, acc = 0.0;
    for (const auto& u : utterances) {
      const Eval e = evaluate(model, u);
      loss += e.objective.value;
      acc += e.accuracy_per_frame;
    }
    initial.train_loss = loss / static_cast<Real>(utterances.size());
    initial.train_expected_accuracy = acc / static_cast<Real>(utterances.size());
  }
  initial.cv_frame_error = cv_error(model, cv);
  initial.learning_rate = cfg.learning_rate;
  result.reports.push_back(initial);

  std::vector<std::size_t> order(utterances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const Rng shuffle_root(cfg.seed, "sequence_train/shuffle");
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto started = Clock::now();
    const Real momentum = momentum_for_epoch(cfg, epoch);
    Rng rng = shuffle_root.fork("epoch-" + std::to_string(epoch));
    shuffle(order, rng);
    Real loss = 0.0, acc = 0.0;
    for (std::size_t i : order) {
      const auto& u = utterances[i];
      const Eval e = evaluate(model, u);
      loss += e.objective.value;
      acc += e.accuracy_per_frame;
      const GradientSet g = backward(model, e.trace, e.objective.dlogits);
      const Real step = cfg.lr_per_sample ? cfg.learning_rate * static_cast<Real>(u.lattice.num_frames)
                                          : cfg.learning_rate;
      sgd_step(model, g, velocity, step, momentum, cfg.update_scope);
    }
    EpochReport r;
    r.epoch = epoch;
    r.train_loss = loss / static_cast<Real>(utterances.size());
    r.train_expected_accuracy = acc / static_cast<Real>(utterances.size());
    r.cv_frame_error = cv_error(model, cv);
    r.learning_rate = cfg.learning_rate;
    r.momentum = momentum;
    r.seconds = std::chrono::duration<Real>(Clock::now() - started).count();
    result.reports.push_back(r);
  }
  return result;
}

std::vector<int> decode_frames(const Network& net, const Matrix& features) {
  const Matrix post = forward(net, features, 1.0).posteriors;
  std::vector<int> out(post.rows());
  for (std::size_t n = 0; n < post.rows(); ++n) out[n] = static_cast<int>(argmax(post.row(n)));
  return out;
}

TrainConfig default_adapt_config() {
  TrainConfig cfg;
  cfg.learning_rate = 2e-4;
  cfg.lr_per_sample = true;
  cfg.max_epochs = 5;
  cfg.momentum_after_first_epoch = 0.0;
  cfg.minibatch_size = 256;
  return cfg;
}

TrainResult adapt(const Network& si_net, const Matrix& features, AdaptMode mode, const Network* teacher,
                  const FrameSet& cv, const TrainConfig& cfg) {
  require(features.rows() > 0, ErrorKind::kInvalidArgument, "adaptation data is empty");
  require(cfg.update_scope == UpdateScope::kAll || si_net.is_highway(), ErrorKind::kInvalidArgument,
          "gates_only adaptation needs a highway network");
  if (mode == AdaptMode::kTwoPassCe) {
    // First pass: label the adaptation data with the SI model itself.
    FrameSet data{features, decode_frames(si_net, features)};
    TrainConfig c = cfg;
    c.loss_kind = LossKind::kCe;
    const BatchLoss loss = [](const ForwardTrace& trace, const Batch& b) {
      return ce_loss(trace.posteriors, b.labels);
    };
    return run_frame_loop(si_net, data, cv, c, loss, "adapt");
  }
  require(teacher != nullptr, ErrorKind::kInvalidArgument, "one_pass_kd adaptation requires a teacher");
  require(teacher->config().output_dim == si_net.config().output_dim &&
              teacher->config().input_dim == si_net.config().input_dim,
          ErrorKind::kShape, "teacher and SI model dims differ");
  FrameSet data{features, {}};
  const BatchLoss loss = [teacher, &cfg](const ForwardTrace& trace, const Batch& b) {
    return kd_loss(trace.logits, teacher_targets(*teacher, b.features, cfg.temperature), cfg.temperature, {},
                   cfg.kd_options);
  };
  return run_frame_loop(si_net, data, cv, cfg, loss, "adapt");
}

}  // namespace hdnn
