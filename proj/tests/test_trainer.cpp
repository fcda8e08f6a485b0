#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "hdnn/corpus.hpp"
#include "hdnn/trainer.hpp"
#include "oracles.hpp"

using namespace hdnn;

namespace {

// Three Gaussian blobs in 4 dims, centres 4 sigma apart on the axes.
FrameSet blobs(std::uint64_t seed, std::string_view name, std::size_t n) {
  Rng rng(seed, name);
  FrameSet fs{Matrix(n, 4), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const int k = static_cast<int>(rng.below(3));
    fs.labels[i] = k;
    for (std::size_t d = 0; d < 4; ++d) fs.features(i, d) = rng.normal() + (static_cast<int>(d) == k ? 4.0 : 0.0);
  }
  return fs;
}

NetworkConfig small_highway() { return {4, 8, 3, 3, Architecture::kHighway}; }

std::vector<Real> non_gate_values(const Network& net) {
  std::vector<Real> out;
  for (const auto& t : net.params().tensors()) {
    if (!t.is_gate) out.insert(out.end(), t.values.begin(), t.values.end());
  }
  return out;
}

Real param_distance(const Network& a, const Network& b) {
  const auto x = oracle::flatten(a.params()), y = oracle::flatten(b.params());
  Real worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]));
  return worst;
}

bool same_reports(const std::vector<EpochReport>& a, const std::vector<EpochReport>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].epoch != b[i].epoch || a[i].train_loss != b[i].train_loss || a[i].cv_frame_error != b[i].cv_frame_error ||
        a[i].learning_rate != b[i].learning_rate || a[i].momentum != b[i].momentum ||
        a[i].train_expected_accuracy != b[i].train_expected_accuracy) {
      return false;
    }
  }
  return true;
}

std::vector<SequenceUtterance> tiny_sequence_set(std::uint64_t seed, std::size_t count) {
  CorpusSpec spec;
  spec.num_states = 3;
  spec.feature_dim = 4;
  spec.num_speakers = 1;
  spec.utterances_per_speaker = count;
  spec.cv_utterances_per_speaker = 1;
  spec.adapt_speakers = 0;
  spec.frames_per_utterance = 5;
  spec.mean_scale = 1.5;
  spec.seed = seed;
  Corpus c = gen_corpus(spec);
  Rng rng(seed, "test/lattices");
  for (auto& u : c.train) u.lattice = build_lattice(u.alignment, 3, 3, rng);
  return to_sequence_set(c.train, 0);
}

}  // namespace

TEST_CASE("sgd_step with momentum 0 is plain SGD") {
  Network net = build_network(small_highway(), 3);
  const Network before = net;
  Rng rng(91, "test/sgd");
  GradientSet g = net.params().zeros_like();
  for (auto& t : g.tensors()) for (Real& v : t.values) v = rng.normal();
  MomentumState state = make_momentum_state(net);
  sgd_step(net, g, state, 0.05, 0.0, UpdateScope::kAll);
  const auto p0 = oracle::flatten(before.params()), p1 = oracle::flatten(net.params()), gv = oracle::flatten(g);
  for (std::size_t i = 0; i < p0.size(); ++i) CHECK(p1[i] == p0[i] - 0.05 * gv[i]);
}

TEST_CASE("sgd_step momentum recurrence over two steps") {
  Network net = build_network(small_highway(), 4);
  const auto p0 = oracle::flatten(net.params());
  GradientSet g = net.params().zeros_like();
  for (auto& t : g.tensors()) for (Real& v : t.values) v = 0.5;
  MomentumState state = make_momentum_state(net);
  sgd_step(net, g, state, 0.1, 0.9, UpdateScope::kAll);
  sgd_step(net, g, state, 0.1, 0.9, UpdateScope::kAll);
  const auto p2 = oracle::flatten(net.params());
  for (std::size_t i = 0; i < p0.size(); ++i) CHECK(p2[i] - p0[i] == doctest::Approx(-0.1 * 0.5 * 2.9).epsilon(1e-12));
}

TEST_CASE("sgd_step gates_only scope") {
  Network net = build_network(small_highway(), 5);
  const auto rest = non_gate_values(net);
  const Network before = net;
  GradientSet g = net.params().zeros_like();
  for (auto& t : g.tensors()) for (Real& v : t.values) v = 1.0;
  MomentumState state = make_momentum_state(net);
  sgd_step(net, g, state, 0.1, 0.0, UpdateScope::kGatesOnly);
  CHECK(non_gate_values(net) == rest);
  CHECK(net.params().transform_gate != before.params().transform_gate);
  CHECK(net.params().carry_gate != before.params().carry_gate);

  Network plain = build_network({4, 8, 3, 3, Architecture::kPlain}, 5);
  GradientSet pg = plain.params().zeros_like();
  MomentumState ps = make_momentum_state(plain);
  CHECK_THROWS_AS(sgd_step(plain, pg, ps, 0.1, 0.0, UpdateScope::kGatesOnly), Error);
  CHECK_THROWS_AS(sgd_step(net, pg, state, 0.1, 0.0, UpdateScope::kAll), Error);
}

TEST_CASE("single small step decreases the loss to first order") {
  Rng rng(92, "test/descent");
  for (int trial = 0; trial < 5; ++trial) {
    Network net = build_network(small_highway(), static_cast<std::uint64_t>(100 + trial));
    const FrameSet data = blobs(static_cast<std::uint64_t>(trial), "test/descent-data", 32);
    const ForwardTrace trace = forward(net, data.features);
    const LossResult l = ce_loss(trace.posteriors, data.labels);
    const GradientSet g = backward(net, trace, l.dlogits);
    Real g2 = 0.0;
    for (Real v : oracle::flatten(g)) g2 += v * v;
    const Real eps = 1e-5;
    MomentumState state = make_momentum_state(net);
    sgd_step(net, g, state, eps, 0.0, UpdateScope::kAll);
    const Real after = ce_loss(forward(net, data.features).posteriors, data.labels).value;
    CHECK((l.value - after) == doctest::Approx(eps * g2).epsilon(0.1));
  }
}

TEST_CASE("momentum schedule") {
  TrainConfig cfg;
  cfg.momentum_after_first_epoch = 0.75;
  CHECK(momentum_for_epoch(cfg, 1) == 0.0);
  CHECK(momentum_for_epoch(cfg, 2) == 0.75);
  cfg.max_epochs = 2;
  cfg.minibatch_size = 32;
  const FrameSet train = blobs(1, "test/mom-train", 128), cv = blobs(2, "test/mom-cv", 64);
  const TrainResult r = train_ce(build_network(small_highway(), 1), train, cv, cfg);
  REQUIRE(r.reports.size() == 3);
  CHECK(r.reports[0].epoch == 0);
  CHECK(r.reports[1].momentum == 0.0);
  CHECK(r.reports[2].momentum == 0.75);
}

TEST_CASE("train_ce on a separable task") {
  TrainConfig cfg;
  cfg.minibatch_size = 32;
  cfg.max_epochs = 10;
  const FrameSet train = blobs(11, "test/ce-train", 600), cv = blobs(12, "test/ce-cv", 300);
  const TrainResult r = train_ce(build_network(small_highway(), 7), train, cv, cfg);
  REQUIRE(r.reports.size() == 11);
  CHECK(*r.reports.back().cv_frame_error < 0.10);
  CHECK(*r.reports.front().cv_frame_error > *r.reports.back().cv_frame_error);

  const TrainResult again = train_ce(build_network(small_highway(), 7), train, cv, cfg);
  CHECK(same_reports(r.reports, again.reports));
  CHECK(r.net.params() == again.net.params());
}

TEST_CASE("train_ce with lr 0 leaves parameters unchanged") {
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.max_epochs = 3;
  const FrameSet train = blobs(13, "test/lr0", 100);
  const Network net = build_network(small_highway(), 8);
  const TrainResult r = train_ce(net, train, train, cfg);
  CHECK(r.net.params() == net.params());
  for (const auto& rep : r.reports) CHECK(rep.cv_frame_error == r.reports[0].cv_frame_error);
}

TEST_CASE("train_ce errors") {
  TrainConfig cfg;
  const FrameSet empty{Matrix(0, 4), {}};
  CHECK_THROWS_AS(train_ce(build_network(small_highway(), 1), empty, empty, cfg), Error);
  FrameSet unlabelled = blobs(1, "test/unl", 10);
  unlabelled.labels.clear();
  CHECK_THROWS_AS(train_ce(build_network(small_highway(), 1), unlabelled, empty, cfg), Error);
  cfg.loss_kind = LossKind::kKd;
  CHECK_THROWS_AS(train_ce(build_network(small_highway(), 1), blobs(1, "x", 10), empty, cfg), Error);
  TrainConfig bad;
  bad.temperature = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = TrainConfig{};
  bad.q = -1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("self-distillation is a fixed point") {
  TrainConfig ce;
  ce.minibatch_size = 32;
  ce.max_epochs = 3;
  const FrameSet train = blobs(21, "test/kd-train", 300), cv = blobs(22, "test/kd-cv", 200);
  const Network teacher = train_ce(build_network(small_highway(), 9), train, cv, ce).net;

  TrainConfig kd = ce;
  kd.loss_kind = LossKind::kKd;
  kd.max_epochs = 1;
  const TrainResult r = distill_from(teacher, teacher, train, cv, kd);
  const Real entropy = mean_entropy(forward(teacher, train.features).posteriors);
  CHECK(r.reports[0].train_loss == doctest::Approx(entropy).epsilon(1e-9));
  CHECK(std::abs(*r.reports[1].cv_frame_error - evaluate_frame_error(teacher, cv)) < 0.01);
}

TEST_CASE("distillation from unlabelled data") {
  TrainConfig ce;
  ce.minibatch_size = 32;
  ce.max_epochs = 3;
  const FrameSet train = blobs(23, "test/kd-u-train", 300), cv = blobs(24, "test/kd-u-cv", 200);
  const Network teacher = train_ce(build_network({4, 16, 3, 3, Architecture::kHighway}, 1), train, cv, ce).net;
  FrameSet unlabelled = train;
  unlabelled.labels.clear();

  TrainConfig kd = ce;
  kd.loss_kind = LossKind::kKd;
  const TrainResult r = distill(small_highway(), teacher, unlabelled, cv, kd);
  CHECK(r.reports.size() == 4);
  CHECK(*r.reports.back().cv_frame_error < 0.2);

  kd.loss_kind = LossKind::kHybrid;
  kd.q = 0.5;
  CHECK_THROWS_AS(distill(small_highway(), teacher, unlabelled, cv, kd), Error);
  kd.loss_kind = LossKind::kCe;
  CHECK_THROWS_AS(distill(small_highway(), teacher, train, cv, kd), Error);
  kd.loss_kind = LossKind::kKd;
  CHECK_THROWS_AS(distill({4, 8, 3, 4, Architecture::kHighway}, teacher, train, cv, kd), Error);
}

TEST_CASE("offline distillation matches on-the-fly distillation") {
  TrainConfig ce;
  ce.minibatch_size = 50;
  ce.max_epochs = 2;
  const FrameSet train = blobs(25, "test/off-train", 200), cv = blobs(26, "test/off-cv", 100);
  const Network teacher = train_ce(build_network(small_highway(), 2), train, cv, ce).net;
  TrainConfig kd = ce;
  kd.loss_kind = LossKind::kKd;
  kd.temperature = 2.0;
  const Network student = build_network(small_highway(), 3);
  const TrainResult online = distill_from(student, teacher, train, cv, kd);
  const TrainResult offline = distill_offline(student, teacher_targets(teacher, train.features, 2.0), train, cv, kd);
  CHECK(param_distance(online.net, offline.net) < 1e-12);
  CHECK_THROWS_AS(distill_offline(student, teacher_targets(teacher, train.features, 1.0), train, cv, kd), Error);
}

TEST_CASE("sequence training with p = 0 is monotone at a small learning rate") {
  const auto utts = tiny_sequence_set(31, 1);
  Network net = build_network({4, 8, 3, 3, Architecture::kHighway}, 4);
  TrainConfig cfg;
  cfg.loss_kind = LossKind::kSmbrKd;
  cfg.p = 0.0;
  cfg.learning_rate = 1e-3;
  cfg.max_epochs = 50;
  cfg.momentum_after_first_epoch = 0.0;
  cfg.sequence_regularizer = SequenceRegularizer::kCe;
  cfg.smbr.acoustic_scale = 1.0;
  const TrainResult r = sequence_train(net, utts, nullptr, FrameSet{Matrix(0, 4), {}}, cfg);
  REQUIRE(r.reports.size() == 51);
  for (std::size_t e = 1; e < r.reports.size(); ++e) {
    CHECK(*r.reports[e].train_expected_accuracy >= *r.reports[e - 1].train_expected_accuracy - 1e-6);
  }
  CHECK(*r.reports.back().train_expected_accuracy > *r.reports.front().train_expected_accuracy);
}

TEST_CASE("sequence training with a dominant KD term tracks KD fine-tuning") {
  const auto utts = tiny_sequence_set(32, 4);
  const Network net = build_network({4, 8, 3, 3, Architecture::kHighway}, 5);
  const Network teacher = build_network({4, 16, 3, 3, Architecture::kHighway}, 6);
  TrainConfig cfg;
  cfg.loss_kind = LossKind::kSmbrKd;
  cfg.p = 1e6;
  cfg.learning_rate = 1e-7;
  cfg.max_epochs = 3;
  const TrainResult seq = sequence_train(net, utts, &teacher, FrameSet{Matrix(0, 4), {}}, cfg);

  // Same per-utterance schedule, KD gradient only, scaled by p.
  Network kd_net = net;
  MomentumState state = make_momentum_state(kd_net);
  std::vector<std::size_t> order(utts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const Rng root(cfg.seed, "sequence_train/shuffle");
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng rng = root.fork("epoch-" + std::to_string(epoch));
    shuffle(order, rng);
    for (std::size_t i : order) {
      const ForwardTrace tr = forward(kd_net, utts[i].features);
      LossResult kd = kd_loss(tr.logits, teacher_targets(teacher, utts[i].features, 1.0), 1.0);
      for (Real& v : kd.dlogits.data()) v *= cfg.p;
      sgd_step(kd_net, backward(kd_net, tr, kd.dlogits), state, cfg.learning_rate, momentum_for_epoch(cfg, epoch),
               UpdateScope::kAll);
    }
  }
  CHECK(param_distance(seq.net, kd_net) < 1e-3);
  CHECK(param_distance(seq.net, net) > 1e-3);
}

TEST_CASE("sequence training errors") {
  const Network net = build_network({4, 8, 3, 3, Architecture::kHighway}, 5);
  TrainConfig cfg;
  cfg.loss_kind = LossKind::kSmbrKd;
  CHECK_THROWS_AS(sequence_train(net, {}, &net, FrameSet{}, cfg), Error);
  auto utts = tiny_sequence_set(33, 1);
  CHECK_THROWS_AS(sequence_train(net, utts, nullptr, FrameSet{}, cfg), Error);
  utts[0].alignment.pop_back();
  CHECK_THROWS_AS(sequence_train(net, utts, &net, FrameSet{}, cfg), Error);
}

TEST_CASE("adaptation contracts") {
  TrainConfig ce;
  ce.minibatch_size = 32;
  ce.max_epochs = 3;
  const FrameSet train = blobs(41, "test/ad-train", 300), cv = blobs(42, "test/ad-cv", 100);
  const Network si = train_ce(build_network(small_highway(), 10), train, cv, ce).net;

  TrainConfig cfg = default_adapt_config();
  CHECK(cfg.max_epochs == 5);
  CHECK(cfg.learning_rate == 2e-4);
  cfg.update_scope = UpdateScope::kGatesOnly;
  const TrainResult gates = adapt(si, train.features, AdaptMode::kTwoPassCe, nullptr, cv, cfg);
  CHECK(non_gate_values(gates.net) == non_gate_values(si));
  CHECK(gates.net.params().transform_gate != si.params().transform_gate);

  cfg.update_scope = UpdateScope::kAll;
  const TrainResult self = adapt(si, train.features, AdaptMode::kOnePassKd, &si, cv, cfg);
  CHECK(param_distance(self.net, si) < 1e-3);
  CHECK(self.reports.size() == 6);

  CHECK_THROWS_AS(adapt(si, train.features, AdaptMode::kOnePassKd, nullptr, cv, cfg), Error);
  const Network plain = build_network({4, 8, 3, 3, Architecture::kPlain}, 1);
  cfg.update_scope = UpdateScope::kGatesOnly;
  CHECK_THROWS_AS(adapt(plain, train.features, AdaptMode::kTwoPassCe, nullptr, cv, cfg), Error);
}

TEST_CASE("report lines round trip") {
  std::vector<EpochReport> reports(3);
  reports[0].train_loss = 1.25;
  reports[1] = {1, 0.5, 0.125, 0.01, 0.1, 0.0, std::nullopt};
  reports[2] = {2, 0.25, std::nullopt, 0.02, 0.05, 0.9, 0.875};
  std::stringstream ss;
  for (const auto& r : reports) write_report_line(ss, r);
  const auto back = read_reports(ss);
  CHECK(same_reports(reports, back));
  std::stringstream bad("{not json}\n");
  CHECK_THROWS_AS(read_reports(bad), Error);
}

TEST_CASE("enum parsing") {
  CHECK(parse_loss_kind("smbr_kd") == LossKind::kSmbrKd);
  CHECK(parse_update_scope("gates") == UpdateScope::kGatesOnly);
  CHECK(parse_lr_schedule("halve-on-cv-stall") == LrSchedule::kHalveOnCvStall);
  CHECK(parse_adapt_mode("one_pass_kd") == AdaptMode::kOnePassKd);
  CHECK_THROWS_AS(parse_adapt_mode("three_pass"), Error);
}
