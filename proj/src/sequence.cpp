#include "hdnn/sequence.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace hdnn {

namespace {

constexpr Real kNegInf = -std::numeric_limits<Real>::infinity();
constexpr std::size_t kUnset = std::numeric_limits<std::size_t>::max();

}  // namespace

std::vector<std::size_t> Lattice::node_boundaries() const {
  std::vector<std::size_t> boundary(num_nodes, kUnset);
  if (num_nodes > 0) boundary[0] = 0;
  for (const auto& a : arcs) {
    if (a.from < num_nodes) boundary[a.from] = a.frame;
    if (a.to < num_nodes) boundary[a.to] = a.frame + 1;
  }
  return boundary;
}

void Lattice::validate() const {
  require(num_frames >= 1, ErrorKind::kDegenerateLattice, "lattice has no frames");
  require(num_nodes >= 2, ErrorKind::kDegenerateLattice, "lattice needs distinct start and end nodes");
  std::vector<std::size_t> boundary(num_nodes, kUnset);
  boundary[0] = 0;
  boundary[num_nodes - 1] = num_frames;
  auto assign = [&](std::size_t node, std::size_t b) {
    if (boundary[node] == kUnset) boundary[node] = b;
    require(boundary[node] == b, ErrorKind::kDegenerateLattice,
            "node " + std::to_string(node) + " is assigned to two frame boundaries");
  };
  for (const auto& a : arcs) {
    require(a.from < num_nodes && a.to < num_nodes, ErrorKind::kInvalidArgument, "arc references unknown node");
    require(a.from < a.to, ErrorKind::kDegenerateLattice, "arcs must go forward in topological node order");
    require(a.frame < num_frames, ErrorKind::kInvalidArgument, "arc frame index out of range");
    require(a.state >= 0, ErrorKind::kInvalidArgument, "arc state must be non-negative");
    require(std::isfinite(a.graph_logweight), ErrorKind::kInvalidArgument, "arc graph weight must be finite");
    assign(a.from, a.frame);
    assign(a.to, a.frame + 1);
  }
  std::vector<bool> reachable(num_nodes, false);
  reachable[0] = true;
  // Arcs are not required to be sorted, so sweep nodes in topological order.
  std::vector<std::vector<std::size_t>> outgoing(num_nodes);
  for (std::size_t i = 0; i < arcs.size(); ++i) outgoing[arcs[i].from].push_back(i);
  for (std::size_t n = 0; n < num_nodes; ++n) {
    if (!reachable[n]) continue;
    for (std::size_t i : outgoing[n]) reachable[arcs[i].to] = true;
  }
  require(reachable[num_nodes - 1], ErrorKind::kDegenerateLattice, "lattice has no complete path");
}

namespace {

struct Sweep {
  std::vector<Real> alpha, beta;          // log forward / backward per node
  std::vector<Real> alpha_acc, beta_acc;  // expected partial accuracies per node
  std::vector<Real> arc_score;
  Real total = 0.0;
};

Sweep run_sweep(const Lattice& lat, const Matrix& frame_log_scores, std::span<const int> reference) {
  lat.validate();
  require(frame_log_scores.rows() == lat.num_frames, ErrorKind::kShape, "frame score rows != lattice frames");
  const std::size_t nn = lat.num_nodes;
  const bool with_acc = !reference.empty();

  Sweep s;
  s.arc_score.resize(lat.arcs.size());
  std::vector<std::vector<std::size_t>> incoming(nn), outgoing(nn);
  for (std::size_t i = 0; i < lat.arcs.size(); ++i) {
    const auto& a = lat.arcs[i];
    require(static_cast<std::size_t>(a.state) < frame_log_scores.cols(), ErrorKind::kInvalidArgument,
            "arc state " + std::to_string(a.state) + " outside score matrix");
    s.arc_score[i] = frame_log_scores(a.frame, static_cast<std::size_t>(a.state)) + a.graph_logweight;
    incoming[a.to].push_back(i);
    outgoing[a.from].push_back(i);
  }
  auto acc = [&](std::size_t i) -> Real {
    const auto& a = lat.arcs[i];
    return with_acc && reference[a.frame] == a.state ? 1.0 : 0.0;
  };

  s.alpha.assign(nn, kNegInf);
  s.alpha_acc.assign(nn, 0.0);
  s.alpha[0] = 0.0;
  for (std::size_t n = 1; n < nn; ++n) {
    Real la = kNegInf;
    for (std::size_t i : incoming[n]) la = log_add(la, s.alpha[lat.arcs[i].from] + s.arc_score[i]);
    s.alpha[n] = la;
    if (!with_acc || la == kNegInf) continue;
    Real e = 0.0;
    for (std::size_t i : incoming[n]) {
      const auto from = lat.arcs[i].from;
      if (s.alpha[from] == kNegInf) continue;
      e += std::exp(s.alpha[from] + s.arc_score[i] - la) * (s.alpha_acc[from] + acc(i));
    }
    s.alpha_acc[n] = e;
  }

  s.beta.assign(nn, kNegInf);
  s.beta_acc.assign(nn, 0.0);
  s.beta[nn - 1] = 0.0;
  for (std::size_t n = nn - 1; n-- > 0;) {
    Real lb = kNegInf;
    for (std::size_t i : outgoing[n]) lb = log_add(lb, s.arc_score[i] + s.beta[lat.arcs[i].to]);
    s.beta[n] = lb;
    if (!with_acc || lb == kNegInf) continue;
    Real e = 0.0;
    for (std::size_t i : outgoing[n]) {
      const auto to = lat.arcs[i].to;
      if (s.beta[to] == kNegInf) continue;
      e += std::exp(s.arc_score[i] + s.beta[to] - lb) * (acc(i) + s.beta_acc[to]);
    }
    s.beta_acc[n] = e;
  }
  s.total = s.alpha[nn - 1];
  require(std::isfinite(s.total), ErrorKind::kDegenerateLattice, "lattice total score is not finite");
  return s;
}

Real arc_posterior(const Lattice& lat, const Sweep& s, std::size_t i) {
  const auto& a = lat.arcs[i];
  const Real lp = s.alpha[a.from] + s.arc_score[i] + s.beta[a.to] - s.total;
  return lp == kNegInf ? 0.0 : std::exp(lp);
}

}  // namespace

ForwardBackwardResult forward_backward(const Lattice& lat, const Matrix& frame_log_scores) {
  const Sweep s = run_sweep(lat, frame_log_scores, {});
  ForwardBackwardResult r;
  r.total_logprob = s.total;
  r.arc_posteriors.resize(lat.arcs.size());
  for (std::size_t i = 0; i < lat.arcs.size(); ++i) r.arc_posteriors[i] = arc_posterior(lat, s, i);
  return r;
}

void SmbrConfig::validate(std::size_t num_states) const {
  require(acoustic_scale > 0.0, ErrorKind::kInvalidArgument, "acoustic scale must be positive");
  require(prior_floor > 0.0, ErrorKind::kInvalidArgument, "prior floor must be positive");
  if (state_priors.empty()) return;
  require(state_priors.size() == num_states, ErrorKind::kShape, "state prior count != output dim");
  Real sum = 0.0;
  for (Real v : state_priors) {
    require(v >= 0.0, ErrorKind::kInvalidArgument, "negative state prior");
    sum += v;
  }
  require(std::abs(sum - 1.0) <= 1e-5, ErrorKind::kInvalidArgument, "state priors must sum to 1");
}

Vector estimate_state_priors(std::span<const int> labels, std::size_t num_states, Real floor) {
  require(num_states > 0, ErrorKind::kInvalidArgument, "num_states must be positive");
  require(floor > 0.0, ErrorKind::kInvalidArgument, "prior floor must be positive");
  Vector priors(num_states, 0.0);
  for (int l : labels) {
    require(l >= 0 && static_cast<std::size_t>(l) < num_states, ErrorKind::kInvalidArgument, "label out of range");
    priors[static_cast<std::size_t>(l)] += 1.0;
  }
  Real total = 0.0;
  for (Real& p : priors) {
    p = labels.empty() ? 1.0 / static_cast<Real>(num_states) : p / static_cast<Real>(labels.size());
    p = std::max(p, floor);
    total += p;
  }
  for (Real& p : priors) p /= total;
  return priors;
}

Matrix smbr_frame_scores(const Matrix& posteriors, const SmbrConfig& cfg) {
  const std::size_t K = posteriors.cols();
  cfg.validate(K);
  Matrix scores(posteriors.rows(), K);
  const Real uniform_log_prior = -std::log(static_cast<Real>(K));
  for (std::size_t t = 0; t < posteriors.rows(); ++t) {
    for (std::size_t j = 0; j < K; ++j) {
      const Real log_prior =
          cfg.state_priors.empty() ? uniform_log_prior : std::log(std::max(cfg.state_priors[j], cfg.prior_floor));
      const Real log_post = std::log(std::max(posteriors(t, j), std::numeric_limits<Real>::min()));
      scores(t, j) = cfg.acoustic_scale * (log_post - log_prior);
    }
  }
  return scores;
}

SmbrResult smbr_objective(const Lattice& lat, const Matrix& posteriors, std::span<const int> reference,
                          const SmbrConfig& cfg) {
  require(reference.size() == lat.num_frames, ErrorKind::kInvalidArgument,
          "reference alignment length does not match lattice frames");
  require(posteriors.rows() == lat.num_frames, ErrorKind::kShape, "posterior rows != lattice frames");
  const Matrix scores = smbr_frame_scores(posteriors, cfg);
  const Sweep s = run_sweep(lat, scores, reference);

  SmbrResult r;
  r.total_logprob = s.total;
  r.expected_accuracy = s.alpha_acc[lat.num_nodes - 1];
  r.arc_posteriors.resize(lat.arcs.size());
  r.arc_expected_accuracy.resize(lat.arcs.size());
  r.dlogits = Matrix(lat.num_frames, posteriors.cols());
  for (std::size_t i = 0; i < lat.arcs.size(); ++i) {
    const auto& a = lat.arcs[i];
    const Real acc = reference[a.frame] == a.state ? 1.0 : 0.0;
    const Real gamma = arc_posterior(lat, s, i);
    const Real conditional = s.alpha_acc[a.from] + acc + s.beta_acc[a.to];
    r.arc_posteriors[i] = gamma;
    r.arc_expected_accuracy[i] = conditional;
    // Per frame the gamma-weighted deviations sum to zero, so the softmax
    // Jacobian's -y term cancels and this is also the gradient w.r.t. logits.
    r.dlogits(a.frame, static_cast<std::size_t>(a.state)) +=
        cfg.acoustic_scale * gamma * (conditional - r.expected_accuracy);
  }
  return r;
}

LossResult smbr_kd_objective(const SmbrResult& smbr, const LossResult& regularizer, Real p) {
  require(p >= 0.0, ErrorKind::kInvalidArgument, "smbr_kd_objective: p must be non-negative");
  const std::size_t T = smbr.dlogits.rows();
  require(T > 0, ErrorKind::kInvalidArgument, "smbr_kd_objective: empty utterance");
  require(regularizer.dlogits.same_shape(smbr.dlogits), ErrorKind::kShape,
          "smbr_kd_objective: regularizer batch does not match utterance");
  const Real inv_t = 1.0 / static_cast<Real>(T);
  LossResult out{-smbr.expected_accuracy * inv_t + p * regularizer.value, Matrix(T, smbr.dlogits.cols())};
  for (std::size_t i = 0; i < out.dlogits.size(); ++i) {
    out.dlogits.data()[i] = -smbr.dlogits.data()[i] * inv_t + p * regularizer.dlogits.data()[i];
  }
  return out;
}

void write_lattice(std::ostream& os, const Lattice& lat) {
  os << lat.num_frames << ' ' << lat.num_nodes << ' ' << lat.arcs.size() << '\n';
  std::ostringstream w;
  w.precision(17);
  for (const auto& a : lat.arcs) {
    w.str({});
    w << a.graph_logweight;
    os << a.from << ' ' << a.to << ' ' << a.frame << ' ' << a.state << ' ' << w.str() << '\n';
  }
}

Lattice read_lattice(std::istream& is) {
  Lattice lat;
  std::size_t num_arcs = 0;
  require(static_cast<bool>(is >> lat.num_frames >> lat.num_nodes >> num_arcs), ErrorKind::kParse,
          "lattice: bad header");
  lat.arcs.resize(num_arcs);
  for (auto& a : lat.arcs) {
    require(static_cast<bool>(is >> a.from >> a.to >> a.frame >> a.state >> a.graph_logweight), ErrorKind::kParse,
            "lattice: truncated arc list");
  }
  lat.validate();
  return lat;
}

void write_alignment(std::ostream& os, std::span<const int> alignment) {
  for (std::size_t t = 0; t < alignment.size(); ++t) os << (t ? " " : "") << alignment[t];
  os << '\n';
}

ReferenceAlignment read_alignment(std::istream& is) {
  std::string line;
  std::getline(is, line);
  std::istringstream ls(line);
  ReferenceAlignment out;
  int v = 0;
  while (ls >> v) out.push_back(v);
  require(ls.eof(), ErrorKind::kParse, "alignment: non-integer token");
  return out;
}

}  // namespace hdnn
