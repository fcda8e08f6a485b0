#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "hdnn/losses.hpp"
#include "hdnn/numerics.hpp"

namespace hdnn {

struct LatticeArc {
  std::size_t from = 0;
  std::size_t to = 0;
  std::size_t frame = 0;
  int state = 0;
  Real graph_logweight = 0.0;

  friend bool operator==(const LatticeArc&, const LatticeArc&) = default;
};

// Frame-synchronous state lattice. Nodes are numbered in topological order;
// node 0 is the start (boundary 0) and node num_nodes-1 is the end
// (boundary num_frames). Every arc advances exactly one frame boundary.
struct Lattice {
  std::size_t num_frames = 0;
  std::size_t num_nodes = 0;
  std::vector<LatticeArc> arcs;

  // Throws kDegenerateLattice / kInvalidArgument on any structural violation,
  // including the absence of a complete start-to-end path.
  void validate() const;
  // Frame boundary of each node, derived from the arcs.
  std::vector<std::size_t> node_boundaries() const;

  friend bool operator==(const Lattice&, const Lattice&) = default;
};

using ReferenceAlignment = std::vector<int>;

struct ForwardBackwardResult {
  std::vector<Real> arc_posteriors;
  Real total_logprob = 0.0;
};

// Arc log score = frame_log_scores(frame, state) + graph_logweight.
ForwardBackwardResult forward_backward(const Lattice& lat, const Matrix& frame_log_scores);

struct SmbrConfig {
  Real acoustic_scale = 0.1;
  Vector state_priors;  // empty: uniform
  Real prior_floor = 1e-8;

  void validate(std::size_t num_states) const;
};

// Label-frequency priors floored at `floor` and renormalized.
Vector estimate_state_priors(std::span<const int> labels, std::size_t num_states, Real floor = 1e-8);

struct SmbrResult {
  Real expected_accuracy = 0.0;
  std::vector<Real> arc_posteriors;
  std::vector<Real> arc_expected_accuracy;
  // d(expected_accuracy)/d(logits): ascent direction.
  Matrix dlogits;
  Real total_logprob = 0.0;
};

// Per-arc acoustic+graph scores k (log y - log prior) + graph_logweight.
Matrix smbr_frame_scores(const Matrix& posteriors, const SmbrConfig& cfg);

SmbrResult smbr_objective(const Lattice& lat, const Matrix& posteriors, std::span<const int> reference,
                          const SmbrConfig& cfg);

// (-expected_accuracy / T) + p * reg as a descent objective on the logits.
LossResult smbr_kd_objective(const SmbrResult& smbr, const LossResult& regularizer, Real p);

// Text format: header "T num_nodes num_arcs", then "from to t state graph_logweight".
void write_lattice(std::ostream& os, const Lattice& lat);
Lattice read_lattice(std::istream& is);
void write_alignment(std::ostream& os, std::span<const int> alignment);
ReferenceAlignment read_alignment(std::istream& is);

}  // namespace hdnn
