#pragma once

// Test-only reference implementations. Nothing here calls into the lattice
// recursions or the analytic gradients it is used to check.

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "hdnn/network.hpp"
#include "hdnn/numerics.hpp"
#include "hdnn/sequence.hpp"

namespace hdnn::oracle {

inline void enumerate_paths(const Lattice& lat, std::size_t node, std::vector<std::size_t>& prefix,
                            std::vector<std::vector<std::size_t>>& out) {
  if (node == lat.num_nodes - 1) {
    out.push_back(prefix);
    return;
  }
  for (std::size_t i = 0; i < lat.arcs.size(); ++i) {
    if (lat.arcs[i].from != node) continue;
    prefix.push_back(i);
    enumerate_paths(lat, lat.arcs[i].to, prefix, out);
    prefix.pop_back();
  }
}

inline std::vector<std::vector<std::size_t>> all_paths(const Lattice& lat) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> prefix;
  enumerate_paths(lat, 0, prefix, out);
  return out;
}

struct PathSummary {
  std::vector<Real> path_prob;
  std::vector<Real> path_accuracy;
  std::vector<Real> arc_posterior;
  Real expected_accuracy = 0.0;
  Real total_log = 0.0;
};

// Plain enumeration: P(path) = exp(sum of arc scores) / Z.
inline PathSummary enumerate(const Lattice& lat, const Matrix& scores, std::span<const int> reference = {}) {
  const auto paths = all_paths(lat);
  PathSummary s;
  std::vector<Real> logs;
  for (const auto& p : paths) {
    Real lp = 0.0, acc = 0.0;
    for (std::size_t i : p) {
      const auto& a = lat.arcs[i];
      lp += scores(a.frame, static_cast<std::size_t>(a.state)) + a.graph_logweight;
      if (!reference.empty() && reference[a.frame] == a.state) acc += 1.0;
    }
    logs.push_back(lp);
    s.path_accuracy.push_back(acc);
  }
  Real m = -std::numeric_limits<Real>::infinity();
  for (Real l : logs) m = std::max(m, l);
  Real z = 0.0;
  for (Real l : logs) z += std::exp(l - m);
  s.total_log = m + std::log(z);
  s.arc_posterior.assign(lat.arcs.size(), 0.0);
  for (std::size_t k = 0; k < paths.size(); ++k) {
    const Real pr = std::exp(logs[k] - s.total_log);
    s.path_prob.push_back(pr);
    s.expected_accuracy += pr * s.path_accuracy[k];
    for (std::size_t i : paths[k]) s.arc_posterior[i] += pr;
  }
  return s;
}

// Central differences of f over every entry of `values`, evaluated in place.
inline std::vector<Real> central_difference(std::span<Real> values, const std::function<Real()>& f, Real step) {
  std::vector<Real> grad(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Real saved = values[i];
    values[i] = saved + step;
    const Real up = f();
    values[i] = saved - step;
    const Real down = f();
    values[i] = saved;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

// max |a - b| / max(|a|, |b|, floor) over entries.
inline Real max_relative_error(std::span<const Real> a, std::span<const Real> b, Real floor = 1e-6) {
  Real worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Real denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

// Random frame-synchronous DAG with 1-2 nodes per interior boundary and at
// most `max_arcs` arcs per frame; every node has an incoming and outgoing arc.
inline Lattice random_lattice(Rng& rng, std::size_t frames, std::size_t num_states, std::size_t max_arcs = 3) {
  std::vector<std::size_t> first(frames + 2, 0), count(frames + 1, 1);
  for (std::size_t b = 1; b < frames; ++b) count[b] = 1 + static_cast<std::size_t>(rng.below(2));
  for (std::size_t b = 0; b <= frames; ++b) first[b + 1] = first[b] + count[b];
  Lattice lat;
  lat.num_frames = frames;
  lat.num_nodes = first[frames + 1];
  auto state = [&] { return static_cast<int>(rng.below(num_states)); };
  auto weight = [&] { return -rng.uniform(0.0, 1.0); };
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<bool> has_out(count[t], false);
    std::size_t arcs = 0;
    for (std::size_t j = 0; j < count[t + 1]; ++j) {
      const std::size_t i = static_cast<std::size_t>(rng.below(count[t]));
      has_out[i] = true;
      lat.arcs.push_back({first[t] + i, first[t + 1] + j, t, state(), weight()});
      ++arcs;
    }
    for (std::size_t i = 0; i < count[t]; ++i) {
      if (has_out[i]) continue;
      const std::size_t j = static_cast<std::size_t>(rng.below(count[t + 1]));
      lat.arcs.push_back({first[t] + i, first[t + 1] + j, t, state(), weight()});
      ++arcs;
    }
    while (arcs < max_arcs && rng.uniform() < 0.6) {
      const std::size_t i = static_cast<std::size_t>(rng.below(count[t]));
      const std::size_t j = static_cast<std::size_t>(rng.below(count[t + 1]));
      lat.arcs.push_back({first[t] + i, first[t + 1] + j, t, state(), weight()});
      ++arcs;
    }
  }
  return lat;
}

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, Real scale = 1.0) {
  Matrix m(rows, cols);
  for (Real& v : m.data()) v = scale * rng.normal();
  return m;
}

inline std::vector<int> random_labels(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<int> out(n);
  for (int& v : out) v = static_cast<int>(rng.below(k));
  return out;
}

// Flatten all parameter tensors of a set, in tensor order.
inline std::vector<Real> flatten(const ParameterSet& p) {
  std::vector<Real> out;
  for (const auto& t : p.tensors()) out.insert(out.end(), t.values.begin(), t.values.end());
  return out;
}

}  // namespace hdnn::oracle
