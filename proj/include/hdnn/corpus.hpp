#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hdnn/numerics.hpp"
#include "hdnn/sequence.hpp"
#include "hdnn/trainer.hpp"

namespace hdnn {

// Synthetic HMM corpus. Each state emits a diagonal Gaussian; each speaker
// applies x -> A x + b with A = I + shift * G and b = shift * g.
struct CorpusSpec {
  std::size_t num_states = 12;
  std::size_t feature_dim = 8;
  std::size_t num_speakers = 4;
  std::size_t utterances_per_speaker = 8;
  std::size_t cv_utterances_per_speaker = 2;
  std::size_t adapt_speakers = 1;
  std::size_t adapt_utterances_per_speaker = 8;
  std::size_t frames_per_utterance = 50;
  Real mean_scale = 1.0;      // state means ~ N(0, mean_scale^2)
  Real emission_stddev = 1.0;  // base per-dimension stddev
  Real stddev_jitter = 0.0;    // per state/dim stddev scaled by 1 + jitter * U[-1, 1)
  Real self_loop = 0.7;        // P(stay); remaining mass uniform over other states
  Real speaker_shift = 0.1;
  Real adapt_speaker_shift = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static CorpusSpec from_map(const std::map<std::string, std::string>& kv);
};

struct EmissionModel {
  Matrix means;    // num_states x feature_dim
  Matrix stddevs;  // num_states x feature_dim
  Matrix transitions;  // num_states x num_states
};

struct SpeakerTransform {
  Matrix scale;  // feature_dim x feature_dim
  Vector offset;
  bool identity = false;
};

struct Utterance {
  std::string id;
  int speaker = 0;
  Matrix features;  // raw, frames x feature_dim
  ReferenceAlignment alignment;
  std::optional<Lattice> lattice;
};

struct Corpus {
  std::vector<Utterance> train, cv, adapt;
};

EmissionModel make_emission_model(const CorpusSpec& spec);
SpeakerTransform make_speaker_transform(const CorpusSpec& spec, int speaker, Real shift);
Corpus gen_corpus(const CorpusSpec& spec);

// Row t is frames t-context .. t+context concatenated, edges replicated.
Matrix splice(const Matrix& features, std::size_t context);

FrameSet to_frame_set(const std::vector<Utterance>& utterances, std::size_t context);
std::vector<SequenceUtterance> to_sequence_set(const std::vector<Utterance>& utterances, std::size_t context);

// Confusion-network lattice: one node per frame boundary, the reference arc
// plus branch_factor - 1 distinct competing states per frame, graph weights
// uniform in [-max_graph_penalty, 0).
Lattice build_lattice(std::span<const int> reference, std::size_t num_states, std::size_t branch_factor, Rng& rng,
                      Real max_graph_penalty = 0.5);

// Nearest-mean (Euclidean) frame classifier over raw features.
std::vector<int> nearest_mean_labels(const Matrix& raw_features, const Matrix& means);

}  // namespace hdnn
