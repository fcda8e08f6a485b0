#include "hdnn/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace hdnn {

void CorpusSpec::validate() const {
  require(num_states >= 1 && feature_dim >= 1 && num_speakers >= 1 && utterances_per_speaker >= 1 &&
              frames_per_utterance >= 1,
          ErrorKind::kInvalidArgument, "corpus dimensions must be >= 1");
  require(std::isfinite(emission_stddev) && emission_stddev >= 0.0, ErrorKind::kInvalidArgument,
          "degenerate covariance: emission stddev must be finite and non-negative");
  require(stddev_jitter >= 0.0 && stddev_jitter < 1.0, ErrorKind::kInvalidArgument,
          "degenerate covariance: stddev jitter must lie in [0, 1)");
  require(self_loop >= 0.0 && self_loop <= 1.0, ErrorKind::kInvalidArgument, "self-loop must be a probability");
  require(std::isfinite(mean_scale) && std::isfinite(speaker_shift) && std::isfinite(adapt_speaker_shift),
          ErrorKind::kInvalidArgument, "corpus scales must be finite");
}

std::map<std::string, std::string> CorpusSpec::to_map() const {
  auto num = [](auto v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  return {
      {"num_states", num(num_states)},
      {"feature_dim", num(feature_dim)},
      {"num_speakers", num(num_speakers)},
      {"utterances_per_speaker", num(utterances_per_speaker)},
      {"cv_utterances_per_speaker", num(cv_utterances_per_speaker)},
      {"adapt_speakers", num(adapt_speakers)},
      {"adapt_utterances_per_speaker", num(adapt_utterances_per_speaker)},
      {"frames_per_utterance", num(frames_per_utterance)},
      {"mean_scale", num(mean_scale)},
      {"emission_stddev", num(emission_stddev)},
      {"stddev_jitter", num(stddev_jitter)},
      {"self_loop", num(self_loop)},
      {"speaker_shift", num(speaker_shift)},
      {"adapt_speaker_shift", num(adapt_speaker_shift)},
      {"seed", num(seed)},
  };
}

namespace {

template <typename T>
void read_field(const std::map<std::string, std::string>& kv, const std::string& key, T& out) {
  auto it = kv.find(key);
  if (it == kv.end()) return;
  std::istringstream is(it->second);
  T v{};
  is >> v;
  require(!is.fail() && (is >> std::ws).eof(), ErrorKind::kParse, "bad value for '" + key + "': " + it->second);
  out = v;
}

}  // namespace

CorpusSpec CorpusSpec::from_map(const std::map<std::string, std::string>& kv) {
  CorpusSpec s;
  const auto known = s.to_map();
  for (const auto& [k, v] : kv) {
    require(known.count(k) == 1, ErrorKind::kParse, "unknown corpus key '" + k + "'");
  }
  read_field(kv, "num_states", s.num_states);
  read_field(kv, "feature_dim", s.feature_dim);
  read_field(kv, "num_speakers", s.num_speakers);
  read_field(kv, "utterances_per_speaker", s.utterances_per_speaker);
  read_field(kv, "cv_utterances_per_speaker", s.cv_utterances_per_speaker);
  read_field(kv, "adapt_speakers", s.adapt_speakers);
  read_field(kv, "adapt_utterances_per_speaker", s.adapt_utterances_per_speaker);
  read_field(kv, "frames_per_utterance", s.frames_per_utterance);
  read_field(kv, "mean_scale", s.mean_scale);
  read_field(kv, "emission_stddev", s.emission_stddev);
  read_field(kv, "stddev_jitter", s.stddev_jitter);
  read_field(kv, "self_loop", s.self_loop);
  read_field(kv, "speaker_shift", s.speaker_shift);
  read_field(kv, "adapt_speaker_shift", s.adapt_speaker_shift);
  read_field(kv, "seed", s.seed);
  s.validate();
  return s;
}

EmissionModel make_emission_model(const CorpusSpec& spec) {
  spec.validate();
  const std::size_t K = spec.num_states;
  const std::size_t D = spec.feature_dim;
  EmissionModel m{Matrix(K, D), Matrix(K, D), Matrix(K, K)};
  Rng mean_rng(spec.seed, "corpus/means");
  Rng sd_rng(spec.seed, "corpus/stddevs");
  for (Real& v : m.means.data()) v = spec.mean_scale * mean_rng.normal();
  for (Real& v : m.stddevs.data()) v = spec.emission_stddev * (1.0 + spec.stddev_jitter * sd_rng.uniform(-1.0, 1.0));
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = 0; j < K; ++j) {
      if (K == 1) {
        m.transitions(i, j) = 1.0;
      } else {
        m.transitions(i, j) = i == j ? spec.self_loop : (1.0 - spec.self_loop) / static_cast<Real>(K - 1);
      }
    }
  }
  return m;
}

SpeakerTransform make_speaker_transform(const CorpusSpec& spec, int speaker, Real shift) {
  const std::size_t D = spec.feature_dim;
  SpeakerTransform t{Matrix(D, D), Vector(D, 0.0), shift == 0.0};
  Rng rng(spec.seed, "corpus/speaker-" + std::to_string(speaker));
  const Real norm = 1.0 / std::sqrt(static_cast<Real>(D));
  for (std::size_t i = 0; i < D; ++i) {
    for (std::size_t j = 0; j < D; ++j) t.scale(i, j) = (i == j ? 1.0 : 0.0) + shift * norm * rng.normal();
  }
  for (Real& b : t.offset) b = shift * rng.normal();
  return t;
}

namespace {

Utterance sample_utterance(const CorpusSpec& spec, const EmissionModel& em, const SpeakerTransform& xf,
                           int speaker, const std::string& id) {
  const std::size_t T = spec.frames_per_utterance;
  const std::size_t D = spec.feature_dim;
  const std::size_t K = spec.num_states;
  Rng rng(spec.seed, "corpus/utt/" + id);
  Utterance u{id, speaker, Matrix(T, D), ReferenceAlignment(T), std::nullopt};
  std::size_t state = static_cast<std::size_t>(rng.below(K));
  Vector raw(D);
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) {
      Real r = rng.uniform();
      std::size_t next = K - 1;
      for (std::size_t j = 0; j < K; ++j) {
        r -= em.transitions(state, j);
        if (r < 0.0) {
          next = j;
          break;
        }
      }
      state = next;
    }
    u.alignment[t] = static_cast<int>(state);
    for (std::size_t d = 0; d < D; ++d) {
      const Real noise = em.stddevs(state, d) == 0.0 ? 0.0 : em.stddevs(state, d) * rng.normal();
      raw[d] = em.means(state, d) + noise;
    }
    auto out = u.features.row(t);
    if (xf.identity) {
      std::copy(raw.begin(), raw.end(), out.begin());
      continue;
    }
    for (std::size_t i = 0; i < D; ++i) {
      Real acc = xf.offset[i];
      for (std::size_t j = 0; j < D; ++j) acc += xf.scale(i, j) * raw[j];
      out[i] = acc;
    }
  }
  return u;
}

std::string utt_id(const char* split, int speaker, std::size_t index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-spk%02d-utt%03zu", split, speaker, index);
  return buf;
}

}  // namespace

Corpus gen_corpus(const CorpusSpec& spec) {
  const EmissionModel em = make_emission_model(spec);
  Corpus c;
  for (std::size_t s = 0; s < spec.num_speakers; ++s) {
    const int spk = static_cast<int>(s);
    const SpeakerTransform xf = make_speaker_transform(spec, spk, spec.speaker_shift);
    for (std::size_t i = 0; i < spec.utterances_per_speaker; ++i) {
      c.train.push_back(sample_utterance(spec, em, xf, spk, utt_id("train", spk, i)));
    }
    for (std::size_t i = 0; i < spec.cv_utterances_per_speaker; ++i) {
      c.cv.push_back(sample_utterance(spec, em, xf, spk, utt_id("cv", spk, i)));
    }
  }
  for (std::size_t s = 0; s < spec.adapt_speakers; ++s) {
    const int spk = static_cast<int>(spec.num_speakers + s);
    const SpeakerTransform xf = make_speaker_transform(spec, spk, spec.adapt_speaker_shift);
    for (std::size_t i = 0; i < spec.adapt_utterances_per_speaker; ++i) {
      c.adapt.push_back(sample_utterance(spec, em, xf, spk, utt_id("adapt", spk, i)));
    }
  }
  return c;
}

Matrix splice(const Matrix& features, std::size_t context) {
  const std::size_t T = features.rows();
  const std::size_t D = features.cols();
  const std::size_t width = 2 * context + 1;
  Matrix out(T, D * width);
  for (std::size_t t = 0; t < T; ++t) {
    auto dst = out.row(t);
    for (std::size_t w = 0; w < width; ++w) {
      const auto offset = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(w) -
                          static_cast<std::ptrdiff_t>(context);
      const auto src_t = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(offset, 0, static_cast<std::ptrdiff_t>(T) - 1));
      auto src = features.row(src_t);
      std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(w * D));
    }
  }
  return out;
}

FrameSet to_frame_set(const std::vector<Utterance>& utterances, std::size_t context) {
  std::size_t frames = 0;
  std::size_t dim = 0;
  for (const auto& u : utterances) {
    frames += u.features.rows();
    dim = u.features.cols() * (2 * context + 1);
  }
  FrameSet fs{Matrix(frames, dim), {}};
  fs.labels.reserve(frames);
  std::size_t row = 0;
  for (const auto& u : utterances) {
    require(u.features.cols() * (2 * context + 1) == dim, ErrorKind::kShape, "utterances differ in feature dim");
    const Matrix s = splice(u.features, context);
    std::copy(s.data().begin(), s.data().end(), fs.features.data().begin() + static_cast<std::ptrdiff_t>(row * dim));
    row += s.rows();
    fs.labels.insert(fs.labels.end(), u.alignment.begin(), u.alignment.end());
  }
  return fs;
}

std::vector<SequenceUtterance> to_sequence_set(const std::vector<Utterance>& utterances, std::size_t context) {
  std::vector<SequenceUtterance> out;
  for (const auto& u : utterances) {
    require(u.lattice.has_value(), ErrorKind::kInvalidArgument, "utterance " + u.id + " has no lattice");
    out.push_back({splice(u.features, context), u.alignment, *u.lattice});
  }
  return out;
}

Lattice build_lattice(std::span<const int> reference, std::size_t num_states, std::size_t branch_factor, Rng& rng,
                      Real max_graph_penalty) {
  require(branch_factor >= 1, ErrorKind::kInvalidArgument, "branch factor must be >= 1");
  require(branch_factor <= num_states, ErrorKind::kInvalidArgument, "branch factor exceeds number of states");
  require(!reference.empty(), ErrorKind::kInvalidArgument, "empty reference alignment");
  Lattice lat;
  lat.num_frames = reference.size();
  lat.num_nodes = reference.size() + 1;
  std::vector<int> candidates;
  for (std::size_t t = 0; t < reference.size(); ++t) {
    require(reference[t] >= 0 && static_cast<std::size_t>(reference[t]) < num_states, ErrorKind::kInvalidArgument,
            "reference state out of range");
    candidates.clear();
    for (std::size_t j = 0; j < num_states; ++j) {
      if (static_cast<int>(j) != reference[t]) candidates.push_back(static_cast<int>(j));
    }
    shuffle(candidates, rng);
    std::vector<int> states{reference[t]};
    states.insert(states.end(), candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(branch_factor - 1));
    for (int s : states) {
      const Real w = max_graph_penalty > 0.0 ? -rng.uniform(0.0, max_graph_penalty) : 0.0;
      lat.arcs.push_back({t, t + 1, t, s, w});
    }
  }
  return lat;
}

std::vector<int> nearest_mean_labels(const Matrix& raw_features, const Matrix& means) {
  require(raw_features.cols() == means.cols(), ErrorKind::kShape, "feature dim != mean dim");
  std::vector<int> out(raw_features.rows());
  for (std::size_t t = 0; t < raw_features.rows(); ++t) {
    Real best = std::numeric_limits<Real>::infinity();
    for (std::size_t k = 0; k < means.rows(); ++k) {
      Real d = 0.0;
      for (std::size_t j = 0; j < means.cols(); ++j) {
        const Real diff = raw_features(t, j) - means(k, j);
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        out[t] = static_cast<int>(k);
      }
    }
  }
  return out;
}

}  // namespace hdnn
