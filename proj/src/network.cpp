#include "hdnn/network.hpp"

#include <cmath>

namespace hdnn {

const char* to_string(Architecture arch) { return arch == Architecture::kPlain ? "plain" : "highway"; }

Architecture parse_architecture(std::string_view text) {
  if (text == "plain") return Architecture::kPlain;
  if (text == "highway") return Architecture::kHighway;
  fail(ErrorKind::kInvalidArgument, "unknown architecture '" + std::string(text) + "'");
}

void NetworkConfig::validate() const {
  require(input_dim >= 1 && hidden_dim >= 1 && num_hidden_layers >= 1 && output_dim >= 1,
          ErrorKind::kInvalidArgument, "network dimensions must all be >= 1");
}

namespace {

std::string layer_name(std::size_t l, const char* what) {
  return "hidden." + std::to_string(l + 1) + "." + what;
}

template <typename Ref, typename Set>
std::vector<Ref> collect(Set& set) {
  std::vector<Ref> out;
  for (std::size_t l = 0; l < set.hidden_weights.size(); ++l) {
    auto& w = set.hidden_weights[l];
    out.push_back({layer_name(l, "weight"), w.rows(), w.cols(), w.data(), false});
    auto& b = set.hidden_biases[l];
    out.push_back({layer_name(l, "bias"), 1, b.size(), b, false});
  }
  if (set.transform_gate) {
    auto& g = *set.transform_gate;
    out.push_back({"gate.transform", g.rows(), g.cols(), g.data(), true});
  }
  if (set.carry_gate) {
    auto& g = *set.carry_gate;
    out.push_back({"gate.carry", g.rows(), g.cols(), g.data(), true});
  }
  out.push_back({"output.weight", set.output_weight.rows(), set.output_weight.cols(), set.output_weight.data(), false});
  out.push_back({"output.bias", 1, set.output_bias.size(), set.output_bias, false});
  return out;
}

}  // namespace

std::vector<TensorRef> ParameterSet::tensors() { return collect<TensorRef>(*this); }
std::vector<ConstTensorRef> ParameterSet::tensors() const { return collect<ConstTensorRef>(*this); }

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet z;
  for (const auto& w : hidden_weights) z.hidden_weights.emplace_back(w.rows(), w.cols());
  for (const auto& b : hidden_biases) z.hidden_biases.emplace_back(b.size(), 0.0);
  if (transform_gate) z.transform_gate.emplace(transform_gate->rows(), transform_gate->cols());
  if (carry_gate) z.carry_gate.emplace(carry_gate->rows(), carry_gate->cols());
  z.output_weight = Matrix(output_weight.rows(), output_weight.cols());
  z.output_bias.assign(output_bias.size(), 0.0);
  return z;
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += t.values.size();
  return n;
}

Network::Network(NetworkConfig config, ParameterSet params) : config_(config), params_(std::move(params)) {
  config_.validate();
  const std::size_t H = config_.hidden_dim;
  const std::size_t L = config_.num_hidden_layers;
  auto shape_ok = [](const Matrix& m, std::size_t r, std::size_t c) { return m.rows() == r && m.cols() == c; };
  require(params_.hidden_weights.size() == L && params_.hidden_biases.size() == L, ErrorKind::kShape,
          "network: layer count does not match config");
  for (std::size_t l = 0; l < L; ++l) {
    require(shape_ok(params_.hidden_weights[l], H, l == 0 ? config_.input_dim : H), ErrorKind::kShape,
            "network: bad shape for " + layer_name(l, "weight"));
    require(params_.hidden_biases[l].size() == H, ErrorKind::kShape, "network: bad shape for " + layer_name(l, "bias"));
  }
  const bool gates = params_.transform_gate.has_value() && params_.carry_gate.has_value();
  const bool any_gate = params_.transform_gate.has_value() || params_.carry_gate.has_value();
  require(is_highway() ? gates : !any_gate, ErrorKind::kInvalidArchitecture,
          "gate matrices must be present iff architecture is highway");
  if (gates) {
    require(shape_ok(*params_.transform_gate, H, H) && shape_ok(*params_.carry_gate, H, H), ErrorKind::kShape,
            "network: gate matrices must be H x H");
  }
  require(shape_ok(params_.output_weight, config_.output_dim, H) && params_.output_bias.size() == config_.output_dim,
          ErrorKind::kShape, "network: bad output layer shape");
}

HiddenLayerView Network::layer(std::size_t l) {
  require(l < config_.num_hidden_layers, ErrorKind::kInvalidArgument, "layer index out of range");
  HiddenLayerView view{params_.hidden_weights[l], params_.hidden_biases[l]};
  if (is_highway() && l > 0) {
    view.transform_gate = &*params_.transform_gate;
    view.carry_gate = &*params_.carry_gate;
  }
  return view;
}

Network build_network(const NetworkConfig& config, std::uint64_t seed, Real init_range) {
  config.validate();
  const std::size_t H = config.hidden_dim;
  ParameterSet p;
  for (std::size_t l = 0; l < config.num_hidden_layers; ++l) {
    Rng rng(seed, layer_name(l, "weight"));
    p.hidden_weights.push_back(uniform_init(H, l == 0 ? config.input_dim : H, -init_range, init_range, rng));
    p.hidden_biases.emplace_back(H, 0.0);
  }
  if (config.architecture == Architecture::kHighway) {
    Rng t(seed, "gate.transform");
    Rng c(seed, "gate.carry");
    p.transform_gate = uniform_init(H, H, -init_range, init_range, t);
    p.carry_gate = uniform_init(H, H, -init_range, init_range, c);
  }
  Rng out(seed, "output.weight");
  p.output_weight = uniform_init(config.output_dim, H, -init_range, init_range, out);
  p.output_bias.assign(config.output_dim, 0.0);
  return Network(config, std::move(p));
}

namespace {

void check_features(const Network& net, const Matrix& features) {
  require(features.cols() == net.config().input_dim, ErrorKind::kShape,
          "forward: feature dim " + std::to_string(features.cols()) + " != input_dim " +
              std::to_string(net.config().input_dim));
}

Matrix sigmoid_of(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = sigmoid(m.data()[i]);
  return out;
}

// h_l = sigma(a) * T + h_prev * C
Matrix highway_combine(const Matrix& pre, const Matrix& gate_t, const Matrix& gate_c, const Matrix& prev) {
  Matrix h(pre.rows(), pre.cols());
  for (std::size_t i = 0; i < h.size(); ++i) {
    h.data()[i] = sigmoid(pre.data()[i]) * gate_t.data()[i] + prev.data()[i] * gate_c.data()[i];
  }
  return h;
}

void finish_output(const Network& net, ForwardTrace& trace) {
  const auto& p = net.params();
  trace.logits = matmul_transposed(trace.hidden.back(), p.output_weight, p.output_bias);
  trace.posteriors = softmax_rows(trace.logits, trace.temperature);
}

ForwardTrace start_trace(const Network& net, const Matrix& features, Real temperature) {
  check_features(net, features);
  require(temperature > 0.0, ErrorKind::kInvalidArgument, "temperature must be positive");
  ForwardTrace trace;
  trace.input = features;
  trace.temperature = temperature;
  const auto& p = net.params();
  Matrix pre = matmul_transposed(features, p.hidden_weights[0], p.hidden_biases[0]);
  trace.hidden.push_back(sigmoid_of(pre));
  trace.pre_activations.push_back(std::move(pre));
  trace.transform_gate.emplace_back();
  trace.carry_gate.emplace_back();
  return trace;
}

}  // namespace

ForwardTrace forward(const Network& net, const Matrix& features, Real temperature) {
  ForwardTrace trace = start_trace(net, features, temperature);
  const auto& p = net.params();
  for (std::size_t l = 1; l < net.config().num_hidden_layers; ++l) {
    const Matrix& prev = trace.hidden.back();
    Matrix pre = matmul_transposed(prev, p.hidden_weights[l], p.hidden_biases[l]);
    if (net.is_highway()) {
      Matrix gt = sigmoid_of(matmul_transposed(prev, *p.transform_gate));
      Matrix gc = sigmoid_of(matmul_transposed(prev, *p.carry_gate));
      trace.hidden.push_back(highway_combine(pre, gt, gc, prev));
      trace.transform_gate.push_back(std::move(gt));
      trace.carry_gate.push_back(std::move(gc));
    } else {
      trace.hidden.push_back(sigmoid_of(pre));
      trace.transform_gate.emplace_back();
      trace.carry_gate.emplace_back();
    }
    trace.pre_activations.push_back(std::move(pre));
  }
  finish_output(net, trace);
  return trace;
}

PackedGates pack_gates(const Network& net) {
  require(net.is_highway(), ErrorKind::kInvalidArchitecture, "pack_gates requires a highway network");
  const std::size_t H = net.config().hidden_dim;
  const auto& p = net.params();
  PackedGates packed;
  packed.hidden_dim = H;
  packed.layers.emplace_back(std::nullopt);
  for (std::size_t l = 1; l < net.config().num_hidden_layers; ++l) {
    Matrix stacked(3 * H, H);
    auto& dst = stacked.data();
    const auto& w = p.hidden_weights[l].data();
    const auto& t = p.transform_gate->data();
    const auto& c = p.carry_gate->data();
    std::copy(w.begin(), w.end(), dst.begin());
    std::copy(t.begin(), t.end(), dst.begin() + static_cast<std::ptrdiff_t>(H * H));
    std::copy(c.begin(), c.end(), dst.begin() + static_cast<std::ptrdiff_t>(2 * H * H));
    packed.layers.emplace_back(std::move(stacked));
  }
  return packed;
}

ForwardTrace forward_packed(const Network& net, const PackedGates& packed, const Matrix& features,
                            Real temperature) {
  require(net.is_highway(), ErrorKind::kInvalidArchitecture, "forward_packed requires a highway network");
  const std::size_t H = net.config().hidden_dim;
  const std::size_t L = net.config().num_hidden_layers;
  require(packed.hidden_dim == H && packed.layers.size() == L, ErrorKind::kShape,
          "packed gates do not match network");
  ForwardTrace trace = start_trace(net, features, temperature);
  const auto& p = net.params();
  for (std::size_t l = 1; l < L; ++l) {
    require(packed.is_packed(l), ErrorKind::kShape, "layer " + std::to_string(l + 1) + " is not packed");
    const Matrix& prev = trace.hidden.back();
    // One fused multiply yields [W_l h; W_T h; W_c h] per frame.
    const Matrix fused = matmul_transposed(prev, *packed.layers[l]);
    const std::size_t N = prev.rows();
    Matrix pre(N, H), gt(N, H), gc(N, H);
    const auto& bias = p.hidden_biases[l];
    for (std::size_t n = 0; n < N; ++n) {
      auto f = fused.row(n);
      for (std::size_t j = 0; j < H; ++j) {
        pre(n, j) = f[j] + bias[j];
        gt(n, j) = sigmoid(f[H + j]);
        gc(n, j) = sigmoid(f[2 * H + j]);
      }
    }
    trace.hidden.push_back(highway_combine(pre, gt, gc, prev));
    trace.pre_activations.push_back(std::move(pre));
    trace.transform_gate.push_back(std::move(gt));
    trace.carry_gate.push_back(std::move(gc));
  }
  finish_output(net, trace);
  return trace;
}

GradientSet backward(const Network& net, const ForwardTrace& trace, const Matrix& dlogits) {
  const auto& cfg = net.config();
  const auto& p = net.params();
  const std::size_t L = cfg.num_hidden_layers;
  const std::size_t N = trace.frames();
  require(trace.hidden.size() == L && trace.pre_activations.size() == L, ErrorKind::kShape,
          "backward: trace does not belong to this network");
  require(trace.input.cols() == cfg.input_dim && trace.hidden.back().cols() == cfg.hidden_dim, ErrorKind::kShape,
          "backward: trace does not belong to this network");
  require(dlogits.rows() == N && dlogits.cols() == cfg.output_dim, ErrorKind::kShape,
          "backward: dlogits shape does not match trace");

  GradientSet g = p.zeros_like();
  accumulate_transposed_product(dlogits, trace.hidden.back(), g.output_weight);
  accumulate_column_sums(dlogits, g.output_bias);
  Matrix dh = matmul(dlogits, p.output_weight);

  std::vector<Matrix> gate_t_parts(L), gate_c_parts(L);
  for (std::size_t l = L; l-- > 0;) {
    const Matrix& prev = l == 0 ? trace.input : trace.hidden[l - 1];
    const Matrix& pre = trace.pre_activations[l];
    Matrix da(N, cfg.hidden_dim);
    const bool gated = net.is_highway() && l > 0;
    if (!gated) {
      for (std::size_t i = 0; i < da.size(); ++i) {
        const Real s = sigmoid(pre.data()[i]);
        da.data()[i] = dh.data()[i] * s * (1.0 - s);
      }
      accumulate_transposed_product(da, prev, g.hidden_weights[l]);
      accumulate_column_sums(da, g.hidden_biases[l]);
      if (l > 0) dh = matmul(da, p.hidden_weights[l]);
      continue;
    }
    const Matrix& gt = trace.transform_gate[l];
    const Matrix& gc = trace.carry_gate[l];
    Matrix dpre_t(N, cfg.hidden_dim), dpre_c(N, cfg.hidden_dim);
    Matrix dprev(N, cfg.hidden_dim);
    for (std::size_t i = 0; i < da.size(); ++i) {
      const Real s = sigmoid(pre.data()[i]);
      const Real up = dh.data()[i];
      const Real t = gt.data()[i];
      const Real c = gc.data()[i];
      da.data()[i] = up * t * s * (1.0 - s);
      dpre_t.data()[i] = up * s * t * (1.0 - t);
      dpre_c.data()[i] = up * prev.data()[i] * c * (1.0 - c);
      dprev.data()[i] = up * c;
    }
    accumulate_transposed_product(da, prev, g.hidden_weights[l]);
    accumulate_column_sums(da, g.hidden_biases[l]);
    gate_t_parts[l] = Matrix(cfg.hidden_dim, cfg.hidden_dim);
    gate_c_parts[l] = Matrix(cfg.hidden_dim, cfg.hidden_dim);
    accumulate_transposed_product(dpre_t, prev, gate_t_parts[l]);
    accumulate_transposed_product(dpre_c, prev, gate_c_parts[l]);

    const Matrix via_w = matmul(da, p.hidden_weights[l]);
    const Matrix via_t = matmul(dpre_t, *p.transform_gate);
    const Matrix via_c = matmul(dpre_c, *p.carry_gate);
    for (std::size_t i = 0; i < dprev.size(); ++i) {
      dprev.data()[i] += via_w.data()[i] + via_t.data()[i] + via_c.data()[i];
    }
    dh = std::move(dprev);
  }

  if (net.is_highway()) {
    for (std::size_t l = 1; l < L; ++l) {
      auto& gt = g.transform_gate->data();
      auto& gc = g.carry_gate->data();
      for (std::size_t i = 0; i < gt.size(); ++i) {
        gt[i] += gate_t_parts[l].data()[i];
        gc[i] += gate_c_parts[l].data()[i];
      }
    }
  }
  return g;
}

std::size_t count_params(const NetworkConfig& config) {
  config.validate();
  const std::size_t H = config.hidden_dim;
  const std::size_t L = config.num_hidden_layers;
  std::size_t n = config.input_dim * H + H + (L - 1) * (H * H + H) + H * config.output_dim + config.output_dim;
  return n + count_gate_params(config);
}

std::size_t count_gate_params(const NetworkConfig& config) {
  return config.architecture == Architecture::kHighway ? 2 * config.hidden_dim * config.hidden_dim : 0;
}

std::size_t ParamPartition::gate_count() const {
  std::size_t n = 0;
  for (const auto& t : gates) n += t.values.size();
  return n;
}

std::size_t ParamPartition::rest_count() const {
  std::size_t n = 0;
  for (const auto& t : rest) n += t.values.size();
  return n;
}

ParamPartition param_partition(Network& net) {
  ParamPartition part;
  for (auto& t : net.params().tensors()) (t.is_gate ? part.gates : part.rest).push_back(std::move(t));
  return part;
}

Real frame_error(const Matrix& posteriors, std::span<const int> labels) {
  require(posteriors.rows() == labels.size(), ErrorKind::kShape, "frame_error: label count mismatch");
  if (labels.empty()) return 0.0;
  std::size_t wrong = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (static_cast<int>(argmax(posteriors.row(n))) != labels[n]) ++wrong;
  }
  return static_cast<Real>(wrong) / static_cast<Real>(labels.size());
}

}  // namespace hdnn
