#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hdnn/numerics.hpp"

namespace hdnn {

enum class Architecture { kPlain, kHighway };

const char* to_string(Architecture arch);
Architecture parse_architecture(std::string_view text);

struct NetworkConfig {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  // Total hidden layers including the input projection (layer 1).
  std::size_t num_hidden_layers = 0;
  std::size_t output_dim = 0;
  Architecture architecture = Architecture::kHighway;

  void validate() const;
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

// Mutable view of one named parameter tensor. Biases are 1 x n.
struct TensorRef {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::span<Real> values;
  bool is_gate = false;
};

struct ConstTensorRef {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::span<const Real> values;
  bool is_gate = false;
};

// Every trainable tensor of a network. Also used for gradients and momentum
// buffers, so the three are shape-congruent by construction.
struct ParameterSet {
  std::vector<Matrix> hidden_weights;  // [0]: H x input_dim, [l>0]: H x H
  std::vector<Vector> hidden_biases;   // L vectors of length H
  std::optional<Matrix> transform_gate;  // H x H, highway only, shared by layers 2..L
  std::optional<Matrix> carry_gate;      // H x H, highway only, shared by layers 2..L
  Matrix output_weight;                // output_dim x H
  Vector output_bias;                  // output_dim

  // Stable order: hidden.1.weight, hidden.1.bias, ..., gate.transform,
  // gate.carry, output.weight, output.bias.
  std::vector<TensorRef> tensors();
  std::vector<ConstTensorRef> tensors() const;

  ParameterSet zeros_like() const;
  std::size_t count() const;
  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;
};

// Hidden layer l as seen by the forward pass. For highway networks the gate
// pointers of layers 2..L all alias the single tied gate matrices.
struct HiddenLayerView {
  Matrix& weight;
  Vector& bias;
  Matrix* transform_gate = nullptr;
  Matrix* carry_gate = nullptr;
};

class Network {
 public:
  Network(NetworkConfig config, ParameterSet params);

  const NetworkConfig& config() const noexcept { return config_; }
  bool is_highway() const noexcept { return config_.architecture == Architecture::kHighway; }

  ParameterSet& params() noexcept { return params_; }
  const ParameterSet& params() const noexcept { return params_; }

  // l is zero-based: layer(0) is the input projection.
  HiddenLayerView layer(std::size_t l);

  friend bool operator==(const Network&, const Network&) = default;

 private:
  NetworkConfig config_;
  ParameterSet params_;
};

using GradientSet = ParameterSet;

// Weights uniform in [-0.5, 0.5), biases zero. Each tensor draws from its own
// named stream so adding a layer leaves earlier layers' draws untouched.
Network build_network(const NetworkConfig& config, std::uint64_t seed, Real init_range = 0.5);

struct ForwardTrace {
  Matrix input;
  std::vector<Matrix> pre_activations;  // W_l h_{l-1} + b_l per layer
  std::vector<Matrix> hidden;           // h_l per layer
  std::vector<Matrix> transform_gate;   // T(h_{l-1}); empty matrix for layer 1 and plain nets
  std::vector<Matrix> carry_gate;       // C(h_{l-1}); same convention
  Matrix logits;
  Matrix posteriors;
  Real temperature = 1.0;

  std::size_t frames() const noexcept { return input.rows(); }
};

ForwardTrace forward(const Network& net, const Matrix& features, Real temperature = 1.0);

// Per-layer stacked matrices [W_l; W_T; W_c] (3H x H). Layer 1 has an
// H x input_dim weight and cannot be stacked with the H x H gates, so it stays
// unpacked (nullopt).
struct PackedGates {
  std::vector<std::optional<Matrix>> layers;
  std::size_t hidden_dim = 0;

  bool is_packed(std::size_t l) const { return l < layers.size() && layers[l].has_value(); }
};

PackedGates pack_gates(const Network& net);
ForwardTrace forward_packed(const Network& net, const PackedGates& packed, const Matrix& features,
                            Real temperature = 1.0);

// Reverse-mode gradients of the forward map given dLoss/dlogits. Gate
// gradients are the in-order sum of the per-layer contributions 2..L.
GradientSet backward(const Network& net, const ForwardTrace& trace, const Matrix& dlogits);

std::size_t count_params(const NetworkConfig& config);
std::size_t count_gate_params(const NetworkConfig& config);

struct ParamPartition {
  std::vector<TensorRef> gates;
  std::vector<TensorRef> rest;

  std::size_t gate_count() const;
  std::size_t rest_count() const;
};

ParamPartition param_partition(Network& net);

// Frame error of argmax(posteriors) against labels.
Real frame_error(const Matrix& posteriors, std::span<const int> labels);

}  // namespace hdnn
