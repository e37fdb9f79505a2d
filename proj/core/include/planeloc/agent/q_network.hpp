#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>

#include "planeloc/geometry.hpp"
#include "planeloc/nn/checkpoint.hpp"
#include "planeloc/nn/network.hpp"
#include "planeloc/trace.hpp"
#include "planeloc/volume.hpp"

namespace planeloc::agent {


/// Shared convolutional trunk followed by a value head (one output) and an
/// advantage head (one output per action).
struct QNetworkSpec {
  nn::NetworkSpec trunk;
  nn::NetworkSpec value_head;
  nn::NetworkSpec advantage_head;

  /// Four stride-2 conv/BN/ReLU blocks (16/32/64/64), global pooling, heads 64-32.
  static QNetworkSpec desk();
  /// Same trunk with the wide 512-128 heads.
  static QNetworkSpec wide();
  /// Arbitrary block channels and head widths; the last head layer is added.
  static QNetworkSpec make(std::span<const int> trunk_channels, std::span<const int> head_widths);

  friend bool operator==(const QNetworkSpec&, const QNetworkSpec&) = default;
};

std::string to_json(const QNetworkSpec& spec);
/// Throws InvalidSpec.
QNetworkSpec q_network_spec_from_json(const std::string& text);

/// Dueling Q-network: Q = V + A - mean(A) over a [B, 3, S, S] slice stack.
class QNetwork {
 public:
  struct Output {
    nn::Tensor q;          // [B, 8]
    nn::Tensor value;      // [B, 1]
    nn::Tensor advantage;  // [B, 8]
  };

  QNetwork() = default;
  QNetwork(QNetworkSpec spec, int state_size, std::uint64_t seed);

  int state_size() const { return state_size_; }
  const QNetworkSpec& spec() const { return spec_; }

  /// Throws ShapeMismatch.
  Output forward(const nn::Tensor& states, nn::Mode mode);
  /// Gradient of the loss with respect to q; flows through both heads.
  void backward(const nn::Tensor& dq);

  /// Inference-mode Q-values of one state.
  QVector q_values(const AgentState& s);

  std::vector<nn::Parameter*> parameters();
  nn::NamedTensors state_tensors();
  void zero_grad();
  /// Throws SpecMismatch.
  void copy_state_from(const QNetwork& other);
  std::string describe_json() const;

 private:
  QNetworkSpec spec_;
  int state_size_ = 0;
  nn::Network trunk_;
  nn::Network value_;
  nn::Network advantage_;
};

/// Packs states into a [B, 3, S, S] tensor, channels ordered (t-2, t-1, t).
/// Throws SizeMismatch when sizes differ, EmptyBatch for no states.
nn::Tensor stack_states(std::span<const AgentState* const> states);

/// Combines value [B,1] and advantage [B,8] heads into Q-values.
nn::Tensor dueling_combine(const nn::Tensor& value, const nn::Tensor& advantage);

/// Lowest index among tied maxima.
int greedy_action(const QVector& q);

/// Probability of acting greedily: start * growth^(iteration / interval), capped.
struct EpsilonSchedule {
  double start = 0.6;
  double growth = 1.01;
  std::int64_t interval = 10000;
  double cap = 0.95;

  double greedy_probability(std::int64_t iteration) const;
};

/// Greedy with probability `greedy_p`, otherwise uniform over all actions.
PlaneAction select_action(const QVector& q, double greedy_p, std::mt19937_64& rng);

/// target <- online, bit-exact. Throws SpecMismatch.
void sync_target(const QNetwork& online, QNetwork& target);

}  // namespace planeloc::agent
