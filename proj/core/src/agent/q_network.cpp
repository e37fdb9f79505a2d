#include "planeloc/agent/q_network.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "planeloc/error.hpp"

namespace planeloc::agent {

using nn::LayerSpec;
using nn::Tensor;

QNetworkSpec QNetworkSpec::make(std::span<const int> trunk_channels, std::span<const int> head_widths) {
  QNetworkSpec s;
  for (int c : trunk_channels) {
    s.trunk.layers.push_back(LayerSpec::conv2d(c, 3, 2));
    s.trunk.layers.push_back(LayerSpec::batch_norm());
    s.trunk.layers.push_back(LayerSpec::relu());
  }
  s.trunk.layers.push_back(LayerSpec::global_avg_pool());
  for (int w : head_widths) {
    s.value_head.layers.push_back(LayerSpec::linear(w));
    s.value_head.layers.push_back(LayerSpec::relu());
  }
  s.advantage_head = s.value_head;
  s.value_head.layers.push_back(LayerSpec::linear(1));
  s.advantage_head.layers.push_back(LayerSpec::linear(PlaneAction::kCount));
  return s;
}

QNetworkSpec QNetworkSpec::desk() {
  constexpr int channels[] = {16, 32, 64, 64};
  constexpr int heads[] = {64, 32};
  return make(channels, heads);
}

QNetworkSpec QNetworkSpec::wide() {
  constexpr int channels[] = {16, 32, 64, 64};
  constexpr int heads[] = {512, 128};
  return make(channels, heads);
}

std::string to_json(const QNetworkSpec& spec) {
  nlohmann::json j;
  j["trunk"] = nlohmann::json::parse(nn::to_json(spec.trunk));
  j["value_head"] = nlohmann::json::parse(nn::to_json(spec.value_head));
  j["advantage_head"] = nlohmann::json::parse(nn::to_json(spec.advantage_head));
  return j.dump();
}

QNetworkSpec q_network_spec_from_json(const std::string& text) {
  QNetworkSpec s;
  try {
    const auto j = nlohmann::json::parse(text);
    s.trunk = nn::network_spec_from_json(j.at("trunk").dump());
    s.value_head = nn::network_spec_from_json(j.at("value_head").dump());
    s.advantage_head = nn::network_spec_from_json(j.at("advantage_head").dump());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidSpec, std::string("malformed q-network spec: ") + e.what());
  }
  return s;
}

QNetwork::QNetwork(QNetworkSpec spec, int state_size, std::uint64_t seed)
    : spec_(std::move(spec)), state_size_(state_size) {
  trunk_ = nn::Network(spec_.trunk, {3, state_size, state_size}, seed);
  value_ = nn::Network(spec_.value_head, trunk_.output_shape(), seed + 1);
  advantage_ = nn::Network(spec_.advantage_head, trunk_.output_shape(), seed + 2);
  if (value_.output_shape() != nn::Shape{1} ||
      advantage_.output_shape() != nn::Shape{PlaneAction::kCount}) {
    fail(ErrorKind::InvalidSpec, "q-network heads must end in 1 and 8 outputs");
  }
}

Tensor dueling_combine(const Tensor& value, const Tensor& advantage) {
  constexpr int A = PlaneAction::kCount;
  const int batch = advantage.dim(0);
  if (value.shape() != nn::Shape{batch, 1} || advantage.shape() != nn::Shape{batch, A}) {
    fail(ErrorKind::ShapeMismatch, "dueling heads have inconsistent shapes");
  }
  Tensor q({batch, A});
  for (int b = 0; b < batch; ++b) {
    const double* a = advantage.data() + static_cast<std::size_t>(b) * A;
    double mean = 0.0;
    for (int k = 0; k < A; ++k) mean += a[k];
    mean /= A;
    for (int k = 0; k < A; ++k) q[static_cast<std::size_t>(b) * A + k] = value[b] + a[k] - mean;
  }
  return q;
}

QNetwork::Output QNetwork::forward(const Tensor& states, nn::Mode mode) {
  const Tensor features = trunk_.forward(states, mode);
  Output out;
  out.value = value_.forward(features, mode);
  out.advantage = advantage_.forward(features, mode);
  out.q = dueling_combine(out.value, out.advantage);
  return out;
}

void QNetwork::backward(const Tensor& dq) {
  constexpr int A = PlaneAction::kCount;
  const int batch = dq.dim(0);
  Tensor dv({batch, 1});
  Tensor da({batch, A});
  for (int b = 0; b < batch; ++b) {
    const double* g = dq.data() + static_cast<std::size_t>(b) * A;
    double sum = 0.0;
    for (int k = 0; k < A; ++k) sum += g[k];
    dv[b] = sum;
    for (int k = 0; k < A; ++k) da[static_cast<std::size_t>(b) * A + k] = g[k] - sum / A;
  }
  Tensor df = value_.backward(dv);
  const Tensor df_adv = advantage_.backward(da);
  for (std::size_t i = 0; i < df.size(); ++i) df[i] += df_adv[i];
  trunk_.backward(df);
}

QVector QNetwork::q_values(const AgentState& s) {
  const AgentState* one[] = {&s};
  const Tensor q = forward(stack_states(one), nn::Mode::Infer).q;
  QVector out{};
  std::copy(q.data(), q.data() + PlaneAction::kCount, out.begin());
  return out;
}

std::vector<nn::Parameter*> QNetwork::parameters() {
  auto out = trunk_.parameters();
  for (auto* p : value_.parameters()) out.push_back(p);
  for (auto* p : advantage_.parameters()) out.push_back(p);
  return out;
}

nn::NamedTensors QNetwork::state_tensors() {
  nn::NamedTensors out;
  for (auto [name, t] : trunk_.state_tensors()) out.emplace_back("trunk." + name, t);
  for (auto [name, t] : value_.state_tensors()) out.emplace_back("value." + name, t);
  for (auto [name, t] : advantage_.state_tensors()) out.emplace_back("advantage." + name, t);
  return out;
}

void QNetwork::zero_grad() {
  trunk_.zero_grad();
  value_.zero_grad();
  advantage_.zero_grad();
}

void QNetwork::copy_state_from(const QNetwork& other) {
  if (other.describe_json() != describe_json()) {
    fail(ErrorKind::SpecMismatch, "q-networks differ in spec or state size");
  }
  trunk_.copy_state_from(other.trunk_);
  value_.copy_state_from(other.value_);
  advantage_.copy_state_from(other.advantage_);
}

std::string QNetwork::describe_json() const {
  nlohmann::json j = nlohmann::json::parse(to_json(spec_));
  j["state_size"] = state_size_;
  return j.dump();
}

Tensor stack_states(std::span<const AgentState* const> states) {
  if (states.empty()) fail(ErrorKind::EmptyBatch, "no states to stack");
  const int s = states.front()->size();
  const std::size_t plane = static_cast<std::size_t>(s) * s;
  Tensor out({static_cast<int>(states.size()), 3, s, s});
  double* dst = out.data();
  for (const AgentState* st : states) {
    if (st->size() != s) fail(ErrorKind::SizeMismatch, "states of different slice sizes");
    for (const auto& ch : st->channels) {
      std::copy(ch->pixels.begin(), ch->pixels.end(), dst);
      dst += plane;
    }
  }
  return out;
}

int greedy_action(const QVector& q) {
  return static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin());
}

double EpsilonSchedule::greedy_probability(std::int64_t iteration) const {
  const auto k = static_cast<double>(std::max<std::int64_t>(iteration, 0) / std::max<std::int64_t>(interval, 1));
  return std::min(cap, start * std::pow(growth, k));
}

PlaneAction select_action(const QVector& q, double greedy_p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < greedy_p) return PlaneAction(greedy_action(q));
  std::uniform_int_distribution<int> pick(0, PlaneAction::kCount - 1);
  return PlaneAction(pick(rng));
}

void sync_target(const QNetwork& online, QNetwork& target) { target.copy_state_from(online); }

}  // namespace planeloc::agent
