#include "planeloc/termination.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "planeloc/error.hpp"
#include "planeloc/nn/checkpoint.hpp"

namespace planeloc::termination {

int optimal_step(const EpisodeTrace& trace, int upto) {
  const int n = trace.steps();
  if (n < 1 || !trace.consistent()) fail(ErrorKind::EmptyTrace, "trace has no steps to choose from");
  const int last = upto < 0 ? n : std::min(upto, n);
  if (last < 1) fail(ErrorKind::IndexOutOfRange, "optimal_step needs at least one step");
  int best = 1;
  for (int t = 2; t <= last; ++t) {
    if (trace.ang[t] + trace.dis[t] < trace.ang[best] + trace.dis[best]) best = t;
  }
  return best;
}

double adi(const EpisodeTrace& trace, int t) {
  if (t < 0 || t > trace.steps()) fail(ErrorKind::IndexOutOfRange, "adi step outside the trace");
  return (trace.ang[t] - trace.ang[0]) + (trace.dis[t] - trace.dis[0]);
}

double improvement(const EpisodeTrace& trace, int t) { return -adi(trace, t); }

std::vector<QVector> q_sequence(const EpisodeTrace& trace, int n) {
  n = std::min(n, trace.steps());
  return {trace.q.begin() + 1, trace.q.begin() + 1 + std::max(n, 0)};
}

nn::Tensor pad_sequence(std::span<const QVector> q, int max_len) {
  nn::Tensor out({max_len, PlaneAction::kCount});
  const std::size_t rows = std::min(q.size(), static_cast<std::size_t>(max_len));
  for (std::size_t t = 0; t < rows; ++t) {
    std::copy(q[t].begin(), q[t].end(), out.data() + t * PlaneAction::kCount);
  }
  return out;
}

std::vector<TerminationSample> build_training_set(std::span<const EpisodeTrace> traces, int max_len, double delta,
                                                  int samples_per_trace, std::mt19937_64& rng, bool full_only) {
  std::vector<TerminationSample> out;
  for (const EpisodeTrace& tr : traces) {
    const int n = std::min(tr.steps(), max_len);
    if (n < 1) continue;
    auto make = [&](int len) {
      const auto q = q_sequence(tr, len);
      out.push_back({pad_sequence(q, max_len), delta * optimal_step(tr, len), len});
    };
    if (full_only || n < 2) {
      make(n);
      continue;
    }
    std::uniform_int_distribution<int> pick(2, n);
    for (int s = 0; s < samples_per_trace; ++s) make(pick(rng));
  }
  return out;
}

const char* to_string(LossKind k) { return k == LossKind::Mae ? "mae" : "mse"; }

const char* to_string(Backbone b) {
  switch (b) {
    case Backbone::Mlp: return "mlp";
    case Backbone::VanillaRnn: return "vanilla_rnn";
    case Backbone::Lstm: return "lstm";
  }
  return "unknown";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "mse") return LossKind::Mse;
  if (s == "mae") return LossKind::Mae;
  fail(ErrorKind::InvalidConfig, "unknown termination loss '" + s + "'");
}

Backbone backbone_from_string(const std::string& s) {
  for (Backbone b : {Backbone::Mlp, Backbone::VanillaRnn, Backbone::Lstm}) {
    if (s == to_string(b)) return b;
  }
  fail(ErrorKind::InvalidConfig, "unknown termination backbone '" + s + "'");
}

double termination_loss(double pred, double label, LossKind kind) {
  const double d = pred - label;
  return kind == LossKind::Mae ? std::abs(d) : d * d;
}

double termination_loss_grad(double pred, double label, LossKind kind) {
  const double d = pred - label;
  if (kind == LossKind::Mae) return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
  return 2.0 * d;
}

void TerminationConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) fail(ErrorKind::InvalidConfig, std::string("termination config: ") + what);
  };
  require(hidden > 0 && layers > 0, "hidden units and layers must be positive");
  require(epochs >= 0 && batch_size > 0, "epochs and batch size");
  require(learning_rate > 0.0, "learning rate must be positive");
  require(delta > 0.0, "delta must be positive");
  require(max_len > 0, "max_len must be positive");
  require(samples_per_trace > 0, "samples_per_trace must be positive");
}

nn::NetworkSpec TerminationModel::spec_for(const TerminationConfig& cfg) {
  nn::NetworkSpec s;
  using nn::LayerSpec;
  if (cfg.backbone == Backbone::Mlp) {
    for (int l = 0; l < cfg.layers; ++l) {
      s.layers.push_back(LayerSpec::linear(cfg.hidden));
      s.layers.push_back(LayerSpec::relu());
    }
  } else {
    const auto cell = cfg.backbone == Backbone::Lstm ? nn::CellKind::Lstm : nn::CellKind::Vanilla;
    s.layers.push_back(LayerSpec::recurrent(cell, cfg.hidden, cfg.layers));
  }
  s.layers.push_back(LayerSpec::linear(1));
  return s;
}

TerminationModel::TerminationModel(const TerminationConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed), net_(spec_for(cfg), {cfg.max_len, PlaneAction::kCount}, seed) {
  cfg_.validate();
}

double TerminationModel::predict(const nn::Tensor& padded) {
  return net_.forward(padded.reshaped({1, cfg_.max_len, PlaneAction::kCount}), nn::Mode::Infer)[0];
}

namespace {

nn::Tensor batch_inputs(std::span<const TerminationSample> samples, std::span<const std::size_t> idx, int max_len) {
  const std::size_t per = static_cast<std::size_t>(max_len) * PlaneAction::kCount;
  nn::Tensor x({static_cast<int>(idx.size()), max_len, PlaneAction::kCount});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& in = samples[idx[b]].input;
    std::copy(in.data(), in.data() + per, x.data() + b * per);
  }
  return x;
}

}  // namespace

std::vector<double> TerminationModel::predict(std::span<const TerminationSample> samples) {
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> out;
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(cfg_.batch_size)) {
    const std::size_t end = std::min(idx.size(), start + static_cast<std::size_t>(cfg_.batch_size));
    const std::span<const std::size_t> chunk(idx.data() + start, end - start);
    const nn::Tensor y = net_.forward(batch_inputs(samples, chunk, cfg_.max_len), nn::Mode::Infer);
    out.insert(out.end(), y.values().begin(), y.values().end());
  }
  return out;
}

double TerminationModel::mean_loss(std::span<const TerminationSample> samples) {
  if (samples.empty()) return 0.0;
  const auto pred = predict(samples);
  double sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) sum += termination_loss(pred[i], samples[i].label, cfg_.loss);
  return sum / static_cast<double>(samples.size());
}

std::vector<double> TerminationModel::train(std::span<const TerminationSample> samples,
                                            const std::function<void(int, double)>& on_epoch) {
  if (samples.empty()) fail(ErrorKind::EmptyBatch, "termination training needs samples");
  nn::OptimizerConfig oc;
  oc.kind = cfg_.optimizer;
  oc.learning_rate = cfg_.learning_rate;
  oc.momentum = cfg_.momentum;
  nn::Optimizer opt(oc, net_.parameters());
  std::mt19937_64 rng(seed_ ^ 0x2545f4914f6cdd1dULL);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> curve;
  for (int e = 0; e < cfg_.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg_.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg_.batch_size));
      const std::span<const std::size_t> chunk(order.data() + start, end - start);
      net_.zero_grad();
      const nn::Tensor y = net_.forward(batch_inputs(samples, chunk, cfg_.max_len), nn::Mode::Train);
      nn::Tensor dy(y.shape());
      const double n = static_cast<double>(chunk.size());
      for (std::size_t b = 0; b < chunk.size(); ++b) {
        const double label = samples[chunk[b]].label;
        total += termination_loss(y[b], label, cfg_.loss);
        dy[b] = termination_loss_grad(y[b], label, cfg_.loss) / n;
      }
      net_.backward(dy);
      opt.step();
    }
    curve.push_back(total / static_cast<double>(samples.size()));
    if (on_epoch) on_epoch(e + 1, curve.back());
  }
  return curve;
}

void TerminationModel::save(const std::filesystem::path& path) { nn::save_checkpoint(path, net_); }
void TerminationModel::load(const std::filesystem::path& path) { nn::load_checkpoint(path, net_); }

const char* to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::MaxStep: return "max_step";
    case PolicyKind::LowestQ: return "lowest_q";
    case PolicyKind::AtFull: return "at_full";
    case PolicyKind::Adt: return "adt";
  }
  return "unknown";
}

PolicyKind policy_kind_from_string(const std::string& s) {
  for (PolicyKind k : {PolicyKind::MaxStep, PolicyKind::LowestQ, PolicyKind::AtFull, PolicyKind::Adt}) {
    if (s == to_string(k)) return k;
  }
  fail(ErrorKind::InvalidConfig, "unknown termination policy '" + s + "'");
}

int discretize(double pred, double delta, int t) {
  const double r = std::round(pred / delta);
  if (!(r >= 1.0)) return 1;  // also catches NaN
  return r >= t ? t : static_cast<int>(r);
}

StopController::StopController(TerminationPolicy policy) : policy_(std::move(policy)) {
  const bool learned = policy_.kind == PolicyKind::AtFull || policy_.kind == PolicyKind::Adt;
  if (learned && !policy_.model) fail(ErrorKind::ModelMissing, std::string(to_string(policy_.kind)) + " needs a model");
}

StopDecision StopController::observe(const EpisodeTrace& live) {
  const int t = live.steps();
  const int max_len = policy_.max_len;
  if (policy_.kind == PolicyKind::Adt) {
    if (t % 2 == 0 && t >= 2) {
      const auto q = q_sequence(live, t);
      const int g = discretize(policy_.model(pad_sequence(q, max_len)), policy_.delta, t);
      predictions_.emplace_back(t, g);
      const std::size_t n = predictions_.size();
      if (n >= 3 && predictions_[n - 1].second == g && predictions_[n - 2].second == g &&
          predictions_[n - 3].second == g) {
        return {true, g};
      }
    }
    if (t >= max_len) return {true, predictions_.empty() ? std::max(t, 1) : predictions_.back().second};
    return {};
  }
  if (t < max_len) return {};
  switch (policy_.kind) {
    case PolicyKind::MaxStep: return {true, t};
    case PolicyKind::LowestQ: {
      int best = 1;
      double best_v = std::numeric_limits<double>::infinity();
      for (int s = 1; s <= t; ++s) {
        const double m = *std::max_element(live.q[s].begin(), live.q[s].end());
        if (m < best_v) {
          best_v = m;
          best = s;
        }
      }
      return {true, best};
    }
    case PolicyKind::AtFull: {
      const auto q = q_sequence(live, t);
      return {true, discretize(policy_.model(pad_sequence(q, max_len)), policy_.delta, t)};
    }
    default: break;
  }
  return {};
}

PolicyOutcome apply_policy(const TerminationPolicy& policy, const EpisodeTrace& trace) {
  if (trace.steps() < 1 || !trace.consistent()) fail(ErrorKind::EmptyTrace, "policy needs a non-empty trace");
  TerminationPolicy p = policy;
  p.max_len = std::min(policy.max_len, trace.steps());
  StopController ctl(p);
  EpisodeTrace live;
  live.case_id = trace.case_id;
  auto push = [&](int t) {
    live.planes.push_back(trace.planes[t]);
    live.q.push_back(trace.q[t]);
    live.ang.push_back(trace.ang[t]);
    live.dis.push_back(trace.dis[t]);
  };
  push(0);
  for (int t = 1; t <= p.max_len; ++t) {
    push(t);
    const StopDecision d = ctl.observe(live);
    if (d.stop) {
      return {policy.label(), t, d.step, trace.ang[d.step], trace.dis[d.step], ctl.predictions()};
    }
  }
  fail(ErrorKind::EmptyTrace, "policy did not stop within the trace");
}

}  // namespace planeloc::termination
