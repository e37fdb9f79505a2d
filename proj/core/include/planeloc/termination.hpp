#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "planeloc/nn/network.hpp"
#include "planeloc/nn/optimizer.hpp"
#include "planeloc/trace.hpp"

namespace planeloc::termination {

inline constexpr double kDefaultDelta = 0.01;

/// 1-based step in [1, upto] with the smallest Ang + Dis, ties to the earliest.
/// `upto` < 0 means the whole trace. Throws EmptyTrace when no step was taken.
int optimal_step(const EpisodeTrace& trace, int upto = -1);

/// (Ang_t - Ang_0) + (Dis_t - Dis_0): negative when the plane improved.
/// Throws IndexOutOfRange.
double adi(const EpisodeTrace& trace, int t);

/// (Ang_0 - Ang_t) + (Dis_0 - Dis_t) = -adi.
double improvement(const EpisodeTrace& trace, int t);

/// Rows q_1..q_n of the trace (the states after each action), n <= trace steps.
std::vector<QVector> q_sequence(const EpisodeTrace& trace, int n);

/// [max_len, 8] tensor holding `q` followed by zero rows. Longer input is
/// truncated. The only padding routine, shared by training and inference.
nn::Tensor pad_sequence(std::span<const QVector> q, int max_len);

struct TerminationSample {
  nn::Tensor input;  // [max_len, 8]
  double label = 0.0;
  int prefix = 0;    // number of live rows
};

/// Per trace, `samples_per_trace` prefixes of length L ~ U[2, n] with label
/// delta * optimal_step(trace, L). With `full_only`, one sample per trace at L = n.
std::vector<TerminationSample> build_training_set(std::span<const EpisodeTrace> traces, int max_len, double delta,
                                                  int samples_per_trace, std::mt19937_64& rng,
                                                  bool full_only = false);

enum class LossKind { Mse, Mae };
enum class Backbone { Mlp, VanillaRnn, Lstm };

const char* to_string(LossKind k);
const char* to_string(Backbone b);
/// Throws InvalidConfig for unknown names.
LossKind loss_kind_from_string(const std::string& s);
Backbone backbone_from_string(const std::string& s);

/// (pred - label)^2, or |pred - label| for MAE.
double termination_loss(double pred, double label, LossKind kind = LossKind::Mse);
/// d loss / d pred.
double termination_loss_grad(double pred, double label, LossKind kind = LossKind::Mse);

struct TerminationConfig {
  Backbone backbone = Backbone::Lstm;
  int hidden = 64;
  int layers = 2;
  int epochs = 100;
  nn::OptimizerKind optimizer = nn::OptimizerKind::Sgd;
  double learning_rate = 1e-4;
  double momentum = 0.0;
  int batch_size = 100;
  LossKind loss = LossKind::Mse;
  double delta = kDefaultDelta;
  int max_len = 75;
  int samples_per_trace = 8;

  /// Throws InvalidConfig.
  void validate() const;
};

/// Maps a padded [max_len, 8] sequence to delta * (best step).
class TerminationModel {
 public:
  TerminationModel() = default;
  TerminationModel(const TerminationConfig& cfg, std::uint64_t seed);

  static nn::NetworkSpec spec_for(const TerminationConfig& cfg);

  double predict(const nn::Tensor& padded);
  std::vector<double> predict(std::span<const TerminationSample> samples);
  /// Mini-batch training; returns the mean loss per epoch.
  std::vector<double> train(std::span<const TerminationSample> samples,
                            const std::function<void(int, double)>& on_epoch = {});
  double mean_loss(std::span<const TerminationSample> samples);

  nn::Network& network() { return net_; }
  const TerminationConfig& config() const { return cfg_; }
  void save(const std::filesystem::path& path);
  void load(const std::filesystem::path& path);

 private:
  TerminationConfig cfg_;
  std::uint64_t seed_ = 0;
  nn::Network net_;
};

/// Anything mapping a padded sequence to a scaled step; models and test stubs.
using StepPredictor = std::function<double(const nn::Tensor& padded)>;

enum class PolicyKind { MaxStep, LowestQ, AtFull, Adt };

const char* to_string(PolicyKind k);
/// Throws InvalidConfig for unknown names.
PolicyKind policy_kind_from_string(const std::string& s);

struct TerminationPolicy {
  PolicyKind kind = PolicyKind::MaxStep;
  int max_len = 75;
  double delta = kDefaultDelta;
  StepPredictor model;  // required by AtFull and Adt
  std::string name;     // report label; defaults to the kind's name
  std::string label() const { return name.empty() ? to_string(kind) : name; }
};

struct StopDecision {
  bool stop = false;
  int step = 0;  // chosen step g when stopping
};

/// clamp(round(pred / delta), 1, t).
int discretize(double pred, double delta, int t);

/// Stateful stopping rule for one episode. Feed the live trace after every
/// step; the adaptive rule queries the model only at even steps.
class StopController {
 public:
  /// Throws ModelMissing when a learned policy has no model.
  explicit StopController(TerminationPolicy policy);

  StopDecision observe(const EpisodeTrace& live);
  /// (t, prediction) pairs made so far by the adaptive rule.
  const std::vector<std::pair<int, int>>& predictions() const { return predictions_; }
  int model_calls() const { return static_cast<int>(predictions_.size()); }

 private:
  TerminationPolicy policy_;
  std::vector<std::pair<int, int>> predictions_;
};

struct PolicyOutcome {
  std::string policy;
  int stop_iteration = 0;  // steps actually run
  int chosen_step = 0;     // g, the step whose plane is reported
  double ang = 0.0;
  double dis = 0.0;
  std::vector<std::pair<int, int>> predictions;
};

/// Replays the policy over a trace, as if stepping live. A trace shorter than
/// max_len ends the episode at its last step.
PolicyOutcome apply_policy(const TerminationPolicy& policy, const EpisodeTrace& trace);

}  // namespace planeloc::termination
