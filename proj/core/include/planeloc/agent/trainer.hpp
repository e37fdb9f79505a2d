#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "planeloc/agent/episode.hpp"
#include "planeloc/agent/q_network.hpp"
#include "planeloc/agent/replay.hpp"
#include "planeloc/nn/optimizer.hpp"

namespace planeloc::agent {

struct AgentConfig {
  QNetworkSpec network = QNetworkSpec::desk();
  int state_size = 64;
  double gamma = 0.9;
  int target_sync_interval = 1500;
  int max_steps = 75;
  int batch_size = 4;
  double learning_rate = 5e-5;
  double init_max_angle_deg = 25.0;
  double init_max_distance_mm = 10.0;
  StepSizes steps;
  int buffer_capacity = 15000;
  double priority_alpha = 0.6;
  double beta_start = 0.4;
  double beta_end = 1.0;
  EpsilonSchedule epsilon;
  int warmup_batches = 10;  // gradient steps start once the buffer holds this many batches
  int epochs = 100;
  int episodes_per_case = 1;

  /// Throws InvalidConfig.
  void validate() const;
  std::int64_t planned_iterations(int n_train) const;
};

struct ValidationResult {
  double ang = 0.0;
  double dis = 0.0;
};

/// Dueling double-DQN training loop over a fixed set of episodes.
///
/// One iteration is one environment step. Each epoch runs
/// `episodes_per_case` episodes per training case in a seeded shuffled order;
/// one gradient step follows every iteration once the buffer is warm.
class Trainer {
 public:
  Trainer(AgentConfig cfg, std::vector<EpisodeSetup> train, std::vector<EpisodeSetup> val, std::uint64_t seed);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// Receives each JSON-lines record as it is produced.
  void set_log(std::function<void(const std::string&)> sink) { log_ = std::move(sink); }

  void run_epoch();
  /// Runs the remaining epochs; `after_epoch` may persist a resumable state.
  void train(const std::function<void(Trainer&)>& after_epoch = {});

  /// Greedy episodes from fixed perturbed starts; mean final-step error.
  ValidationResult validate();

  int epoch() const { return epoch_; }
  std::int64_t iteration() const { return iteration_; }
  const AgentConfig& config() const { return cfg_; }
  QNetwork& online() { return online_; }
  QNetwork& target() { return target_; }
  const PrioritizedBuffer& buffer() const { return buffer_; }
  /// Current importance exponent.
  double beta() const;

  /// Writes networks, optimizer moments, replay contents and counters.
  void save(const std::filesystem::path& dir);
  /// Restores a state written by save() for the same config and cases.
  void load(const std::filesystem::path& dir);

 private:
  void run_episode(std::size_t case_index);
  void emit(const std::string& line);

  AgentConfig cfg_;
  std::vector<EpisodeSetup> train_;
  std::vector<EpisodeSetup> val_;
  std::uint64_t seed_;
  QNetwork online_;
  QNetwork target_;
  nn::Optimizer optimizer_;
  PrioritizedBuffer buffer_;
  std::mt19937_64 rng_;
  std::int64_t iteration_ = 0;
  int epoch_ = 0;
  std::int64_t planned_ = 1;
  std::function<void(const std::string&)> log_;
};

}  // namespace planeloc::agent
