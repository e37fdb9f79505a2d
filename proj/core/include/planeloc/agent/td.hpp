#pragma once

#include <span>
#include <vector>

#include "planeloc/agent/q_network.hpp"
#include "planeloc/agent/replay.hpp"

namespace planeloc::agent {

struct TdResult {
  double loss = 0.0;
  std::vector<double> td_errors;      // y - Q(s, a) per sample
  std::vector<int> target_actions;    // online argmax at s'
};

/// Double-DQN loss mean_i w_i (r_i + gamma Q_target(s'_i, argmax_a Q(s'_i, a)) - Q(s_i, a_i))^2.
///
/// Next-state values use batch statistics (nn::Mode::Batch). The online network runs
/// a training-mode forward on s and gradients are accumulated into its
/// parameters (not zeroed here). Empty `weights` means all ones. Throws
/// EmptyBatch.
TdResult td_loss(std::span<const Transition* const> batch, std::span<const double> weights, QNetwork& online,
                 QNetwork& target, double gamma);

}  // namespace planeloc::agent
