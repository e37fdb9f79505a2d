#include "planeloc/agent/td.hpp"

#include "planeloc/error.hpp"

namespace planeloc::agent {

TdResult td_loss(std::span<const Transition* const> batch, std::span<const double> weights, QNetwork& online,
                 QNetwork& target, double gamma) {
  if (batch.empty()) fail(ErrorKind::EmptyBatch, "td_loss needs at least one transition");
  if (!weights.empty() && weights.size() != batch.size()) {
    fail(ErrorKind::SizeMismatch, "importance weights do not match the batch");
  }
  constexpr int A = PlaneAction::kCount;
  const int n = static_cast<int>(batch.size());
  std::vector<const AgentState*> cur;
  std::vector<const AgentState*> next;
  for (const Transition* t : batch) {
    cur.push_back(&t->state);
    next.push_back(&t->next_state);
  }
  const nn::Tensor next_states = stack_states(next);
  // Bootstrap values use batch statistics, the normalization the regression
  // itself is fitted under. Running statistics here let the targets drift.
  const nn::Tensor q_next_online = online.forward(next_states, nn::Mode::Batch).q;
  const nn::Tensor q_next_target = target.forward(next_states, nn::Mode::Batch).q;
  const nn::Tensor q = online.forward(stack_states(cur), nn::Mode::Train).q;

  TdResult out;
  nn::Tensor dq({n, A});
  for (int i = 0; i < n; ++i) {
    const double* row = q_next_online.data() + static_cast<std::size_t>(i) * A;
    QVector qa{};
    std::copy(row, row + A, qa.begin());
    const int a_star = greedy_action(qa);
    const double y = batch[i]->reward + gamma * q_next_target[static_cast<std::size_t>(i) * A + a_star];
    const std::size_t k = static_cast<std::size_t>(i) * A + batch[i]->action.index();
    const double delta = y - q[k];
    const double w = weights.empty() ? 1.0 : weights[i];
    out.loss += w * delta * delta;
    dq[k] = -2.0 * w * delta / n;
    out.td_errors.push_back(delta);
    out.target_actions.push_back(a_star);
  }
  out.loss /= n;
  online.backward(dq);
  return out;
}

}  // namespace planeloc::agent
