#include "planeloc/agent/episode.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "planeloc/agent/q_network.hpp"
#include "planeloc/error.hpp"

namespace planeloc {

bool EpisodeTrace::consistent() const {
  const std::size_t n = planes.size();
  return q.size() == n && ang.size() == n && dis.size() == n;
}

}  // namespace planeloc

namespace planeloc::agent {

Environment::Environment(EpisodeSetup setup)
    : setup_(std::move(setup)),
      gt_frame_(transform_plane(setup_.gt, setup_.frame_to_volume.inverse())),
      half_extent_(setup_.volume->half_extent()) {}

std::shared_ptr<const SliceImage> Environment::render(const PlaneParams& p) const {
  return std::make_shared<const SliceImage>(
      extract_slice(*setup_.volume, p, setup_.state_size, setup_.frame_to_volume));
}

PlaneParams Environment::to_case(const PlaneParams& p) const { return transform_plane(p, setup_.frame_to_volume); }

const AgentState& Environment::reset(const PlaneParams& start) {
  plane_ = start.with_d(std::clamp(start.d(), -half_extent_, half_extent_));
  state_ = initial_state(render(plane_));
  return state_;
}

int Environment::step(PlaneAction a) {
  const PlaneParams prev = plane_;
  try {
    const PlaneParams moved = apply_action(plane_, a, setup_.steps);
    plane_ = moved.with_d(std::clamp(moved.d(), -half_extent_, half_extent_));
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::DegenerateNormal) throw;
  }
  state_ = advance_state(state_, plane_ == prev ? state_.channels[2] : render(plane_));
  return reward(prev, plane_, gt_frame_);
}

PlaneParams Environment::case_plane() const { return to_case(plane_); }

PlaneError Environment::error() const { return plane_error(case_plane(), setup_.gt); }

const char* to_string(InitMode m) {
  switch (m) {
    case InitMode::Train: return "train";
    case InitMode::Warm: return "warm";
    case InitMode::Random: return "random";
  }
  return "unknown";
}

namespace {

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    const Vec3 v(g(rng), g(rng), g(rng));
    const double n = v.norm();
    if (n > 1e-9) return v / n;
  }
}

}  // namespace

PlaneParams perturb_plane(const PlaneParams& gt, double max_angle_deg, double max_distance_mm, double half_extent,
                          std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0.0, max_angle_deg);
  std::uniform_real_distribution<double> shift(-max_distance_mm, max_distance_mm);
  const Vec3 axis = random_unit(rng);
  const double a = angle(rng);
  const double dd = shift(rng) / kVoxelSizeMm;
  const Vec3 n = axis_angle_rotation(axis, a) * gt.normal();
  return PlaneParams::from_normal(n, std::clamp(gt.d() + dd, -half_extent, half_extent));
}

PlaneParams random_plane(double half_extent, std::mt19937_64& rng) {
  const Vec3 n = random_unit(rng);
  std::uniform_real_distribution<double> d(-half_extent, half_extent);
  return canonicalize(PlaneParams::from_normal(n, d(rng)));
}

namespace {

void record(EpisodeTrace& trace, const Environment& env, const QVector& q) {
  const PlaneParams p = env.case_plane();
  const PlaneError e = plane_error(p, env.setup().gt);
  trace.planes.push_back(p);
  trace.q.push_back(q);
  trace.ang.push_back(e.ang);
  trace.dis.push_back(e.dis);
}

}  // namespace

EpisodeTrace run_episode(Environment& env, const PlaneParams& start, const QFunction& q, int max_steps,
                         const StopHook& stop) {
  EpisodeTrace trace;
  trace.case_id = env.setup().case_id;
  env.reset(start);
  QVector qv = q(env.state());
  record(trace, env, qv);
  for (int t = 1; t <= max_steps; ++t) {
    env.step(PlaneAction(greedy_action(qv)));
    qv = q(env.state());
    record(trace, env, qv);
    if (stop && stop(trace)) break;
  }
  return trace;
}

}  // namespace planeloc::agent
