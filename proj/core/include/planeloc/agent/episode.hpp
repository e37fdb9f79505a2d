#pragma once

#include <functional>
#include <memory>
#include <random>
#include <string>

#include "planeloc/geometry.hpp"
#include "planeloc/trace.hpp"
#include "planeloc/volume.hpp"

namespace planeloc::agent {

/// Everything needed to roll out on one case. The agent moves planes in its
/// own frame; `frame_to_volume` maps that frame into the case volume (the
/// identity for the native frame, atlas-to-case after alignment).
struct EpisodeSetup {
  int case_id = 0;
  std::shared_ptr<const Volume> volume;
  PlaneParams gt;  // case frame
  RigidTransform frame_to_volume;
  int state_size = 64;
  StepSizes steps;
};

/// Plane-moving MDP over one volume. Rewards compare raw (alpha, beta, gamma, d)
/// with the ground truth expressed in the agent frame.
class Environment {
 public:
  explicit Environment(EpisodeSetup setup);

  const EpisodeSetup& setup() const { return setup_; }
  /// Ground truth in the agent frame.
  const PlaneParams& gt_frame() const { return gt_frame_; }

  const AgentState& reset(const PlaneParams& start);
  /// Applies the action and returns the reward. |d| is clamped to the
  /// volume's half extent; an action that would collapse the normal leaves
  /// the plane unchanged. Either way the step counts.
  int step(PlaneAction a);

  const PlaneParams& plane() const { return plane_; }
  PlaneParams case_plane() const;
  const AgentState& state() const { return state_; }
  /// Error of the current plane against the case ground truth.
  PlaneError error() const;

  /// The slice the agent sees for a frame plane.
  std::shared_ptr<const SliceImage> render(const PlaneParams& p) const;
  /// Frame plane -> case frame, the plane actually cut through the volume.
  PlaneParams to_case(const PlaneParams& p) const;

 private:
  EpisodeSetup setup_;
  PlaneParams gt_frame_;
  double half_extent_ = 0.0;
  PlaneParams plane_;
  AgentState state_;
};

enum class InitMode { Train, Warm, Random };

const char* to_string(InitMode m);

/// Ground truth rotated about a random axis by up to `max_angle_deg` and
/// shifted by up to `max_distance_mm`, with |d| kept inside `half_extent`.
PlaneParams perturb_plane(const PlaneParams& gt, double max_angle_deg, double max_distance_mm, double half_extent,
                          std::mt19937_64& rng);

/// Isotropic random normal, canonical orientation, d uniform in [-h, h].
PlaneParams random_plane(double half_extent, std::mt19937_64& rng);

using QFunction = std::function<QVector(const AgentState&)>;
/// Called after every step t >= 1 with the trace so far; true stops the episode.
using StopHook = std::function<bool(const EpisodeTrace&)>;

/// Greedy rollout from `start` (agent frame) for up to `max_steps` actions.
EpisodeTrace run_episode(Environment& env, const PlaneParams& start, const QFunction& q, int max_steps,
                         const StopHook& stop = {});

}  // namespace planeloc::agent
