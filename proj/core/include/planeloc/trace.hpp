#pragma once

#include <array>
#include <string>
#include <vector>

#include "planeloc/geometry.hpp"

namespace planeloc {

using QVector = std::array<double, PlaneAction::kCount>;

/// Per-step record of one localization rollout. Index 0 is the starting
/// plane; index t is the plane after t actions. `q[t]` holds the Q-values of
/// the state at step t. Planes are in the case's own frame.
struct EpisodeTrace {
  int case_id = 0;
  std::string plane_name;
  std::string init_mode;
  std::vector<PlaneParams> planes;
  std::vector<QVector> q;
  std::vector<double> ang;  // degrees
  std::vector<double> dis;  // millimetres

  int steps() const { return static_cast<int>(planes.size()) - 1; }
  bool empty() const { return planes.empty(); }
  /// All per-step lists have one entry per recorded step.
  bool consistent() const;
};

}  // namespace planeloc
