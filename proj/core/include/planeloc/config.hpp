#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "planeloc/agent/trainer.hpp"
#include "planeloc/alignment.hpp"
#include "planeloc/eval.hpp"
#include "planeloc/phantom.hpp"
#include "planeloc/termination.hpp"

namespace planeloc {

inline constexpr int kConfigVersion = 1;

struct EvalConfig {
  std::vector<std::string> init_modes{"random", "regist", "post"};
  std::vector<std::string> policies{"max_step", "lowest_q", "at_full", "adt"};
  int plot_cases = 3;  // test cases that get an SVG trace plot and PGM slices
  eval::SsimConfig ssim;
};

/// Training traces for the termination models, drawn from training volumes.
struct TerminationData {
  int traces_per_case = 4;  // first from the warm start, the rest perturbed
};

/// Every tunable of a run. Serialized verbatim into the run directory.
struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  std::string output_dir = "runs/desk";
  PhantomSpec phantom;
  Split split{30, 5, 10};
  agent::AgentConfig agent;
  DetectorConfig detector;
  bool resample_aligned = false;  // resample volumes into atlas space instead of composing the transform
  termination::TerminationConfig termination;
  TerminationData termination_data;
  EvalConfig eval;

  /// Throws InvalidConfig.
  void validate() const;
};

/// The published hyper-parameters at full volume and slice size.
RunConfig paper_preset();
/// Small volumes, narrow networks and short schedules for one CPU.
RunConfig desk_preset();
/// Throws InvalidConfig for an unknown name.
RunConfig preset(const std::string& name);

std::string to_json(const RunConfig& cfg);
/// Overlays `text` on `base`. Unknown keys, a wrong version or wrong types
/// throw InvalidConfig.
RunConfig config_from_json(const std::string& text, const RunConfig& base);
/// Overlays onto the preset named by the text's "preset" key (desk if absent).
RunConfig config_from_json(const std::string& text);

}  // namespace planeloc
