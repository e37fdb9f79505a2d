#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "planeloc/config.hpp"
#include "planeloc/eval.hpp"
#include "planeloc/phantom.hpp"

namespace planeloc::pipeline {

/// Environment variable that, when set, prefixes relative output directories.
inline constexpr const char* kOutputRootEnv = "PLANELOC_OUTPUT_ROOT";

struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path dataset;
  std::filesystem::path train;
  std::filesystem::path eval;
};

/// Resolves cfg.output_dir against the output-root override.
RunPaths run_paths(const RunConfig& cfg);

struct Options {
  bool force = false;
  int jobs = 1;
  std::function<void(const std::string&)> progress;
};

/// Generates the split and writes volumes, sidecars and manifest.json.
/// Refuses to overwrite an existing dataset unless forced (IoError).
void run_phantom(const RunConfig& cfg, const Options& opt = {});

/// Atlas selection, detector training (unless oracle), agent training and
/// termination-model training, per plane name. An interrupted agent run
/// resumes from its last epoch checkpoint. Throws MissingDataset.
void run_train(const RunConfig& cfg, const Options& opt = {});

/// Evaluates every configured init mode and policy on the test split and
/// writes records, traces, plots and the report. Throws MissingArtifacts.
eval::RunReport run_eval(const RunConfig& cfg, const Options& opt = {});

/// Rebuilds the report from persisted episode records.
eval::RunReport run_report(const RunConfig& cfg, const Options& opt = {});

/// Reads the dataset written by run_phantom. Throws MissingDataset.
Dataset load_dataset(const std::filesystem::path& dir);

/// Plane names produced by the phantom spec.
std::vector<std::string> plane_names(const RunConfig& cfg);

}  // namespace planeloc::pipeline
