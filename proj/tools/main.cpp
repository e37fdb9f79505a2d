// planeloc: phantom generation, training, evaluation and reporting.
//
//   planeloc phantom --preset desk --seed 1
//   planeloc train   --config run.json --oracle-landmarks
//   planeloc eval    --jobs 4
//   planeloc report
//
// Relative output directories are placed under $PLANELOC_OUTPUT_ROOT when set.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "planeloc/config.hpp"
#include "planeloc/error.hpp"
#include "planeloc/eval.hpp"
#include "planeloc/pipeline.hpp"

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> preset;
  bool oracle = false;
  int jobs = 1;
  bool force = false;
};

planeloc::RunConfig resolve(const Flags& f) {
  planeloc::RunConfig cfg;
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw planeloc::Error(planeloc::ErrorKind::InvalidConfig, "cannot read config " + f.config_path);
    std::ostringstream text;
    text << in.rdbuf();
    cfg = f.preset ? planeloc::config_from_json(text.str(), planeloc::preset(*f.preset))
                   : planeloc::config_from_json(text.str());
  } else {
    cfg = planeloc::preset(f.preset.value_or("desk"));
  }
  if (f.seed) cfg.seed = *f.seed;
  if (f.oracle) cfg.detector.oracle = true;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Standard-plane localization with a landmark-aligned RL agent"};
  app.require_subcommand(1, 1);
  Flags flags;
  app.add_option("--config", flags.config_path, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--seed", flags.seed, "master seed");
  app.add_option("--preset", flags.preset, "base preset")->check(CLI::IsMember({"paper", "desk"}));
  app.add_flag("--oracle-landmarks", flags.oracle, "use ground-truth landmarks instead of the detector");
  app.add_option("--jobs", flags.jobs, "evaluation workers")->check(CLI::PositiveNumber);
  app.add_flag("--force", flags.force, "overwrite existing outputs");
  app.fallthrough();

  auto* phantom = app.add_subcommand("phantom", "generate the phantom dataset");
  auto* train = app.add_subcommand("train", "train detector, agent and termination models");
  auto* eval = app.add_subcommand("eval", "evaluate on the test split and write the report");
  auto* report = app.add_subcommand("report", "rebuild the report from evaluation records");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  planeloc::RunConfig cfg;
  try {
    cfg = resolve(flags);
  } catch (const planeloc::Error& e) {
    std::cerr << "planeloc: " << e.what() << "\n";
    return kUsage;
  }

  planeloc::pipeline::Options opt;
  opt.force = flags.force;
  opt.jobs = flags.jobs;
  const auto start = std::chrono::steady_clock::now();
  opt.progress = [start](const std::string& msg) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr, "[%7.1fs] %s\n", s, msg.c_str());
  };

  try {
    if (phantom->parsed()) {
      planeloc::pipeline::run_phantom(cfg, opt);
    } else if (train->parsed()) {
      planeloc::pipeline::run_train(cfg, opt);
    } else if (eval->parsed()) {
      std::cout << planeloc::eval::report_table(planeloc::pipeline::run_eval(cfg, opt));
    } else if (report->parsed()) {
      std::cout << planeloc::eval::report_table(planeloc::pipeline::run_report(cfg, opt));
    }
  } catch (const std::exception& e) {
    std::cerr << "planeloc: " << e.what() << "\n";
    return kRuntime;
  }
  return 0;
}
