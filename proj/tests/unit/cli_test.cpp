#include <cstdlib>
#include <fstream>
#include <string>

#include <doctest.h>
#include <sys/wait.h>

#include "support.hpp"

namespace {

int run(const std::string& args, const std::filesystem::path& root) {
  const std::string cmd = "PLANELOC_OUTPUT_ROOT='" + root.string() + "' '" PLANELOC_CLI_PATH "' " + args +
                          " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("command line exit codes") {
  const auto root = testing::scratch_dir("cli");
  CHECK(run("--help", root) == 0);
  CHECK(run("", root) == 1);
  CHECK(run("fly", root) == 1);
  CHECK(run("phantom --preset huge", root) == 1);
  CHECK(run("phantom --jobs 0", root) == 1);
  CHECK(run("phantom --config /nonexistent.json", root) == 1);

  const auto bad = root / "bad.json";
  { std::ofstream(bad) << R"({"agent": {"nonsense": 1}})"; }
  CHECK(run("phantom --config " + bad.string(), root) == 1);

  const auto cfg = root / "tiny.json";
  { std::ofstream(cfg) << planeloc::to_json(testing::tiny_config("cli_run")); }
  CHECK(run("train --config " + cfg.string(), root) == 2);
  CHECK(run("phantom --config " + cfg.string() + " --seed 5", root) == 0);
  CHECK(std::filesystem::exists(root / "cli_run" / "dataset" / "manifest.json"));
  CHECK(run("phantom --config " + cfg.string() + " --seed 5", root) == 2);
  CHECK(run("phantom --config " + cfg.string() + " --seed 5 --force", root) == 0);
  CHECK(run("eval --config " + cfg.string(), root) == 2);
}
