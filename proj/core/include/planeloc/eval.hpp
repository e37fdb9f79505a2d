#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "planeloc/termination.hpp"
#include "planeloc/trace.hpp"
#include "planeloc/volume.hpp"

namespace planeloc::eval {

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Mean local SSIM over every Gaussian window lying fully inside the image.
/// Windows larger than the image shrink to the image size. Throws SizeMismatch.
double ssim(const SliceImage& a, const SliceImage& b, const SsimConfig& cfg = {});

struct TTest {
  double t = 0.0;
  int df = 0;
  double p = 1.0;
};

/// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);
/// Student t cumulative distribution.
double student_t_cdf(double t, double df);

/// Two-sided paired t-test on x - y. Throws SizeMismatch for unequal lengths,
/// DegenerateSample for fewer than two pairs or identical samples. A constant
/// nonzero difference gives p = 0.
TTest paired_ttest(std::span<const double> x, std::span<const double> y);

/// Sample standard deviation (n - 1); 0 for fewer than two values.
double sample_std(std::span<const double> v);
double mean(std::span<const double> v);

/// One evaluated episode under one method (init mode plus stopping policy).
struct EpisodeRecord {
  int case_id = 0;
  std::string plane_name;
  std::string method;
  int stop_iteration = 0;
  int chosen_step = 0;
  double ang = 0.0;
  double dis = 0.0;
  double ssim = 0.0;
};

std::string to_json_line(const EpisodeRecord& r);
/// Throws IoError.
EpisodeRecord record_from_json(const std::string& line);

struct Stat {
  double mean = 0.0;
  double std = 0.0;
};

struct MethodRow {
  std::string plane_name;
  std::string method;
  int n = 0;
  Stat ang;
  Stat dis;
  Stat total;  // Ang + Dis
  Stat ssim;
  double mean_stop_iteration = 0.0;
  double mean_chosen_step = 0.0;
};

struct PairTest {
  std::string plane_name;
  std::string a;
  std::string b;
  int n = 0;
  std::optional<TTest> test;  // empty when degenerate
};

struct RunReport {
  std::vector<MethodRow> rows;
  std::vector<PairTest> tests;  // on per-case Ang + Dis

  const MethodRow* find(const std::string& plane_name, const std::string& method) const;
};

/// Rows ordered by plane name, then by each method's first appearance.
/// Pure function of the records.
RunReport summarize(std::span<const EpisodeRecord> records);

std::string report_json(const RunReport& r);
std::string methods_csv(const RunReport& r);
std::string tests_csv(const RunReport& r);
/// Fixed-precision text table: 2 decimals for Ang/Dis, 3 for SSIM.
std::string report_table(const RunReport& r);
/// report.json, methods.csv, tests.csv, report.txt. Throws IoError.
void write_report(const std::filesystem::path& dir, const RunReport& r);

/// A stopping decision drawn onto a trace plot.
struct PlotMarker {
  std::string policy;
  int step = 0;            // chosen step g, the marker's x position
  int stop_iteration = 0;
};

/// SVG of Ang + Dis against the step, the adaptive rule's predictions, and
/// one marker per policy. Throws IoError.
void emit_plot(const std::filesystem::path& path, const EpisodeTrace& trace, std::span<const PlotMarker> markers,
               std::span<const std::pair<int, int>> adt_predictions = {});
std::string plot_svg(const EpisodeTrace& trace, std::span<const PlotMarker> markers,
                     std::span<const std::pair<int, int>> adt_predictions = {});

/// Binary 8-bit PGM of a slice, intensities clamped to [0, 1]. Throws IoError.
void write_pgm(const std::filesystem::path& path, const SliceImage& s);

}  // namespace planeloc::eval
