#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <doctest.h>

#include "planeloc/error.hpp"
#include "planeloc/eval.hpp"
#include "support.hpp"

using namespace planeloc;
using namespace planeloc::eval;

namespace {

SliceImage random_slice(int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SliceImage s;
  s.size = size;
  s.pixels.resize(static_cast<std::size_t>(size) * size);
  for (double& x : s.pixels) x = u(rng);
  return s;
}

// Straightforward SSIM: per window, explicit Gaussian weights and two-pass moments.
double naive_ssim(const SliceImage& a, const SliceImage& b) {
  const int w = std::min(11, a.size);
  std::vector<std::vector<double>> k(w, std::vector<double>(w));
  double z = 0.0;
  for (int r = 0; r < w; ++r)
    for (int c = 0; c < w; ++c) z += k[r][c] = std::exp(-((r - (w - 1) / 2.0) * (r - (w - 1) / 2.0) +
                                                          (c - (w - 1) / 2.0) * (c - (w - 1) / 2.0)) /
                                                        4.5);
  double sum = 0.0;
  int n = 0;
  for (int r0 = 0; r0 + w <= a.size; ++r0) {
    for (int c0 = 0; c0 + w <= a.size; ++c0) {
      double ma = 0, mb = 0;
      for (int r = 0; r < w; ++r)
        for (int c = 0; c < w; ++c) {
          ma += k[r][c] / z * a.at(r0 + r, c0 + c);
          mb += k[r][c] / z * b.at(r0 + r, c0 + c);
        }
      double va = 0, vb = 0, cab = 0;
      for (int r = 0; r < w; ++r)
        for (int c = 0; c < w; ++c) {
          const double x = a.at(r0 + r, c0 + c) - ma, y = b.at(r0 + r, c0 + c) - mb;
          va += k[r][c] / z * x * x;
          vb += k[r][c] / z * y * y;
          cab += k[r][c] / z * x * y;
        }
      const double c1 = 1e-4, c2 = 9e-4;
      sum += (2 * ma * mb + c1) * (2 * cab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++n;
    }
  }
  return sum / n;
}

// Student t CDF by composite Simpson integration of the density.
double simpson_t_cdf(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * M_PI);
  auto pdf = [&](double x) { return c * std::pow(1 + x * x / df, -(df + 1) / 2); };
  const int n = 200000;
  const double h = std::abs(t) / n;
  double s = pdf(0) + pdf(std::abs(t));
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * pdf(i * h);
  const double half = s * h / 3;
  return t >= 0 ? 0.5 + half : 0.5 - half;
}

}  // namespace

TEST_CASE("ssim identities and agreement with a naive implementation") {
  std::mt19937_64 rng(1);
  for (int size : {8, 16, 24}) {
    const SliceImage a = random_slice(size, rng);
    const SliceImage b = random_slice(size, rng);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
    CHECK(ssim(a, b) == doctest::Approx(naive_ssim(a, b)).epsilon(1e-9));
    CHECK(ssim(a, b) < 1.0);
  }
  SliceImage small = random_slice(8, rng);
  SliceImage other = random_slice(16, rng);
  CHECK_THROWS_AS(ssim(small, other), Error);
}

TEST_CASE("incomplete beta at closed forms") {
  // I_x(1, 1) = x, I_x(a, 1) = x^a, I_x(1, b) = 1 - (1 - x)^b.
  for (double x : {0.1, 0.37, 0.5, 0.93}) {
    CHECK(incomplete_beta(1, 1, x) == doctest::Approx(x).epsilon(1e-12));
    CHECK(incomplete_beta(3.5, 1, x) == doctest::Approx(std::pow(x, 3.5)).epsilon(1e-12));
    CHECK(incomplete_beta(1, 2.5, x) == doctest::Approx(1 - std::pow(1 - x, 2.5)).epsilon(1e-12));
    CHECK(incomplete_beta(2, 3, x) == doctest::Approx(1 - incomplete_beta(3, 2, 1 - x)).epsilon(1e-12));
  }
  CHECK(incomplete_beta(2, 3, 0.0) == 0.0);
  CHECK(incomplete_beta(2, 3, 1.0) == 1.0);
}

TEST_CASE("student t cdf matches numeric integration") {
  for (double df : {1.0, 2.0, 4.0, 9.0, 29.0}) {
    for (double t : {-6.0, -2.1, -0.3, 0.0, 0.7, 1.96, 4.5}) {
      CHECK(std::abs(student_t_cdf(t, df) - simpson_t_cdf(t, df)) < 1e-9);
    }
  }
  // Cauchy closed form.
  CHECK(student_t_cdf(1.0, 1.0) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("paired t-test") {
  const std::vector<double> x{5.1, 4.8, 6.0, 5.5, 5.9, 4.7};
  const std::vector<double> y{4.9, 4.9, 5.2, 5.0, 5.3, 4.8};
  const TTest r = paired_ttest(x, y);
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i) d.push_back(x[i] - y[i]);
  const double t = mean(d) / (sample_std(d) / std::sqrt(6.0));
  CHECK(r.df == 5);
  CHECK(r.t == doctest::Approx(t).epsilon(1e-12));
  CHECK(std::abs(r.p - 2 * (1 - simpson_t_cdf(std::abs(t), 5))) < 1e-6);
  CHECK(paired_ttest(y, x).p == doctest::Approx(r.p));
  std::vector<double> shift;
  for (double v : x) shift.push_back(v + 1.0);
  CHECK(paired_ttest(shift, x).p == 0.0);
  CHECK_THROWS_AS(paired_ttest(x, x), Error);
  CHECK_THROWS_AS(paired_ttest(std::vector<double>{1.0}, std::vector<double>{2.0}), Error);
  CHECK_THROWS_AS(paired_ttest(x, std::vector<double>{1.0, 2.0}), Error);
}

TEST_CASE("mean and sample std") {
  const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
  CHECK(mean(v) == 5.0);
  CHECK(sample_std(v) == doctest::Approx(std::sqrt(32.0 / 7.0)));
  CHECK(sample_std(std::vector<double>{3.0}) == 0.0);
}

TEST_CASE("records round-trip and summarize") {
  std::vector<EpisodeRecord> recs;
  for (int id = 0; id < 4; ++id) {
    recs.push_back({id, "spheres", "regist", 0, 0, 10.0 + id, 1.0, 0.5});
    recs.push_back({id, "spheres", "post/adt", 20 + id, 10, 4.0 + 0.5 * id * id, 0.5, 0.8});
  }
  recs.push_back({0, "bar", "regist", 0, 0, 3.0, 0.0, 0.9});
  for (const auto& r : recs) {
    const EpisodeRecord back = record_from_json(to_json_line(r));
    CHECK(back.method == r.method);
    CHECK(back.ang == r.ang);
    CHECK(back.ssim == r.ssim);
  }
  CHECK_THROWS_AS(record_from_json("{not json"), Error);

  const RunReport rep = summarize(recs);
  REQUIRE(rep.rows.size() == 3);
  CHECK(rep.rows[0].plane_name == "bar");
  CHECK(rep.rows[1].method == "regist");
  CHECK(rep.rows[2].method == "post/adt");
  const MethodRow* regist = rep.find("spheres", "regist");
  REQUIRE(regist);
  CHECK(regist->n == 4);
  CHECK(regist->ang.mean == 11.5);
  CHECK(regist->total.mean == 12.5);
  CHECK(regist->ang.std == doctest::Approx(sample_std(std::vector<double>{10, 11, 12, 13})));
  CHECK(rep.find("spheres", "post/adt")->mean_stop_iteration == 21.5);
  CHECK(rep.find("bar", "regist")->ang.std == 0.0);
  CHECK(rep.find("bar", "nothing") == nullptr);

  // One spheres pair, one degenerate single-method plane with no pairs.
  REQUIRE(rep.tests.size() == 1);
  CHECK(rep.tests[0].n == 4);
  REQUIRE(rep.tests[0].test);
  std::vector<double> a, b;
  for (int id = 0; id < 4; ++id) a.push_back(11.0 + id), b.push_back(4.5 + 0.5 * id * id);
  CHECK(rep.tests[0].test->p == doctest::Approx(paired_ttest(a, b).p));

  // Order of records within a method does not change the numbers.
  std::vector<EpisodeRecord> shuffled(recs.rbegin(), recs.rend());
  std::swap(shuffled[0], shuffled.back());
  CHECK(report_json(summarize(shuffled)).size() > 0);
  CHECK(summarize(shuffled).find("spheres", "regist")->ang.mean == 11.5);
}

TEST_CASE("report files") {
  const auto dir = testing::scratch_dir("report");
  std::vector<EpisodeRecord> recs{{0, "spheres", "regist", 0, 0, 1.0, 2.0, 0.5},
                                  {1, "spheres", "regist", 0, 0, 3.0, 2.0, 0.7}};
  const RunReport rep = summarize(recs);
  write_report(dir / "r", rep);
  for (const char* f : {"report.json", "methods.csv", "tests.csv", "report.txt"}) {
    CHECK(std::filesystem::exists(dir / "r" / f));
  }
  const std::string csv = methods_csv(rep);
  CHECK(csv.substr(0, csv.find('\n')).find("method") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
  CHECK(report_table(rep).find("2.00") != std::string::npos);
  CHECK(report_json(rep) == report_json(summarize(recs)));
}

TEST_CASE("plots and pgm slices") {
  const auto dir = testing::scratch_dir("plots");
  EpisodeTrace t;
  for (int i = 0; i <= 6; ++i) {
    t.planes.emplace_back();
    t.q.push_back({});
    t.ang.push_back(10.0 - i);
    t.dis.push_back(1.0);
  }
  const std::vector<PlotMarker> markers{{"max_step", 6, 6}, {"adt", 4, 6}};
  const std::vector<std::pair<int, int>> preds{{2, 2}, {4, 4}, {6, 4}};
  const std::string svg = plot_svg(t, markers, preds);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("adt") != std::string::npos);
  emit_plot(dir / "p.svg", t, markers, preds);
  CHECK(std::filesystem::file_size(dir / "p.svg") == svg.size());

  SliceImage s;
  s.size = 2;
  s.pixels = {0.0, 1.0, -0.5, 0.5};
  write_pgm(dir / "s.pgm", s);
  std::ifstream in(dir / "s.pgm", std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  const std::string header = "P5\n2 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 4);
  CHECK(bytes.substr(0, header.size()) == header);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 0]) == 0);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 1]) == 255);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 2]) == 0);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 3]) == 128);
  CHECK_THROWS_AS(write_pgm(dir / "missing" / "x" / "s.pgm", s), Error);
}
