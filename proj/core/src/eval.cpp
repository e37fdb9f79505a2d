#include "planeloc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "planeloc/error.hpp"

namespace planeloc::eval {

using nlohmann::json;

double ssim(const SliceImage& a, const SliceImage& b, const SsimConfig& cfg) {
  if (a.size != b.size || a.pixels.size() != b.pixels.size()) fail(ErrorKind::SizeMismatch, "ssim inputs differ in size");
  const int s = a.size;
  const int w = std::min(cfg.window, s);
  const double half = (w - 1) / 2.0;
  std::vector<double> kernel(static_cast<std::size_t>(w) * w);
  double ksum = 0.0;
  for (int r = 0; r < w; ++r) {
    for (int c = 0; c < w; ++c) {
      const double dr = r - half;
      const double dc = c - half;
      const double v = std::exp(-(dr * dr + dc * dc) / (2.0 * cfg.sigma * cfg.sigma));
      kernel[static_cast<std::size_t>(r) * w + c] = v;
      ksum += v;
    }
  }
  for (double& v : kernel) v /= ksum;
  const double c1 = (cfg.k1 * cfg.dynamic_range) * (cfg.k1 * cfg.dynamic_range);
  const double c2 = (cfg.k2 * cfg.dynamic_range) * (cfg.k2 * cfg.dynamic_range);
  double total = 0.0;
  int windows = 0;
  for (int r0 = 0; r0 + w <= s; ++r0) {
    for (int c0 = 0; c0 + w <= s; ++c0) {
      double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
      for (int r = 0; r < w; ++r) {
        for (int c = 0; c < w; ++c) {
          const double k = kernel[static_cast<std::size_t>(r) * w + c];
          const double x = a.at(r0 + r, c0 + c);
          const double y = b.at(r0 + r, c0 + c);
          ma += k * x;
          mb += k * y;
          saa += k * x * x;
          sbb += k * y * y;
          sab += k * x * y;
        }
      }
      const double va = saa - ma * ma;
      const double vb = sbb - mb * mb;
      const double cov = sab - ma * mb;
      total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++windows;
    }
  }
  return total / windows;
}

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  // Continued fraction converges fast for x < (a + 1) / (a + b + 2); use the
  // symmetry I_x(a, b) = 1 - I_{1-x}(b, a) otherwise.
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - incomplete_beta(b, a, 1.0 - x);
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  double f = 1.0, c = 1.0, d = 0.0;
  for (int i = 0; i <= 2000; ++i) {
    const int m = i / 2;
    double num;
    if (i == 0) {
      num = 1.0;
    } else if (i % 2 == 0) {
      num = (m * (b - m) * x) / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
    } else {
      num = -((a + m) * (a + b + m) * x) / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
    }
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    const double cd = c * d;
    f *= cd;
    if (std::abs(1.0 - cd) < eps) break;
  }
  return std::exp(ln_front) * (f - 1.0) / a;
}

double student_t_cdf(double t, double df) {
  const double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
  return t >= 0.0 ? 1.0 - tail : tail;
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

TTest paired_ttest(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::SizeMismatch, "paired t-test samples differ in length");
  if (x.size() < 2) fail(ErrorKind::DegenerateSample, "paired t-test needs at least two pairs");
  std::vector<double> d(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] - y[i];
  const double m = mean(d);
  const double sd = sample_std(d);
  TTest out;
  out.df = static_cast<int>(d.size()) - 1;
  if (sd == 0.0) {
    if (m == 0.0) fail(ErrorKind::DegenerateSample, "paired differences are all zero");
    out.t = m > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    out.p = 0.0;
    return out;
  }
  out.t = m / (sd / std::sqrt(static_cast<double>(d.size())));
  out.p = incomplete_beta(out.df / 2.0, 0.5, out.df / (out.df + out.t * out.t));
  return out;
}

std::string to_json_line(const EpisodeRecord& r) {
  return json{{"case_id", r.case_id},       {"plane", r.plane_name},    {"policy", r.method},
              {"stop_iteration", r.stop_iteration}, {"chosen_step", r.chosen_step}, {"ang", r.ang},
              {"dis", r.dis},               {"ssim", r.ssim}}
      .dump();
}

EpisodeRecord record_from_json(const std::string& line) {
  EpisodeRecord r;
  try {
    const json j = json::parse(line);
    r.case_id = j.at("case_id").get<int>();
    r.plane_name = j.at("plane").get<std::string>();
    r.method = j.at("policy").get<std::string>();
    r.stop_iteration = j.at("stop_iteration").get<int>();
    r.chosen_step = j.at("chosen_step").get<int>();
    r.ang = j.at("ang").get<double>();
    r.dis = j.at("dis").get<double>();
    r.ssim = j.at("ssim").get<double>();
  } catch (const json::exception& e) {
    fail(ErrorKind::IoError, std::string("malformed episode record: ") + e.what());
  }
  return r;
}

const MethodRow* RunReport::find(const std::string& plane_name, const std::string& method) const {
  for (const auto& r : rows) {
    if (r.plane_name == plane_name && r.method == method) return &r;
  }
  return nullptr;
}

namespace {

Stat stat(const std::vector<double>& v) { return {mean(v), sample_std(v)}; }

}  // namespace

RunReport summarize(std::span<const EpisodeRecord> records) {
  std::vector<std::string> planes;
  std::map<std::string, std::vector<std::string>> methods;
  for (const auto& r : records) {
    if (std::find(planes.begin(), planes.end(), r.plane_name) == planes.end()) planes.push_back(r.plane_name);
    auto& m = methods[r.plane_name];
    if (std::find(m.begin(), m.end(), r.method) == m.end()) m.push_back(r.method);
  }
  std::sort(planes.begin(), planes.end());
  RunReport out;
  for (const auto& plane : planes) {
    std::map<std::string, std::map<int, double>> totals;
    for (const auto& method : methods[plane]) {
      std::vector<double> ang, dis, total, s, stop, chosen;
      for (const auto& r : records) {
        if (r.plane_name != plane || r.method != method) continue;
        ang.push_back(r.ang);
        dis.push_back(r.dis);
        total.push_back(r.ang + r.dis);
        s.push_back(r.ssim);
        stop.push_back(r.stop_iteration);
        chosen.push_back(r.chosen_step);
        totals[method][r.case_id] = r.ang + r.dis;
      }
      MethodRow row;
      row.plane_name = plane;
      row.method = method;
      row.n = static_cast<int>(ang.size());
      row.ang = stat(ang);
      row.dis = stat(dis);
      row.total = stat(total);
      row.ssim = stat(s);
      row.mean_stop_iteration = mean(stop);
      row.mean_chosen_step = mean(chosen);
      out.rows.push_back(std::move(row));
    }
    const auto& ms = methods[plane];
    for (std::size_t i = 0; i < ms.size(); ++i) {
      for (std::size_t j = i + 1; j < ms.size(); ++j) {
        std::vector<double> x, y;
        for (const auto& [id, v] : totals[ms[i]]) {
          const auto it = totals[ms[j]].find(id);
          if (it == totals[ms[j]].end()) continue;
          x.push_back(v);
          y.push_back(it->second);
        }
        PairTest pt{plane, ms[i], ms[j], static_cast<int>(x.size()), std::nullopt};
        try {
          pt.test = paired_ttest(x, y);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::DegenerateSample) throw;
        }
        out.tests.push_back(std::move(pt));
      }
    }
  }
  return out;
}

namespace {

json stat_json(const Stat& s) { return {{"mean", s.mean}, {"std", s.std}}; }

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string fmt(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string report_json(const RunReport& r) {
  json j;
  j["methods"] = json::array();
  for (const auto& row : r.rows) {
    j["methods"].push_back({{"plane", row.plane_name},
                            {"method", row.method},
                            {"n", row.n},
                            {"ang", stat_json(row.ang)},
                            {"dis", stat_json(row.dis)},
                            {"total", stat_json(row.total)},
                            {"ssim", stat_json(row.ssim)},
                            {"mean_stop_iteration", row.mean_stop_iteration},
                            {"mean_chosen_step", row.mean_chosen_step}});
  }
  j["paired_tests"] = json::array();
  for (const auto& t : r.tests) {
    json e{{"plane", t.plane_name}, {"a", t.a}, {"b", t.b}, {"n", t.n}};
    if (t.test) {
      e["t"] = number_or_null(t.test->t);
      e["df"] = t.test->df;
      e["p"] = t.test->p;
    } else {
      e["t"] = nullptr;
      e["df"] = nullptr;
      e["p"] = nullptr;
    }
    j["paired_tests"].push_back(std::move(e));
  }
  return j.dump(2);
}

std::string methods_csv(const RunReport& r) {
  std::ostringstream out;
  out << "plane,method,n,ang_mean,ang_std,dis_mean,dis_std,total_mean,total_std,ssim_mean,ssim_std,"
         "mean_stop_iteration,mean_chosen_step\n";
  for (const auto& row : r.rows) {
    out << row.plane_name << ',' << row.method << ',' << row.n << ',' << full(row.ang.mean) << ','
        << full(row.ang.std) << ',' << full(row.dis.mean) << ',' << full(row.dis.std) << ',' << full(row.total.mean)
        << ',' << full(row.total.std) << ',' << full(row.ssim.mean) << ',' << full(row.ssim.std) << ','
        << full(row.mean_stop_iteration) << ',' << full(row.mean_chosen_step) << '\n';
  }
  return out.str();
}

std::string tests_csv(const RunReport& r) {
  std::ostringstream out;
  out << "plane,a,b,n,t,df,p\n";
  for (const auto& t : r.tests) {
    out << t.plane_name << ',' << t.a << ',' << t.b << ',' << t.n << ',';
    if (t.test) {
      out << full(t.test->t) << ',' << t.test->df << ',' << full(t.test->p) << '\n';
    } else {
      out << ",,\n";
    }
  }
  return out.str();
}

std::string report_table(const RunReport& r) {
  std::ostringstream out;
  std::string plane;
  for (const auto& row : r.rows) {
    if (row.plane_name != plane) {
      plane = row.plane_name;
      out << "\nplane " << plane << "\n";
      out << "method                    Ang (deg)        Dis (mm)         SSIM             stop   g\n";
    }
    std::string name = row.method;
    name.resize(std::max<std::size_t>(name.size(), 24), ' ');
    out << name << "  " << fmt(row.ang.mean, 2) << " +- " << fmt(row.ang.std, 2) << "   " << fmt(row.dis.mean, 2)
        << " +- " << fmt(row.dis.std, 2) << "   " << fmt(row.ssim.mean, 3) << " +- " << fmt(row.ssim.std, 3) << "   "
        << fmt(row.mean_stop_iteration, 1) << "  " << fmt(row.mean_chosen_step, 1) << '\n';
  }
  if (!r.tests.empty()) {
    out << "\npaired t-tests on Ang + Dis\n";
    for (const auto& t : r.tests) {
      out << t.plane_name << "  " << t.a << " vs " << t.b << "  ";
      out << (t.test ? "p = " + fmt(t.test->p, 4) : std::string("degenerate")) << '\n';
    }
  }
  return out.str();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::IoError, "write failed: " + path.string());
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void write_report(const std::filesystem::path& dir, const RunReport& r) {
  std::filesystem::create_directories(dir);
  write_text(dir / "report.json", report_json(r) + "\n");
  write_text(dir / "methods.csv", methods_csv(r));
  write_text(dir / "tests.csv", tests_csv(r));
  write_text(dir / "report.txt", report_table(r));
}

std::string plot_svg(const EpisodeTrace& trace, std::span<const PlotMarker> markers,
                     std::span<const std::pair<int, int>> adt_predictions) {
  if (trace.empty() || !trace.consistent()) fail(ErrorKind::EmptyTrace, "cannot plot an empty trace");
  constexpr double W = 640, H = 360, L = 56, R = 56, T = 24, B = 40;
  const int n = std::max(trace.steps(), 1);
  double ymax = 0.0;
  for (std::size_t t = 0; t < trace.planes.size(); ++t) ymax = std::max(ymax, trace.ang[t] + trace.dis[t]);
  if (ymax <= 0.0) ymax = 1.0;
  auto x = [&](double step) { return L + (W - L - R) * step / n; };
  auto y = [&](double v) { return H - B - (H - T - B) * v / ymax; };
  auto ys = [&](double step) { return H - B - (H - T - B) * step / n; };

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\">\n";
  out << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "  <text x=\"" << L << "\" y=\"16\" font-size=\"12\">case " << trace.case_id << ' '
      << escape(trace.plane_name) << ' ' << escape(trace.init_mode) << "</text>\n";
  out << "  <line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  out << "  <line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  out << "  <text x=\"" << W / 2 << "\" y=\"" << H - 8 << "\" font-size=\"12\">step</text>\n";
  out << "  <text x=\"4\" y=\"" << T + 10 << "\" font-size=\"12\">Ang+Dis</text>\n";
  out << "  <text x=\"4\" y=\"" << y(ymax) + 4 << "\" font-size=\"10\">" << fmt(ymax, 1) << "</text>\n";
  out << "  <polyline class=\"error\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
  for (std::size_t t = 0; t < trace.planes.size(); ++t) {
    out << (t ? " " : "") << fmt(x(static_cast<double>(t)), 2) << ',' << fmt(y(trace.ang[t] + trace.dis[t]), 2);
  }
  out << "\"/>\n";
  if (!adt_predictions.empty()) {
    out << "  <polyline class=\"adt-prediction\" fill=\"none\" stroke=\"#2ca02c\" stroke-dasharray=\"4 2\" points=\"";
    for (std::size_t i = 0; i < adt_predictions.size(); ++i) {
      out << (i ? " " : "") << fmt(x(adt_predictions[i].first), 2) << ',' << fmt(ys(adt_predictions[i].second), 2);
    }
    out << "\"/>\n";
    out << "  <text x=\"" << W - R + 4 << "\" y=\"" << T + 10 << "\" font-size=\"10\">predicted step</text>\n";
  }
  const char* colours[] = {"#d62728", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2"};
  for (std::size_t i = 0; i < markers.size(); ++i) {
    const auto& m = markers[i];
    const double mx = x(m.step);
    out << "  <line class=\"marker\" data-policy=\"" << escape(m.policy) << "\" data-step=\"" << m.step
        << "\" data-stop-iteration=\"" << m.stop_iteration << "\" x1=\"" << fmt(mx, 2) << "\" y1=\"" << T
        << "\" x2=\"" << fmt(mx, 2) << "\" y2=\"" << H - B << "\" stroke=\"" << colours[i % 5]
        << "\" stroke-dasharray=\"3 3\"/>\n";
    out << "  <text x=\"" << fmt(mx + 3, 2) << "\" y=\"" << T + 12 + 12 * static_cast<double>(i)
        << "\" font-size=\"10\" fill=\"" << colours[i % 5] << "\">" << escape(m.policy) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

void emit_plot(const std::filesystem::path& path, const EpisodeTrace& trace, std::span<const PlotMarker> markers,
               std::span<const std::pair<int, int>> adt_predictions) {
  write_text(path, plot_svg(trace, markers, adt_predictions));
}

void write_pgm(const std::filesystem::path& path, const SliceImage& s) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  out << "P5\n" << s.size << ' ' << s.size << "\n255\n";
  for (double v : s.pixels) {
    const double c = std::clamp(v, 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  if (!out) fail(ErrorKind::IoError, "write failed: " + path.string());
}

}  // namespace planeloc::eval
