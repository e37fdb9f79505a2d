#pragma once

// Shared helpers for the unit and acceptance tests: finite-difference
// gradient checks, tiny configs and scratch directories.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "planeloc/config.hpp"
#include "planeloc/nn/network.hpp"
#include "planeloc/phantom.hpp"

namespace testing {

/// ||a - n|| / max(||a|| + ||n||, floor). The floor keeps gradients that are
/// structurally zero (a bias feeding batch norm) from dividing noise by noise.
inline double rel_error(std::span<const double> a, std::span<const double> n, double floor = 1e-4) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nn), floor);
}

/// Central differences of `loss` with respect to every entry of `values`.
inline std::vector<double> numeric_grad(std::span<double> values, const std::function<double()>& loss,
                                        double h = 1e-6) {
  std::vector<double> g(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    values[i] = keep + h;
    const double up = loss();
    values[i] = keep - h;
    const double down = loss();
    values[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline planeloc::nn::Tensor random_tensor(planeloc::nn::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  planeloc::nn::Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (double& x : t.values()) x = n(rng);
  return t;
}

struct GradReport {
  double params = 0.0;  // worst relative error over parameter tensors
  double input = 0.0;
};

/// Checks backward() of a network against central differences of
/// L = sum(w * forward(x)) in training mode.
inline GradReport check_network(planeloc::nn::Network& net, const planeloc::nn::Tensor& x, std::uint64_t seed) {
  using namespace planeloc::nn;
  std::mt19937_64 rng(seed);
  Tensor probe = net.forward(x, Mode::Train);
  const Tensor w = random_tensor(probe.shape(), rng);
  auto loss = [&](const Tensor& in) {
    const Tensor y = net.forward(in, Mode::Train);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
    return s;
  };
  net.zero_grad();
  loss(x);
  const Tensor dx = net.backward(w);
  GradReport r;
  Tensor xin = x;
  const auto nx = numeric_grad(xin.values(), [&] { return loss(xin); });
  r.input = rel_error(dx.values(), nx);
  for (Parameter* p : net.parameters()) {
    const std::vector<double> analytic(p->grad.values().begin(), p->grad.values().end());
    const auto numeric = numeric_grad(p->value.values(), [&] { return loss(x); });
    r.params = std::max(r.params, rel_error(analytic, numeric));
  }
  return r;
}

/// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("planeloc_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline planeloc::PhantomSpec small_spec(std::uint64_t seed) {
  planeloc::PhantomSpec s;
  s.seed = seed;
  s.dims = {32, 32, 32};
  s.max_translation_vox = 1.5;
  return s;
}

/// A complete pipeline config that runs in seconds.
inline planeloc::RunConfig tiny_config(const std::filesystem::path& out, std::uint64_t seed = 3) {
  planeloc::RunConfig c = planeloc::desk_preset();
  c.seed = seed;
  c.output_dir = out.string();
  c.phantom.dims = {32, 32, 32};
  c.phantom.max_translation_vox = 1.5;
  c.split = {4, 1, 2};
  c.agent.network = planeloc::agent::QNetworkSpec::make(std::vector<int>{4, 8}, std::vector<int>{8});
  c.agent.state_size = 16;
  c.agent.max_steps = 12;
  c.agent.epochs = 2;
  c.agent.target_sync_interval = 20;
  c.agent.buffer_capacity = 200;
  c.detector.channels = {4, 4};
  c.detector.epochs = 2;
  c.termination.hidden = 4;
  c.termination.epochs = 3;
  c.termination.max_len = 12;
  c.termination_data.traces_per_case = 2;
  c.eval.plot_cases = 1;
  return c;
}

}  // namespace testing
