#include "planeloc/nn/optimizer.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "../binary_io.hpp"
#include "planeloc/error.hpp"

namespace planeloc::nn {

Optimizer::Optimizer(OptimizerConfig config, std::vector<Parameter*> params)
    : config_(config), params_(std::move(params)) {
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Optimizer::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Parameter& p = *params_[i];
    if (p.value.shape() != m_[i].shape() || p.grad.shape() != p.value.shape()) {
      fail(ErrorKind::ShapeMismatch, "optimizer state does not match parameter " + p.name);
    }
  }
  double scale = 1.0;
  if (config_.grad_clip > 0.0) {
    double sq = 0.0;
    for (const Parameter* p : params_) {
      for (double g : p->grad.values()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > config_.grad_clip) scale = config_.grad_clip / norm;
  }
  ++steps_;
  const double lr = config_.learning_rate;
  if (config_.kind == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = *params_[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        double& vel = m_[i][k];
        vel = config_.momentum * vel + scale * p.grad[k];
        p.value[k] -= lr * vel;
      }
    }
    return;
  }
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = scale * p.grad[k];
      double& m = m_[i][k];
      double& v = v_[i][k];
      m = b1 * m + (1.0 - b1) * g;
      v = b2 * v + (1.0 - b2) * g * g;
      p.value[k] -= lr * (m / c1) / (std::sqrt(v / c2) + config_.epsilon);
    }
  }
}

void Optimizer::save_state(std::ostream& out) const {
  detail::write_le<std::int64_t>(out, steps_);
  detail::write_le<std::uint64_t>(out, m_.size());
  for (std::size_t i = 0; i < m_.size(); ++i) {
    detail::write_le<std::uint64_t>(out, m_[i].size());
    for (double x : m_[i].values()) detail::write_le<double>(out, x);
    for (double x : v_[i].values()) detail::write_le<double>(out, x);
  }
}

void Optimizer::load_state(std::istream& in) {
  steps_ = detail::read_le<std::int64_t>(in);
  if (detail::read_le<std::uint64_t>(in) != m_.size()) {
    fail(ErrorKind::ShapeMismatch, "optimizer state has a different parameter count");
  }
  for (std::size_t i = 0; i < m_.size(); ++i) {
    if (detail::read_le<std::uint64_t>(in) != m_[i].size()) {
      fail(ErrorKind::ShapeMismatch, "optimizer moment size mismatch");
    }
    for (double& x : m_[i].values()) x = detail::read_le<double>(in);
    for (double& x : v_[i].values()) x = detail::read_le<double>(in);
  }
}

}  // namespace planeloc::nn
