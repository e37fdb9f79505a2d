#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "planeloc/error.hpp"
#include "planeloc/nn/network.hpp"

namespace planeloc::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using Vec = Eigen::VectorXd;

void fill_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& x : t.values()) x = u(rng);
}

void require_batch(const Tensor& x, const Shape& per_sample, const char* layer) {
  bool ok = x.rank() == static_cast<int>(per_sample.size()) + 1;
  for (std::size_t i = 0; ok && i < per_sample.size(); ++i) ok = x.dim(static_cast<int>(i) + 1) == per_sample[i];
  if (!ok || x.dim(0) < 1) {
    fail(ErrorKind::ShapeMismatch, std::string(layer) + " expected [B]+" + shape_string(per_sample) +
                                       ", got " + shape_string(x.shape()));
  }
}

Shape with_batch(int batch, const Shape& s) {
  Shape out{batch};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

[[noreturn]] void no_cache(const char* layer) {
  fail(ErrorKind::NoForwardCache, std::string(layer) + ": backward without a training forward");
}

// 2D and 3D convolution share one implementation; a 2D layer is a 3D layer
// with unit depth.
class Conv final : public Layer {
 public:
  Conv(const LayerSpec& spec, const Shape& in, std::mt19937_64& rng, const std::string& name)
      : rank_(spec.kind == LayerKind::Conv3d ? 3 : 2), in_shape_(in) {
    if (static_cast<int>(in.size()) != rank_ + 1) {
      fail(ErrorKind::ShapeMismatch, "conv expects [C, spatial...], got " + shape_string(in));
    }
    if (spec.out < 1 || spec.kernel < 1 || spec.stride < 1) {
      fail(ErrorKind::ShapeMismatch, "conv needs positive channels, kernel and stride");
    }
    cin_ = in[0];
    cout_ = spec.out;
    const int pad = spec.padding < 0 ? spec.kernel / 2 : spec.padding;
    for (int a = 0; a < 3; ++a) {
      const bool used = rank_ == 3 || a > 0;
      k_[a] = used ? spec.kernel : 1;
      s_[a] = used ? spec.stride : 1;
      p_[a] = used ? pad : 0;
      in_[a] = rank_ == 3 ? in[1 + a] : (a == 0 ? 1 : in[a]);
      out_[a] = (in_[a] + 2 * p_[a] - k_[a]) / s_[a] + 1;
      if (out_[a] < 1) fail(ErrorKind::ShapeMismatch, "conv output would be empty");
    }
    kdim_ = cin_ * k_[0] * k_[1] * k_[2];
    pdim_ = out_[0] * out_[1] * out_[2];
    Shape wshape{cout_, cin_};
    for (int a = 3 - rank_; a < 3; ++a) wshape.push_back(k_[a]);
    weight_ = Parameter(name + ".weight", Tensor(wshape));
    bias_ = Parameter(name + ".bias", Tensor({cout_}));
    fill_uniform(weight_.value, std::sqrt(6.0 / kdim_), rng);
  }

  Shape output_shape() const override {
    if (rank_ == 3) return {cout_, out_[0], out_[1], out_[2]};
    return {cout_, out_[1], out_[2]};
  }

  Tensor forward(const Tensor& x, Mode mode) override {
    require_batch(x, in_shape_, "conv");
    const int batch = x.dim(0);
    Tensor y(with_batch(batch, output_shape()));
    std::vector<double> local;
    std::vector<double>& cols = mode == Mode::Train ? cols_ : local;
    cols.assign(static_cast<std::size_t>(batch) * kdim_ * pdim_, 0.0);
    const ConstMapMat w(weight_.value.data(), cout_, kdim_);
    const Eigen::Map<const Vec> b(bias_.value.data(), cout_);
    const std::size_t in_stride = static_cast<std::size_t>(cin_) * in_[0] * in_[1] * in_[2];
    for (int n = 0; n < batch; ++n) {
      double* c = cols.data() + static_cast<std::size_t>(n) * kdim_ * pdim_;
      im2col(x.data() + n * in_stride, c);
      MapMat out(y.data() + static_cast<std::size_t>(n) * cout_ * pdim_, cout_, pdim_);
      out.noalias() = w * ConstMapMat(c, kdim_, pdim_);
      out.colwise() += b;
    }
    if (mode == Mode::Train) batch_ = batch;
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    if (batch_ == 0) no_cache("conv");
    require_batch(dy, output_shape(), "conv backward");
    if (dy.dim(0) != batch_) fail(ErrorKind::ShapeMismatch, "conv backward batch mismatch");
    Tensor dx(with_batch(batch_, in_shape_));
    MapMat dw(weight_.grad.data(), cout_, kdim_);
    Eigen::Map<Vec> db(bias_.grad.data(), cout_);
    const ConstMapMat w(weight_.value.data(), cout_, kdim_);
    RowMat dcols(kdim_, pdim_);
    const std::size_t in_stride = static_cast<std::size_t>(cin_) * in_[0] * in_[1] * in_[2];
    for (int n = 0; n < batch_; ++n) {
      const ConstMapMat g(dy.data() + static_cast<std::size_t>(n) * cout_ * pdim_, cout_, pdim_);
      const ConstMapMat c(cols_.data() + static_cast<std::size_t>(n) * kdim_ * pdim_, kdim_, pdim_);
      dw.noalias() += g * c.transpose();
      db += g.rowwise().sum();
      dcols.noalias() = w.transpose() * g;
      col2im(dcols.data(), dx.data() + n * in_stride);
    }
    return dx;
  }

  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv>(*this); }
  void clear_cache() override {
    cols_.clear();
    batch_ = 0;
  }

 private:
  template <typename Visit>
  void for_each_tap(Visit&& visit) const {
    std::size_t row = 0;
    for (int c = 0; c < cin_; ++c) {
      for (int a = 0; a < k_[0]; ++a) {
        for (int b = 0; b < k_[1]; ++b) {
          for (int e = 0; e < k_[2]; ++e, ++row) {
            std::size_t col = 0;
            for (int od = 0; od < out_[0]; ++od) {
              const int id = od * s_[0] - p_[0] + a;
              for (int oh = 0; oh < out_[1]; ++oh) {
                const int ih = oh * s_[1] - p_[1] + b;
                const bool row_ok = id >= 0 && id < in_[0] && ih >= 0 && ih < in_[1];
                for (int ow = 0; ow < out_[2]; ++ow, ++col) {
                  const int iw = ow * s_[2] - p_[2] + e;
                  if (row_ok && iw >= 0 && iw < in_[2]) {
                    const std::size_t src =
                        ((static_cast<std::size_t>(c) * in_[0] + id) * in_[1] + ih) * in_[2] + iw;
                    visit(row * pdim_ + col, src);
                  }
                }
              }
            }
          }
        }
      }
    }
  }

  void im2col(const double* x, double* cols) const {
    for_each_tap([&](std::size_t dst, std::size_t src) { cols[dst] = x[src]; });
  }

  void col2im(const double* cols, double* dx) const {
    for_each_tap([&](std::size_t dst, std::size_t src) { dx[src] += cols[dst]; });
  }

  int rank_;
  Shape in_shape_;
  int cin_ = 0;
  int cout_ = 0;
  int k_[3]{};
  int s_[3]{};
  int p_[3]{};
  int in_[3]{};
  int out_[3]{};
  int kdim_ = 0;
  int pdim_ = 0;
  Parameter weight_;
  Parameter bias_;
  std::vector<double> cols_;
  int batch_ = 0;
};

class BatchNorm final : public Layer {
 public:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;

  BatchNorm(const Shape& in, const std::string& name) : in_shape_(in) {
    if (in.size() < 2) fail(ErrorKind::ShapeMismatch, "batch norm expects [C, spatial...]");
    channels_ = in[0];
    spatial_ = shape_size(in) / static_cast<std::size_t>(channels_);
    gamma_ = Parameter(name + ".gamma", Tensor({channels_}, 1.0));
    beta_ = Parameter(name + ".beta", Tensor({channels_}, 0.0));
    running_mean_ = Tensor({channels_}, 0.0);
    running_var_ = Tensor({channels_}, 1.0);
    mean_name_ = name + ".running_mean";
    var_name_ = name + ".running_var";
  }

  Shape output_shape() const override { return in_shape_; }

  Tensor forward(const Tensor& x, Mode mode) override {
    require_batch(x, in_shape_, "batch_norm");
    const int batch = x.dim(0);
    Tensor y(x.shape());
    const std::size_t count = static_cast<std::size_t>(batch) * spatial_;
    if (mode == Mode::Infer) {
      for (int c = 0; c < channels_; ++c) {
        const double inv = 1.0 / std::sqrt(running_var_[c] + kEps);
        const double scale = gamma_.value[c] * inv;
        const double shift = beta_.value[c] - running_mean_[c] * scale;
        for (int n = 0; n < batch; ++n) {
          const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * spatial_;
          for (std::size_t s = 0; s < spatial_; ++s) y[off + s] = x[off + s] * scale + shift;
        }
      }
      return y;
    }
    const bool train = mode == Mode::Train;
    if (train) {
      xhat_ = Tensor(x.shape());
      inv_std_.assign(static_cast<std::size_t>(channels_), 0.0);
    }
    for (int c = 0; c < channels_; ++c) {
      double mean = 0.0;
      for (int n = 0; n < batch; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * spatial_;
        for (std::size_t s = 0; s < spatial_; ++s) mean += x[off + s];
      }
      mean /= static_cast<double>(count);
      double var = 0.0;
      for (int n = 0; n < batch; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * spatial_;
        for (std::size_t s = 0; s < spatial_; ++s) {
          const double d = x[off + s] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      const double inv = 1.0 / std::sqrt(var + kEps);
      for (int n = 0; n < batch; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * spatial_;
        for (std::size_t s = 0; s < spatial_; ++s) {
          const double h = (x[off + s] - mean) * inv;
          if (train) xhat_[off + s] = h;
          y[off + s] = gamma_.value[c] * h + beta_.value[c];
        }
      }
      if (!train) continue;
      inv_std_[static_cast<std::size_t>(c)] = inv;
      const double unbiased = count > 1 ? var * count / (count - 1.0) : var;
      running_mean_[c] = (1.0 - kMomentum) * running_mean_[c] + kMomentum * mean;
      running_var_[c] = (1.0 - kMomentum) * running_var_[c] + kMomentum * unbiased;
    }
    if (train) batch_ = batch;
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    if (batch_ == 0) no_cache("batch_norm");
    require_batch(dy, in_shape_, "batch_norm backward");
    Tensor dx(dy.shape());
    const double count = static_cast<double>(batch_) * static_cast<double>(spatial_);
    for (int c = 0; c < channels_; ++c) {
      double sum_dy = 0.0;
      double sum_dy_h = 0.0;
      for (int n = 0; n < batch_; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * spatial_;
        for (std::size_t s = 0; s < spatial_; ++s) {
          sum_dy += dy[off + s];
          sum_dy_h += dy[off + s] * xhat_[off + s];
        }
      }
      gamma_.grad[c] += sum_dy_h;
      beta_.grad[c] += sum_dy;
      const double k = gamma_.value[c] * inv_std_[static_cast<std::size_t>(c)] / count;
      for (int n = 0; n < batch_; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * spatial_;
        for (std::size_t s = 0; s < spatial_; ++s) {
          dx[off + s] = k * (count * dy[off + s] - sum_dy - xhat_[off + s] * sum_dy_h);
        }
      }
    }
    return dx;
  }

  std::vector<Parameter*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<std::pair<std::string, Tensor*>> buffers() override {
    return {{mean_name_, &running_mean_}, {var_name_, &running_var_}};
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm>(*this); }
  void clear_cache() override {
    xhat_ = Tensor();
    batch_ = 0;
  }

 private:
  Shape in_shape_;
  int channels_ = 0;
  std::size_t spatial_ = 0;
  Parameter gamma_;
  Parameter beta_;
  Tensor running_mean_;
  Tensor running_var_;
  std::string mean_name_;
  std::string var_name_;
  Tensor xhat_;
  std::vector<double> inv_std_;
  int batch_ = 0;
};

class Relu final : public Layer {
 public:
  explicit Relu(const Shape& in) : in_shape_(in) {}

  Shape output_shape() const override { return in_shape_; }

  Tensor forward(const Tensor& x, Mode mode) override {
    require_batch(x, in_shape_, "relu");
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    if (mode == Mode::Train) {
      input_ = x;
      cached_ = true;
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    if (!cached_) no_cache("relu");
    if (dy.shape() != input_.shape()) fail(ErrorKind::ShapeMismatch, "relu backward shape");
    Tensor dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = input_[i] > 0.0 ? dy[i] : 0.0;
    return dx;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }
  void clear_cache() override {
    input_ = Tensor();
    cached_ = false;
  }

 private:
  Shape in_shape_;
  Tensor input_;
  bool cached_ = false;
};

class GlobalAvgPool final : public Layer {
 public:
  explicit GlobalAvgPool(const Shape& in) : in_shape_(in) {
    if (in.size() < 2) fail(ErrorKind::ShapeMismatch, "global pooling expects [C, spatial...]");
    channels_ = in[0];
    spatial_ = shape_size(in) / static_cast<std::size_t>(channels_);
  }

  Shape output_shape() const override { return {channels_}; }

  Tensor forward(const Tensor& x, Mode mode) override {
    require_batch(x, in_shape_, "global_avg_pool");
    const int batch = x.dim(0);
    Tensor y({batch, channels_});
    for (int n = 0; n < batch; ++n) {
      for (int c = 0; c < channels_; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * spatial_;
        double sum = 0.0;
        for (std::size_t s = 0; s < spatial_; ++s) sum += x[off + s];
        y[static_cast<std::size_t>(n) * channels_ + c] = sum / static_cast<double>(spatial_);
      }
    }
    if (mode == Mode::Train) batch_ = batch;
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    if (batch_ == 0) no_cache("global_avg_pool");
    require_batch(dy, {channels_}, "global_avg_pool backward");
    Tensor dx(with_batch(batch_, in_shape_));
    const double scale = 1.0 / static_cast<double>(spatial_);
    for (int n = 0; n < batch_; ++n) {
      for (int c = 0; c < channels_; ++c) {
        const double g = dy[static_cast<std::size_t>(n) * channels_ + c] * scale;
        const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * spatial_;
        for (std::size_t s = 0; s < spatial_; ++s) dx[off + s] = g;
      }
    }
    return dx;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
  void clear_cache() override { batch_ = 0; }

 private:
  Shape in_shape_;
  int channels_ = 0;
  std::size_t spatial_ = 0;
  int batch_ = 0;
};

// Flattens any per-sample shape.
class Linear final : public Layer {
 public:
  Linear(const LayerSpec& spec, const Shape& in, std::mt19937_64& rng, const std::string& name)
      : in_shape_(in), in_(static_cast<int>(shape_size(in))), out_(spec.out) {
    if (out_ < 1 || in_ < 1) fail(ErrorKind::ShapeMismatch, "linear needs positive widths");
    weight_ = Parameter(name + ".weight", Tensor({out_, in_}));
    bias_ = Parameter(name + ".bias", Tensor({out_}));
    fill_uniform(weight_.value, std::sqrt(6.0 / in_), rng);
  }

  Shape output_shape() const override { return {out_}; }

  Tensor forward(const Tensor& x, Mode mode) override {
    require_batch(x, in_shape_, "linear");
    const int batch = x.dim(0);
    Tensor y({batch, out_});
    const ConstMapMat xm(x.data(), batch, in_);
    const ConstMapMat w(weight_.value.data(), out_, in_);
    MapMat ym(y.data(), batch, out_);
    ym.noalias() = xm * w.transpose();
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias_.value.data(), out_);
    if (mode == Mode::Train) {
      input_ = x;
      cached_ = true;
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    if (!cached_) no_cache("linear");
    const int batch = input_.dim(0);
    if (dy.rank() != 2 || dy.dim(0) != batch || dy.dim(1) != out_) {
      fail(ErrorKind::ShapeMismatch, "linear backward shape");
    }
    const ConstMapMat g(dy.data(), batch, out_);
    const ConstMapMat xm(input_.data(), batch, in_);
    MapMat(weight_.grad.data(), out_, in_).noalias() += g.transpose() * xm;
    Eigen::Map<Eigen::RowVectorXd>(bias_.grad.data(), out_) += g.colwise().sum();
    Tensor dx(input_.shape());
    MapMat(dx.data(), batch, in_).noalias() = g * ConstMapMat(weight_.value.data(), out_, in_);
    return dx;
  }

  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }
  void clear_cache() override {
    input_ = Tensor();
    cached_ = false;
  }

 private:
  Shape in_shape_;
  int in_;
  int out_;
  Parameter weight_;
  Parameter bias_;
  Tensor input_;
  bool cached_ = false;
};

}  // namespace

std::unique_ptr<Layer> make_recurrent(const LayerSpec& spec, const Shape& in, std::mt19937_64& rng,
                                      const std::string& name);

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, const Shape& input_shape,
                                  std::mt19937_64& rng, const std::string& name) {
  switch (spec.kind) {
    case LayerKind::Conv2d:
    case LayerKind::Conv3d: return std::make_unique<Conv>(spec, input_shape, rng, name);
    case LayerKind::BatchNorm: return std::make_unique<BatchNorm>(input_shape, name);
    case LayerKind::Relu: return std::make_unique<Relu>(input_shape);
    case LayerKind::GlobalAvgPool: return std::make_unique<GlobalAvgPool>(input_shape);
    case LayerKind::Linear: return std::make_unique<Linear>(spec, input_shape, rng, name);
    case LayerKind::Recurrent: return make_recurrent(spec, input_shape, rng, name);
  }
  fail(ErrorKind::InvalidSpec, "unknown layer kind");
}

}  // namespace planeloc::nn
