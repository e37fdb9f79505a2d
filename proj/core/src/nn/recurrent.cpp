#include <cmath>

#include <Eigen/Core>

#include "planeloc/error.hpp"
#include "planeloc/nn/network.hpp"

namespace planeloc::nn {
namespace {

using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using ConstMapRow = Eigen::Map<const RowMat>;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Stacked vanilla (tanh) or LSTM cells over [B, T, F] input. Matrices inside
// are feature x batch.
class Recurrent final : public Layer {
 public:
  Recurrent(const LayerSpec& spec, const Shape& in, std::mt19937_64& rng, const std::string& name)
      : cell_(spec.cell), hidden_(spec.out), layers_(spec.layers), sequence_output_(spec.sequence_output) {
    if (in.size() != 2) fail(ErrorKind::ShapeMismatch, "recurrent expects [T, F], got " + shape_string(in));
    if (hidden_ < 1 || layers_ < 1) fail(ErrorKind::ShapeMismatch, "recurrent needs hidden units and layers");
    steps_ = in[0];
    features_ = in[1];
    const int gates = cell_ == CellKind::Lstm ? 4 : 1;
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (int l = 0; l < layers_; ++l) {
      const int fin = l == 0 ? features_ : hidden_;
      const std::string p = name + ".l" + std::to_string(l);
      LayerParams lp{Parameter(p + ".w_ih", Tensor({gates * hidden_, fin})),
                     Parameter(p + ".w_hh", Tensor({gates * hidden_, hidden_})),
                     Parameter(p + ".bias", Tensor({gates * hidden_}))};
      for (double& x : lp.w_ih.value.values()) x = u(rng);
      for (double& x : lp.w_hh.value.values()) x = u(rng);
      for (double& x : lp.bias.value.values()) x = u(rng);
      if (cell_ == CellKind::Lstm) {
        for (int h = 0; h < hidden_; ++h) lp.bias.value[static_cast<std::size_t>(hidden_ + h)] += 1.0;
      }
      params_.push_back(std::move(lp));
    }
  }

  Shape output_shape() const override {
    if (sequence_output_) return {steps_, hidden_};
    return {hidden_};
  }

  Tensor forward(const Tensor& x, Mode mode) override {
    if (x.rank() != 3 || x.dim(1) != steps_ || x.dim(2) != features_ || x.dim(0) < 1) {
      fail(ErrorKind::ShapeMismatch, "recurrent expected [B, " + std::to_string(steps_) + ", " +
                                         std::to_string(features_) + "], got " + shape_string(x.shape()));
    }
    const int batch = x.dim(0);
    std::vector<Mat> seq(static_cast<std::size_t>(steps_), Mat(features_, batch));
    for (int t = 0; t < steps_; ++t) {
      for (int b = 0; b < batch; ++b) {
        for (int f = 0; f < features_; ++f) {
          seq[t](f, b) = x[(static_cast<std::size_t>(b) * steps_ + t) * features_ + f];
        }
      }
    }
    std::vector<LayerCache> caches(static_cast<std::size_t>(layers_));
    for (int l = 0; l < layers_; ++l) {
      caches[l] = run_layer(l, seq, batch);
      seq = caches[l].h;
    }
    Tensor y = sequence_output_ ? Tensor({batch, steps_, hidden_}) : Tensor({batch, hidden_});
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < hidden_; ++h) {
        if (sequence_output_) {
          for (int t = 0; t < steps_; ++t) {
            y[(static_cast<std::size_t>(b) * steps_ + t) * hidden_ + h] = seq[t](h, b);
          }
        } else {
          y[static_cast<std::size_t>(b) * hidden_ + h] = seq[steps_ - 1](h, b);
        }
      }
    }
    if (mode == Mode::Train) {
      caches_ = std::move(caches);
      batch_ = batch;
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    if (batch_ == 0) fail(ErrorKind::NoForwardCache, "recurrent: backward without a training forward");
    const Shape expect = sequence_output_ ? Shape{batch_, steps_, hidden_} : Shape{batch_, hidden_};
    if (dy.shape() != expect) fail(ErrorKind::ShapeMismatch, "recurrent backward shape");
    std::vector<Mat> dseq(static_cast<std::size_t>(steps_), Mat::Zero(hidden_, batch_));
    for (int b = 0; b < batch_; ++b) {
      for (int h = 0; h < hidden_; ++h) {
        if (sequence_output_) {
          for (int t = 0; t < steps_; ++t) {
            dseq[t](h, b) = dy[(static_cast<std::size_t>(b) * steps_ + t) * hidden_ + h];
          }
        } else {
          dseq[steps_ - 1](h, b) = dy[static_cast<std::size_t>(b) * hidden_ + h];
        }
      }
    }
    for (int l = layers_ - 1; l >= 0; --l) dseq = backward_layer(l, dseq);
    Tensor dx({batch_, steps_, features_});
    for (int t = 0; t < steps_; ++t) {
      for (int b = 0; b < batch_; ++b) {
        for (int f = 0; f < features_; ++f) {
          dx[(static_cast<std::size_t>(b) * steps_ + t) * features_ + f] = dseq[t](f, b);
        }
      }
    }
    return dx;
  }

  std::vector<Parameter*> parameters() override {
    std::vector<Parameter*> out;
    for (auto& lp : params_) {
      out.push_back(&lp.w_ih);
      out.push_back(&lp.w_hh);
      out.push_back(&lp.bias);
    }
    return out;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Recurrent>(*this); }
  void clear_cache() override {
    caches_.clear();
    batch_ = 0;
  }

 private:
  struct LayerParams {
    Parameter w_ih;
    Parameter w_hh;
    Parameter bias;
  };

  struct LayerCache {
    std::vector<Mat> x;      // inputs per step
    std::vector<Mat> gates;  // activated gates (i, f, g, o) or tanh output
    std::vector<Mat> c;      // cell states
    std::vector<Mat> tanh_c;
    std::vector<Mat> h;      // outputs per step
  };

  LayerCache run_layer(int l, const std::vector<Mat>& input, int batch) const {
    const LayerParams& lp = params_[l];
    const int rows = static_cast<int>(lp.w_ih.value.dim(0));
    const ConstMapRow wih(lp.w_ih.value.data(), rows, lp.w_ih.value.dim(1));
    const ConstMapRow whh(lp.w_hh.value.data(), rows, hidden_);
    const Eigen::Map<const Eigen::VectorXd> bias(lp.bias.value.data(), rows);
    LayerCache cache;
    cache.x = input;
    Mat h = Mat::Zero(hidden_, batch);
    Mat c = Mat::Zero(hidden_, batch);
    const int H = hidden_;
    for (int t = 0; t < steps_; ++t) {
      Mat z = wih * input[t] + whh * h;
      z.colwise() += bias;
      if (cell_ == CellKind::Lstm) {
        for (Eigen::Index j = 0; j < z.cols(); ++j) {
          for (int k = 0; k < H; ++k) {
            z(k, j) = sigmoid(z(k, j));
            z(H + k, j) = sigmoid(z(H + k, j));
            z(2 * H + k, j) = std::tanh(z(2 * H + k, j));
            z(3 * H + k, j) = sigmoid(z(3 * H + k, j));
          }
        }
        c = z.middleRows(H, H).cwiseProduct(c) + z.topRows(H).cwiseProduct(z.middleRows(2 * H, H));
        Mat tc = c.array().tanh().matrix();
        h = z.bottomRows(H).cwiseProduct(tc);
        cache.c.push_back(c);
        cache.tanh_c.push_back(std::move(tc));
      } else {
        z = z.array().tanh().matrix();
        h = z;
      }
      cache.gates.push_back(std::move(z));
      cache.h.push_back(h);
    }
    return cache;
  }

  std::vector<Mat> backward_layer(int l, const std::vector<Mat>& dh_out) {
    LayerParams& lp = params_[l];
    const LayerCache& cache = caches_[l];
    const int rows = static_cast<int>(lp.w_ih.value.dim(0));
    const int fin = static_cast<int>(lp.w_ih.value.dim(1));
    const int H = hidden_;
    const ConstMapRow wih(lp.w_ih.value.data(), rows, fin);
    const ConstMapRow whh(lp.w_hh.value.data(), rows, H);
    MapRow dwih(lp.w_ih.grad.data(), rows, fin);
    MapRow dwhh(lp.w_hh.grad.data(), rows, H);
    Eigen::Map<Eigen::VectorXd> db(lp.bias.grad.data(), rows);

    std::vector<Mat> dx(static_cast<std::size_t>(steps_));
    Mat dh_next = Mat::Zero(H, batch_);
    Mat dc_next = Mat::Zero(H, batch_);
    const Mat zeros = Mat::Zero(H, batch_);
    for (int t = steps_ - 1; t >= 0; --t) {
      const Mat dh = dh_out[t] + dh_next;
      const Mat& h_prev = t > 0 ? cache.h[t - 1] : zeros;
      const Mat& g = cache.gates[t];
      Mat dz(rows, batch_);
      if (cell_ == CellKind::Lstm) {
        const Mat& c_prev = t > 0 ? cache.c[t - 1] : zeros;
        const Mat& tc = cache.tanh_c[t];
        const auto i = g.topRows(H).array();
        const auto f = g.middleRows(H, H).array();
        const auto gg = g.middleRows(2 * H, H).array();
        const auto o = g.bottomRows(H).array();
        const Eigen::ArrayXXd dc = dh.array() * o * (1.0 - tc.array().square()) + dc_next.array();
        dz.topRows(H) = (dc * gg * i * (1.0 - i)).matrix();
        dz.middleRows(H, H) = (dc * c_prev.array() * f * (1.0 - f)).matrix();
        dz.middleRows(2 * H, H) = (dc * i * (1.0 - gg.square())).matrix();
        dz.bottomRows(H) = (dh.array() * tc.array() * o * (1.0 - o)).matrix();
        dc_next = (dc * f).matrix();
      } else {
        dz = (dh.array() * (1.0 - g.array().square())).matrix();
      }
      dwih.noalias() += dz * cache.x[t].transpose();
      dwhh.noalias() += dz * h_prev.transpose();
      db += dz.rowwise().sum();
      dx[t] = wih.transpose() * dz;
      dh_next = whh.transpose() * dz;
    }
    return dx;
  }

  CellKind cell_;
  int hidden_;
  int layers_;
  bool sequence_output_;
  int steps_ = 0;
  int features_ = 0;
  std::vector<LayerParams> params_;
  std::vector<LayerCache> caches_;
  int batch_ = 0;
};

}  // namespace

std::unique_ptr<Layer> make_recurrent(const LayerSpec& spec, const Shape& in, std::mt19937_64& rng,
                                      const std::string& name) {
  return std::make_unique<Recurrent>(spec, in, rng, name);
}

}  // namespace planeloc::nn
