#include "planeloc/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "planeloc/error.hpp"
#include "planeloc/nn/checkpoint.hpp"
#include "planeloc/nn/optimizer.hpp"

namespace planeloc {

Heatmap make_heatmap(const Dims& dims, const Vec3& landmark, double sigma) {
  if (!(sigma > 0.0)) fail(ErrorKind::InvalidSpec, "heatmap sigma must be positive");
  for (int a = 0; a < 3; ++a) {
    if (!(landmark[a] >= 0.0 && landmark[a] <= dims[a] - 1)) {
      fail(ErrorKind::OutOfBounds, "landmark outside the heatmap grid");
    }
  }
  Heatmap h{dims, std::vector<double>(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2])};
  const double inv = 1.0 / (2.0 * sigma * sigma);
  std::size_t n = 0;
  for (int k = 0; k < dims[2]; ++k) {
    const double dz = k - landmark.z();
    for (int j = 0; j < dims[1]; ++j) {
      const double dy = j - landmark.y();
      for (int i = 0; i < dims[0]; ++i, ++n) {
        const double dx = i - landmark.x();
        h.values[n] = std::exp(-(dx * dx + dy * dy + dz * dz) * inv);
      }
    }
  }
  return h;
}

double heatmap_loss(std::span<const Heatmap> pred, std::span<const Heatmap> gt, std::vector<Heatmap>* grad) {
  if (pred.empty() || pred.size() != gt.size()) {
    fail(ErrorKind::ShapeMismatch, "heatmap loss needs equally many predicted and target heatmaps");
  }
  const double n = static_cast<double>(pred.size());
  if (grad) grad->clear();
  double loss = 0.0;
  for (std::size_t l = 0; l < pred.size(); ++l) {
    if (pred[l].dims != gt[l].dims || pred[l].values.size() != gt[l].values.size()) {
      fail(ErrorKind::ShapeMismatch, "heatmap dims differ");
    }
    Heatmap g{pred[l].dims, std::vector<double>(pred[l].values.size())};
    double sum = 0.0;
    for (std::size_t v = 0; v < pred[l].values.size(); ++v) {
      const double diff = pred[l].values[v] - gt[l].values[v];
      sum += diff * diff;
      g.values[v] = 2.0 * diff / n;
    }
    loss += sum;
    if (grad) grad->push_back(std::move(g));
  }
  return loss / n;
}

Vec3 extract_landmark(const Heatmap& h) {
  int bi = 0, bj = 0, bk = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < h.dims[0]; ++i) {
    for (int j = 0; j < h.dims[1]; ++j) {
      for (int k = 0; k < h.dims[2]; ++k) {
        const double v = h.at(i, j, k);
        if (v > best) {
          best = v;
          bi = i, bj = j, bk = k;
        }
      }
    }
  }
  return {static_cast<double>(bi), static_cast<double>(bj), static_cast<double>(bk)};
}

void DetectorConfig::validate() const {
  if (oracle) return;
  if (downsample < 1) fail(ErrorKind::InvalidConfig, "detector downsample must be at least 1");
  if (!(sigma > 0.0)) fail(ErrorKind::InvalidConfig, "detector sigma must be positive");
  if (channels.empty()) fail(ErrorKind::InvalidConfig, "detector needs at least one block");
  for (int c : channels) {
    if (c < 1) fail(ErrorKind::InvalidConfig, "detector channels must be positive");
  }
  if (epochs < 0 || !(learning_rate > 0.0)) fail(ErrorKind::InvalidConfig, "detector epochs / learning rate");
}

LandmarkDetector::LandmarkDetector(DetectorConfig cfg, Dims volume_dims, std::vector<std::string> labels,
                                   std::uint64_t seed)
    : cfg_(std::move(cfg)), volume_dims_(volume_dims), labels_(std::move(labels)), seed_(seed) {
  cfg_.validate();
  if (cfg_.oracle) return;
  for (int a = 0; a < 3; ++a) {
    grid_[a] = volume_dims_[a] / cfg_.downsample;
    if (grid_[a] < 4) fail(ErrorKind::InvalidConfig, "detector grid would be smaller than 4 voxels");
  }
  nn::NetworkSpec spec;
  for (int c : cfg_.channels) {
    spec.layers.push_back(nn::LayerSpec::conv3d(c, 3, 1));
    spec.layers.push_back(nn::LayerSpec::batch_norm());
    spec.layers.push_back(nn::LayerSpec::relu());
  }
  spec.layers.push_back(nn::LayerSpec::conv3d(static_cast<int>(labels_.size()), 1, 1, 0));
  net_ = nn::Network(spec, {1, grid_[2], grid_[1], grid_[0]}, seed);
}

nn::Tensor LandmarkDetector::pooled_input(const Volume& v) const {
  if (v.dims() != volume_dims_) fail(ErrorKind::ShapeMismatch, "volume dims differ from the detector's");
  const int f = cfg_.downsample;
  nn::Tensor out({1, 1, grid_[2], grid_[1], grid_[0]});
  const double norm = 1.0 / (f * f * f);
  std::size_t n = 0;
  for (int c = 0; c < grid_[2]; ++c) {
    for (int b = 0; b < grid_[1]; ++b) {
      for (int a = 0; a < grid_[0]; ++a, ++n) {
        double sum = 0.0;
        for (int k = c * f; k < (c + 1) * f; ++k) {
          for (int j = b * f; j < (b + 1) * f; ++j) {
            for (int i = a * f; i < (a + 1) * f; ++i) sum += v.at(i, j, k);
          }
        }
        out[n] = sum * norm;
      }
    }
  }
  return out;
}

Vec3 LandmarkDetector::centred_to_grid(const Volume& v, const Vec3& p) const {
  const double f = cfg_.downsample;
  return (v.to_index(p).array() - (f - 1.0) / 2.0).matrix() / f;
}

Vec3 LandmarkDetector::grid_to_centred(const Volume& v, const Vec3& g) const {
  const double f = cfg_.downsample;
  return v.to_centred((g * f).array() + (f - 1.0) / 2.0);
}

std::vector<Heatmap> LandmarkDetector::target_heatmaps(const Volume& v, const LandmarkSet& l) const {
  std::vector<Heatmap> out;
  for (const Vec3& p : l.points) {
    Vec3 g = centred_to_grid(v, p);
    for (int a = 0; a < 3; ++a) g[a] = std::clamp(g[a], 0.0, static_cast<double>(grid_[a] - 1));
    out.push_back(make_heatmap(grid_, g, cfg_.sigma));
  }
  return out;
}

namespace {

std::vector<Heatmap> split_channels(const nn::Tensor& y, const Dims& grid) {
  const std::size_t per = static_cast<std::size_t>(grid[0]) * grid[1] * grid[2];
  std::vector<Heatmap> out;
  for (int l = 0; l < y.dim(1); ++l) {
    const double* src = y.data() + per * l;
    out.push_back(Heatmap{grid, std::vector<double>(src, src + per)});
  }
  return out;
}

}  // namespace

std::vector<double> LandmarkDetector::train(std::span<const PhantomCase> cases,
                                            const std::function<void(int, double)>& on_epoch) {
  if (cfg_.oracle) return {};
  std::vector<nn::Tensor> inputs;
  std::vector<std::vector<Heatmap>> targets;
  for (const auto& c : cases) {
    inputs.push_back(pooled_input(c.volume));
    targets.push_back(target_heatmaps(c.volume, c.landmarks));
  }
  nn::OptimizerConfig oc;
  oc.learning_rate = cfg_.learning_rate;
  nn::Optimizer opt(oc, net_.parameters());
  std::mt19937_64 rng(seed_ ^ 0xd1b54a32d192ed03ULL);
  std::vector<std::size_t> order(cases.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> curve;
  for (int e = 0; e < cfg_.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t i : order) {
      net_.zero_grad();
      const nn::Tensor y = net_.forward(inputs[i], nn::Mode::Train);
      std::vector<Heatmap> grad;
      total += heatmap_loss(split_channels(y, grid_), targets[i], &grad);
      nn::Tensor dy(y.shape());
      const std::size_t per = grad.front().values.size();
      for (std::size_t l = 0; l < grad.size(); ++l) {
        std::copy(grad[l].values.begin(), grad[l].values.end(), dy.data() + per * l);
      }
      net_.backward(dy);
      opt.step();
    }
    const double mean = cases.empty() ? 0.0 : total / static_cast<double>(cases.size());
    curve.push_back(mean);
    if (on_epoch) on_epoch(e + 1, mean);
  }
  return curve;
}

std::vector<Heatmap> LandmarkDetector::predict(const Volume& v) {
  if (cfg_.oracle) fail(ErrorKind::ModelMissing, "oracle detector has no network");
  return split_channels(net_.forward(pooled_input(v), nn::Mode::Infer), grid_);
}

LandmarkSet LandmarkDetector::detect(const Volume& v) {
  LandmarkSet out;
  out.labels = labels_;
  for (const Heatmap& h : predict(v)) out.points.push_back(grid_to_centred(v, extract_landmark(h)));
  return out;
}

LandmarkSet LandmarkDetector::detect(const PhantomCase& c) {
  if (cfg_.oracle) return c.landmarks;
  return detect(c.volume);
}

void LandmarkDetector::save(const std::filesystem::path& path) {
  if (cfg_.oracle) fail(ErrorKind::ModelMissing, "oracle detector has nothing to save");
  nn::save_checkpoint(path, net_);
}

void LandmarkDetector::load(const std::filesystem::path& path) {
  if (cfg_.oracle) fail(ErrorKind::ModelMissing, "oracle detector has nothing to load");
  nn::load_checkpoint(path, net_);
}

double registration_error(const AtlasCandidate& i, const AtlasCandidate& j) {
  const RigidTransform t = solve_rigid(j.landmarks, i.landmarks);
  const PlaneParams moved = oriented_like(transform_plane(j.plane, t), i.plane);
  return angle_between(moved, i.plane) + std::abs(moved.d() - i.plane.d());
}

Atlas select_atlas(std::span<const AtlasCandidate> candidates, const std::string& plane_name) {
  const std::size_t n = candidates.size();
  if (n < 2) fail(ErrorKind::InsufficientCases, "atlas selection needs at least two training cases");
  Atlas a;
  a.plane_name = plane_name;
  a.error_table.assign(n, std::vector<double>(n, 0.0));
  std::size_t best = 0;
  for (std::size_t i = 0; i < n; ++i) {
    a.candidate_ids.push_back(candidates[i].id);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      a.error_table[i][j] = registration_error(candidates[i], candidates[j]);
      sum += a.error_table[i][j];
    }
    a.mean_errors.push_back(sum / static_cast<double>(n - 1));
    const bool better = a.mean_errors[i] < a.mean_errors[best] ||
                        (a.mean_errors[i] == a.mean_errors[best] && candidates[i].id < candidates[best].id);
    if (i > 0 && better) best = i;
  }
  a.case_id = candidates[best].id;
  a.landmarks = candidates[best].landmarks;
  a.plane = candidates[best].plane;
  return a;
}

Atlas select_atlas(std::span<const PhantomCase> cases, const std::string& plane_name) {
  std::vector<AtlasCandidate> c;
  for (const auto& pc : cases) c.push_back({pc.id, pc.landmarks, pc.plane(plane_name)});
  return select_atlas(c, plane_name);
}

namespace {

using nlohmann::json;

json plane_json(const PlaneParams& p) {
  return {{"alpha", p.alpha()}, {"beta", p.beta()}, {"gamma", p.gamma()}, {"d", p.d()}};
}

}  // namespace

std::string atlas_to_json(const Atlas& a) {
  json j;
  j["case_id"] = a.case_id;
  j["plane_name"] = a.plane_name;
  j["plane"] = plane_json(a.plane);
  j["landmarks"] = json::array();
  for (std::size_t i = 0; i < a.landmarks.size(); ++i) {
    const Vec3& p = a.landmarks.points[i];
    j["landmarks"].push_back({{"label", a.landmarks.labels[i]}, {"point", {p.x(), p.y(), p.z()}}});
  }
  j["candidate_ids"] = a.candidate_ids;
  j["mean_errors"] = a.mean_errors;
  j["error_table"] = a.error_table;
  return j.dump(2);
}

Atlas atlas_from_json(const std::string& text) {
  Atlas a;
  try {
    const json j = json::parse(text);
    a.case_id = j.at("case_id").get<int>();
    a.plane_name = j.at("plane_name").get<std::string>();
    const json& p = j.at("plane");
    a.plane = PlaneParams(p.at("alpha").get<double>(), p.at("beta").get<double>(), p.at("gamma").get<double>(),
                          p.at("d").get<double>());
    for (const json& l : j.at("landmarks")) {
      const auto pt = l.at("point").get<std::array<double, 3>>();
      a.landmarks.labels.push_back(l.at("label").get<std::string>());
      a.landmarks.points.emplace_back(pt[0], pt[1], pt[2]);
    }
    a.candidate_ids = j.at("candidate_ids").get<std::vector<int>>();
    a.mean_errors = j.at("mean_errors").get<std::vector<double>>();
    a.error_table = j.at("error_table").get<std::vector<std::vector<double>>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::IoError, std::string("malformed atlas record: ") + e.what());
  }
  return a;
}

Alignment align_to_atlas(const LandmarkSet& case_landmarks, const Atlas& atlas) {
  if (case_landmarks.labels != atlas.landmarks.labels) {
    fail(ErrorKind::InvalidSpec, "case landmark labels do not match the atlas");
  }
  Alignment out;
  out.case_to_atlas = solve_rigid(case_landmarks, atlas.landmarks);
  out.atlas_to_case = out.case_to_atlas.inverse();
  out.init_plane = atlas.plane;
  return out;
}

}  // namespace planeloc
