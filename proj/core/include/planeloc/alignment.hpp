#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "planeloc/geometry.hpp"
#include "planeloc/nn/network.hpp"
#include "planeloc/phantom.hpp"
#include "planeloc/volume.hpp"

namespace planeloc {

/// Per-voxel landmark response on an index-space grid, x-fastest like Volume.
struct Heatmap {
  Dims dims{0, 0, 0};
  std::vector<double> values;

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
  }
  double at(int i, int j, int k) const { return values[index(i, j, k)]; }
};

/// exp(-|v - landmark|^2 / (2 sigma^2)) at every voxel v. The landmark is in
/// index coordinates. Throws OutOfBounds outside the grid, InvalidSpec for
/// sigma <= 0.
Heatmap make_heatmap(const Dims& dims, const Vec3& landmark, double sigma);

/// Sum over voxels of the squared difference, averaged over the heatmaps.
/// Writes dL/dpred into `grad` when given. Throws ShapeMismatch.
double heatmap_loss(std::span<const Heatmap> pred, std::span<const Heatmap> gt,
                    std::vector<Heatmap>* grad = nullptr);

/// Index coordinates of the maximum; ties go to the lexicographically
/// smallest (i, j, k).
Vec3 extract_landmark(const Heatmap& h);

struct DetectorConfig {
  bool oracle = false;          // return ground-truth landmarks, no network
  int downsample = 4;           // average-pooling factor applied before the network
  double sigma = 2.0;           // heatmap width in detector-grid voxels
  std::vector<int> channels{8, 16, 16};
  int epochs = 40;
  double learning_rate = 1e-3;

  /// Throws InvalidConfig.
  void validate() const;
};

/// Shallow 3D heatmap regressor: conv3d/BN/ReLU blocks and a 1x1x1 head with
/// one output channel per landmark, on an average-pooled copy of the volume.
class LandmarkDetector {
 public:
  LandmarkDetector() = default;
  LandmarkDetector(DetectorConfig cfg, Dims volume_dims, std::vector<std::string> labels, std::uint64_t seed);

  const DetectorConfig& config() const { return cfg_; }
  const Dims& grid_dims() const { return grid_; }
  bool oracle() const { return cfg_.oracle; }

  /// Adam with batch size 1 over shuffled cases; returns the mean loss of
  /// each epoch. `on_epoch` receives (epoch, mean loss).
  std::vector<double> train(std::span<const PhantomCase> cases,
                            const std::function<void(int, double)>& on_epoch = {});

  /// Centred landmark coordinates. In oracle mode returns the case's ground truth.
  LandmarkSet detect(const PhantomCase& c);
  /// Network prediction for a bare volume. Throws ModelMissing in oracle mode.
  LandmarkSet detect(const Volume& v);
  /// Raw predicted heatmaps on the detector grid.
  std::vector<Heatmap> predict(const Volume& v);

  /// Pooled network input [1, 1, gz, gy, gx].
  nn::Tensor pooled_input(const Volume& v) const;
  /// Ground-truth heatmaps on the detector grid.
  std::vector<Heatmap> target_heatmaps(const Volume& v, const LandmarkSet& l) const;
  Vec3 grid_to_centred(const Volume& v, const Vec3& g) const;
  Vec3 centred_to_grid(const Volume& v, const Vec3& p) const;

  void save(const std::filesystem::path& path);
  void load(const std::filesystem::path& path);
  nn::Network& network() { return net_; }

 private:
  DetectorConfig cfg_;
  Dims volume_dims_{0, 0, 0};
  Dims grid_{0, 0, 0};
  std::vector<std::string> labels_;
  std::uint64_t seed_ = 0;
  nn::Network net_;
};

/// A training case chosen as the reference for one plane name.
struct Atlas {
  int case_id = 0;
  std::string plane_name;
  LandmarkSet landmarks;
  PlaneParams plane;
  std::vector<int> candidate_ids;
  std::vector<std::vector<double>> error_table;  // [i][j]: j registered onto i; 0 on the diagonal
  std::vector<double> mean_errors;               // per candidate, over j != i
};

struct AtlasCandidate {
  int id = 0;
  LandmarkSet landmarks;
  PlaneParams plane;
};

/// Angle (degrees) plus |d| difference (voxels) after moving `plane_j` with
/// the landmark fit from j onto i. Orientation of the moved normal follows plane_i.
double registration_error(const AtlasCandidate& i, const AtlasCandidate& j);

/// Candidate with the smallest mean registration error; ties to the lowest id.
/// Throws InsufficientCases for fewer than two candidates.
Atlas select_atlas(std::span<const AtlasCandidate> candidates, const std::string& plane_name);
Atlas select_atlas(std::span<const PhantomCase> cases, const std::string& plane_name);

std::string atlas_to_json(const Atlas& a);
/// Throws IoError on malformed text.
Atlas atlas_from_json(const std::string& text);

struct Alignment {
  RigidTransform case_to_atlas;
  RigidTransform atlas_to_case;
  PlaneParams init_plane;  // atlas frame
  /// The atlas plane expressed in the case frame.
  PlaneParams case_plane() const { return transform_plane(init_plane, atlas_to_case); }
};

/// Rigid landmark fit of the case onto the atlas; the starting plane is the
/// atlas plane. Throws InvalidSpec when labels differ, DegenerateConfiguration
/// for degenerate landmarks.
Alignment align_to_atlas(const LandmarkSet& case_landmarks, const Atlas& atlas);

}  // namespace planeloc
