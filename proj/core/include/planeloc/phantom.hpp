#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "planeloc/geometry.hpp"
#include "planeloc/volume.hpp"

namespace planeloc {

/// Recipe for one procedurally generated case.
///
/// The canonical structure is an ellipsoid shell holding three spheres of
/// distinct radius and brightness plus one bar. Its coordinates scale with the
/// smallest volume edge, so the same spec renders at 32^3 or 64^3.
struct PhantomSpec {
  std::uint64_t seed = 0;
  Dims dims{32, 32, 32};
  double max_rotation_deg = 30.0;
  double max_translation_vox = 2.0;
  double noise_sigma = 0.03;
  double speckle_strength = 0.25;
  int n_landmarks = 3;  // 3 sphere centres, then the two bar end points
  int n_planes = 2;     // "spheres", then "bar"

  /// Throws InvalidSpec.
  void validate() const;
};

struct PhantomCase {
  int id = 0;
  std::uint64_t seed = 0;
  Volume volume;
  LandmarkSet landmarks;
  std::vector<NamedPlane> gt_planes;
  RigidTransform pose;  // canonical -> case

  std::string name() const;
  /// Throws InvalidSpec when the case has no plane of that name.
  const PlaneParams& plane(const std::string& plane_name) const;
};

/// Landmarks of the unposed structure for these dims.
LandmarkSet canonical_landmarks(const Dims& dims, int n_landmarks);
/// Target planes of the unposed structure.
std::vector<NamedPlane> canonical_planes(const Dims& dims, int n_planes);

/// Noise-free intensity of the unposed structure at a centred point.
double canonical_intensity(const Dims& dims, const Vec3& x);

/// Rotation axis/angle and translation drawn from the PhantomSpec pose range.
RigidTransform sample_pose(const PhantomSpec& spec);

/// Deterministic in `spec` (including the seed). Throws InvalidSpec.
PhantomCase generate(const PhantomSpec& spec, int id = 0);

struct Split {
  int train = 0;
  int val = 0;
  int test = 0;
  int total() const { return train + val + test; }
};

struct Dataset {
  std::vector<PhantomCase> train;
  std::vector<PhantomCase> val;
  std::vector<PhantomCase> test;
};

/// Case i uses seed spec.seed + i; the first `split.train` ids go to train,
/// the next `split.val` to val, the rest to test. Throws InvalidSplit when
/// n != split total.
Dataset generate_dataset(const PhantomSpec& spec, int n, const Split& split);

/// Writes `<dir>/<name>.vol` and the sidecar `<dir>/<name>.json`.
void write_case(const std::filesystem::path& dir, const PhantomCase& c);
/// Reads a case written by write_case. Throws IoError.
PhantomCase read_case(const std::filesystem::path& dir, const std::string& name);

}  // namespace planeloc
