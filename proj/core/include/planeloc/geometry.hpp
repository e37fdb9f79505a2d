#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace planeloc {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Physical edge length of one voxel. Volumes are isotropic.
inline constexpr double kVoxelSizeMm = 0.5;

/// A plane n . x = d in volume-centred voxel coordinates.
///
/// The three angles are the free parameters the agent moves. The normal is the
/// normalized vector (cos alpha, cos beta, cos gamma); after single-angle
/// actions the cosines no longer form a unit vector, so the normal is always
/// renormalized rather than read off directly. `d` is the signed distance from
/// the volume centre along that normal, in voxels.
class PlaneParams {
 public:
  /// Normal along +x through the origin.
  PlaneParams();

  /// Throws DegenerateNormal when the cosine vector has norm below 1e-6.
  PlaneParams(double alpha_deg, double beta_deg, double gamma_deg, double d_vox);

  /// Builds the direction-cosine form of a unit (or non-zero) normal.
  static PlaneParams from_normal(const Vec3& normal, double d_vox);

  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  double gamma() const { return gamma_; }
  double d() const { return d_; }
  const Vec3& normal() const { return normal_; }

  /// Closest point of the plane to the volume centre.
  Vec3 foot_point() const { return d_ * normal_; }

  /// (alpha, beta, gamma, d): the vector P the reward is measured on.
  std::array<double, 4> as_array() const { return {alpha_, beta_, gamma_, d_}; }

  PlaneParams with_d(double d_vox) const { return {alpha_, beta_, gamma_, d_vox}; }

  friend bool operator==(const PlaneParams& a, const PlaneParams& b) {
    return a.alpha_ == b.alpha_ && a.beta_ == b.beta_ && a.gamma_ == b.gamma_ && a.d_ == b.d_;
  }

 private:
  double alpha_;
  double beta_;
  double gamma_;
  double d_;
  Vec3 normal_;
};

struct NamedPlane {
  std::string name;
  PlaneParams plane;
};

struct StepSizes {
  double angle_deg = 1.0;
  double distance_vox = 0.5;
};

/// Per-component weights of the (alpha, beta, gamma, d) distance.
struct ParamWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
  double d = 1.0;
};

class PlaneAction {
 public:
  static constexpr int kCount = 8;

  // Even indices increase a parameter, odd indices decrease it.
  enum Kind : int {
    kAlphaPlus = 0,
    kAlphaMinus = 1,
    kBetaPlus = 2,
    kBetaMinus = 3,
    kGammaPlus = 4,
    kGammaMinus = 5,
    kDPlus = 6,
    kDMinus = 7,
  };

  /// Throws IndexOutOfRange outside [0, 7].
  explicit PlaneAction(int index);

  int index() const { return index_; }
  /// 0 = alpha, 1 = beta, 2 = gamma, 3 = d.
  int parameter() const { return index_ / 2; }
  int sign() const { return index_ % 2 == 0 ? 1 : -1; }
  PlaneAction inverse() const { return PlaneAction(index_ ^ 1); }
  const char* name() const;

  friend bool operator==(PlaneAction a, PlaneAction b) { return a.index_ == b.index_; }

 private:
  int index_;
};

/// Angle between normals in degrees, in [0, 180].
double angle_between(const PlaneParams& p, const PlaneParams& g);

/// |d_p - d_g| converted to millimetres.
double distance_between(const PlaneParams& p, const PlaneParams& g);

/// Throws DegenerateNormal when the moved cosine vector collapses.
PlaneParams apply_action(const PlaneParams& p, PlaneAction a, const StepSizes& steps = {});

double param_distance(const PlaneParams& p, const PlaneParams& g, const ParamWeights& w = {});

/// sgn(|P_prev - P_g| - |P_cur - P_g|) in {-1, 0, +1}.
int reward(const PlaneParams& prev, const PlaneParams& cur, const PlaneParams& gt,
           const ParamWeights& w = {});

/// Flips (n, d) so the largest-magnitude normal component is positive.
PlaneParams canonicalize(const PlaneParams& p);

/// Flips (n, d) of `p` when its normal points away from `ref`'s normal. The
/// returned plane is the same geometric plane.
PlaneParams oriented_like(const PlaneParams& p, const PlaneParams& ref);

/// Angle (degrees) and distance (mm) after orienting `p` like `g`.
struct PlaneError {
  double ang = 0.0;
  double dis = 0.0;
  double sum() const { return ang + dis; }
};
PlaneError plane_error(const PlaneParams& p, const PlaneParams& g);

/// x -> R x + t. Rotation is proper orthonormal.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  /// Throws DegenerateConfiguration unless R^T R = I and det R = 1 within 1e-9.
  static RigidTransform checked(const Mat3& rotation, const Vec3& translation);

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  RigidTransform inverse() const;
};

/// (a * b).apply(x) == a.apply(b.apply(x)).
RigidTransform operator*(const RigidTransform& a, const RigidTransform& b);

/// Rotation of `angle_deg` degrees about `axis` (normalized internally).
Mat3 axis_angle_rotation(const Vec3& axis, double angle_deg);

/// Rotation angle of R in degrees.
double rotation_angle_deg(const Mat3& r);

struct LandmarkSet {
  std::vector<Vec3> points;
  std::vector<std::string> labels;

  std::size_t size() const { return points.size(); }

  /// Throws InvalidSpec unless sizes agree and there are at least three points.
  void validate() const;
};

LandmarkSet transform_landmarks(const LandmarkSet& l, const RigidTransform& t);

/// Least-squares rigid fit: argmin sum |R src_k + t - dst_k|^2 with det R = +1.
/// Throws DegenerateConfiguration for fewer than three, coincident, or
/// collinear points.
RigidTransform solve_rigid(std::span<const Vec3> src, std::span<const Vec3> dst);
RigidTransform solve_rigid(const LandmarkSet& src, const LandmarkSet& dst);

/// Root-mean-square of |T src_k - dst_k|.
double rms_residual(const RigidTransform& t, std::span<const Vec3> src, std::span<const Vec3> dst);

/// Moves the plane rigidly: normal -> R n, d recomputed from the image of the
/// foot point.
PlaneParams transform_plane(const PlaneParams& p, const RigidTransform& t);

}  // namespace planeloc
