#include "planeloc/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "planeloc/error.hpp"

namespace planeloc {
namespace {

constexpr double kDegenerateNorm = 1e-6;

double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

Vec3 cosine_vector(double a, double b, double g) {
  return {std::cos(deg2rad(a)), std::cos(deg2rad(b)), std::cos(deg2rad(g))};
}

}  // namespace

PlaneParams::PlaneParams() : PlaneParams(0.0, 90.0, 90.0, 0.0) {}

PlaneParams::PlaneParams(double alpha_deg, double beta_deg, double gamma_deg, double d_vox)
    : alpha_(alpha_deg), beta_(beta_deg), gamma_(gamma_deg), d_(d_vox) {
  if (!std::isfinite(alpha_) || !std::isfinite(beta_) || !std::isfinite(gamma_) ||
      !std::isfinite(d_)) {
    fail(ErrorKind::DegenerateNormal, "non-finite plane parameters");
  }
  const Vec3 raw = cosine_vector(alpha_, beta_, gamma_);
  const double norm = raw.norm();
  if (norm < kDegenerateNorm) {
    fail(ErrorKind::DegenerateNormal, "cosine vector norm below 1e-6");
  }
  normal_ = raw / norm;
}

PlaneParams PlaneParams::from_normal(const Vec3& normal, double d_vox) {
  const double norm = normal.norm();
  if (!(norm >= kDegenerateNorm)) {
    fail(ErrorKind::DegenerateNormal, "normal norm below 1e-6");
  }
  const Vec3 n = normal / norm;
  auto angle = [](double c) { return rad2deg(std::acos(std::clamp(c, -1.0, 1.0))); };
  return {angle(n.x()), angle(n.y()), angle(n.z()), d_vox};
}

PlaneAction::PlaneAction(int index) : index_(index) {
  if (index < 0 || index >= kCount) {
    fail(ErrorKind::IndexOutOfRange, "action index " + std::to_string(index));
  }
}

const char* PlaneAction::name() const {
  static constexpr const char* kNames[kCount] = {"+alpha", "-alpha", "+beta", "-beta",
                                                 "+gamma", "-gamma", "+d",    "-d"};
  return kNames[index_];
}

double angle_between(const PlaneParams& p, const PlaneParams& g) {
  // atan2 form of arccos(n . g); stays exact near 0 and 180 degrees.
  const Vec3& a = p.normal();
  const Vec3& b = g.normal();
  return rad2deg(std::atan2(a.cross(b).norm(), a.dot(b)));
}

double distance_between(const PlaneParams& p, const PlaneParams& g) {
  return std::abs(p.d() - g.d()) * kVoxelSizeMm;
}

PlaneParams apply_action(const PlaneParams& p, PlaneAction a, const StepSizes& steps) {
  auto v = p.as_array();
  const double step = a.parameter() == 3 ? steps.distance_vox : steps.angle_deg;
  v[a.parameter()] += a.sign() * step;
  return {v[0], v[1], v[2], v[3]};
}

double param_distance(const PlaneParams& p, const PlaneParams& g, const ParamWeights& w) {
  const double da = p.alpha() - g.alpha();
  const double db = p.beta() - g.beta();
  const double dg = p.gamma() - g.gamma();
  const double dd = p.d() - g.d();
  return std::sqrt(w.alpha * da * da + w.beta * db * db + w.gamma * dg * dg + w.d * dd * dd);
}

int reward(const PlaneParams& prev, const PlaneParams& cur, const PlaneParams& gt,
           const ParamWeights& w) {
  const double delta = param_distance(prev, gt, w) - param_distance(cur, gt, w);
  return (delta > 0.0) - (delta < 0.0);
}

PlaneParams canonicalize(const PlaneParams& p) {
  const Vec3& n = p.normal();
  Eigen::Index largest = 0;
  n.cwiseAbs().maxCoeff(&largest);
  if (n[largest] >= 0.0) return p;
  return {180.0 - p.alpha(), 180.0 - p.beta(), 180.0 - p.gamma(), -p.d()};
}

PlaneParams oriented_like(const PlaneParams& p, const PlaneParams& ref) {
  if (p.normal().dot(ref.normal()) >= 0.0) return p;
  return {180.0 - p.alpha(), 180.0 - p.beta(), 180.0 - p.gamma(), -p.d()};
}

PlaneError plane_error(const PlaneParams& p, const PlaneParams& g) {
  const PlaneParams q = oriented_like(p, g);
  return {angle_between(q, g), distance_between(q, g)};
}

RigidTransform RigidTransform::checked(const Mat3& rotation, const Vec3& translation) {
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(ortho <= 1e-9) || std::abs(rotation.determinant() - 1.0) > 1e-9 ||
      !translation.allFinite()) {
    fail(ErrorKind::DegenerateConfiguration, "rotation is not proper orthonormal");
  }
  return {rotation, translation};
}

RigidTransform RigidTransform::inverse() const {
  const Mat3 rt = rotation.transpose();
  return {rt, -(rt * translation)};
}

RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

Mat3 axis_angle_rotation(const Vec3& axis, double angle_deg) {
  return Eigen::AngleAxisd(deg2rad(angle_deg), axis.normalized()).toRotationMatrix();
}

double rotation_angle_deg(const Mat3& r) {
  const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  return rad2deg(std::acos(c));
}

void LandmarkSet::validate() const {
  if (points.size() != labels.size()) {
    fail(ErrorKind::InvalidSpec, "landmark points and labels differ in length");
  }
  if (points.size() < 3) fail(ErrorKind::InvalidSpec, "at least three landmarks required");
}

LandmarkSet transform_landmarks(const LandmarkSet& l, const RigidTransform& t) {
  LandmarkSet out = l;
  for (auto& p : out.points) p = t.apply(p);
  return out;
}

RigidTransform solve_rigid(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size()) {
    fail(ErrorKind::DegenerateConfiguration, "point lists differ in length");
  }
  const auto n = static_cast<Eigen::Index>(src.size());
  if (n < 3) fail(ErrorKind::DegenerateConfiguration, "fewer than three point pairs");

  Vec3 src_mean = Vec3::Zero();
  Vec3 dst_mean = Vec3::Zero();
  for (Eigen::Index k = 0; k < n; ++k) {
    src_mean += src[k];
    dst_mean += dst[k];
  }
  src_mean /= static_cast<double>(n);
  dst_mean /= static_cast<double>(n);

  Eigen::Matrix<double, 3, Eigen::Dynamic> a(3, n);
  Eigen::Matrix<double, 3, Eigen::Dynamic> b(3, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    a.col(k) = src[k] - src_mean;
    b.col(k) = dst[k] - dst_mean;
  }

  // Collinear or coincident sets leave rotation about the line undetermined.
  for (const auto* m : {&a, &b}) {
    Eigen::JacobiSVD<Eigen::Matrix<double, 3, Eigen::Dynamic>> spread(*m);
    const auto s = spread.singularValues();
    if (s[0] < 1e-9 || s[1] < 1e-9 * std::max(1.0, s[0])) {
      fail(ErrorKind::DegenerateConfiguration, "landmarks are collinear or coincident");
    }
  }

  const Mat3 cov = b * a.transpose();
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 correction = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) correction(2, 2) = -1.0;
  const Mat3 r = svd.matrixU() * correction * svd.matrixV().transpose();
  return {r, dst_mean - r * src_mean};
}

RigidTransform solve_rigid(const LandmarkSet& src, const LandmarkSet& dst) {
  return solve_rigid(std::span<const Vec3>(src.points), std::span<const Vec3>(dst.points));
}

double rms_residual(const RigidTransform& t, std::span<const Vec3> src,
                    std::span<const Vec3> dst) {
  if (src.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < src.size(); ++k) sum += (t.apply(src[k]) - dst[k]).squaredNorm();
  return std::sqrt(sum / static_cast<double>(src.size()));
}

PlaneParams transform_plane(const PlaneParams& p, const RigidTransform& t) {
  const Vec3 n = t.rotation * p.normal();
  const Vec3 on_plane = t.apply(p.foot_point());
  return PlaneParams::from_normal(n, n.dot(on_plane));
}

}  // namespace planeloc
