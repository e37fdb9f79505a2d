#include "planeloc/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "planeloc/error.hpp"

namespace planeloc {
namespace {

using nlohmann::json;

// Canonical structure in units of half the smallest edge.
struct Sphere {
  const char* label;
  Vec3 center;
  double radius;
  double intensity;
};

constexpr double kBackground = 0.04;
constexpr double kFluid = 0.16;
constexpr double kShell = 0.5;
constexpr double kShellThickness = 0.07;
const Vec3 kEllipsoidAxes{0.72, 0.58, 0.48};

const Sphere kSpheres[3] = {
    {"sphere_large", {-0.30, -0.14, 0.06}, 0.17, 1.0},
    {"sphere_medium", {0.30, -0.10, -0.05}, 0.13, 0.78},
    {"sphere_small", {0.02, 0.27, 0.08}, 0.10, 0.62},
};

const Vec3 kBarStart{-0.30, 0.05, -0.25};
const Vec3 kBarEnd{0.30, 0.13, -0.22};
constexpr double kBarRadius = 0.05;
constexpr double kBarIntensity = 0.88;

double unit_scale(const Dims& dims) {
  return *std::min_element(dims.begin(), dims.end()) / 2.0;
}

// Coverage of a point at signed distance `sd` (voxels, negative inside).
double coverage(double sd) { return std::clamp(0.5 - sd, 0.0, 1.0); }

double ellipsoid_sd(const Vec3& x, const Vec3& axes) {
  const double rho = x.cwiseQuotient(axes).norm();
  return (rho - 1.0) * axes.minCoeff();
}

double segment_distance(const Vec3& x, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double t = std::clamp((x - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (x - (a + t * ab)).norm();
}

PlaneParams plane_with_canonical_sign(const Vec3& normal, const Vec3& through) {
  Vec3 n = normal.normalized();
  Eigen::Index largest = 0;
  n.cwiseAbs().maxCoeff(&largest);
  if (n[largest] < 0.0) n = -n;
  return PlaneParams::from_normal(n, n.dot(through));
}

json plane_to_json(const NamedPlane& p) {
  return {{"name", p.name},
          {"alpha", p.plane.alpha()},
          {"beta", p.plane.beta()},
          {"gamma", p.plane.gamma()},
          {"d", p.plane.d()}};
}

}  // namespace

void PhantomSpec::validate() const {
  for (int n : dims) {
    if (n < 16) fail(ErrorKind::InvalidSpec, "phantom dims must be >= 16");
  }
  if (!(max_rotation_deg >= 0.0 && max_rotation_deg <= 180.0)) {
    fail(ErrorKind::InvalidSpec, "rotation range must lie in [0, 180] degrees");
  }
  if (!(max_translation_vox >= 0.0) || max_translation_vox > 0.12 * unit_scale(dims)) {
    fail(ErrorKind::InvalidSpec, "translation range must lie in [0, 0.12 * half edge]");
  }
  if (!(noise_sigma >= 0.0) || !(speckle_strength >= 0.0) || speckle_strength >= 1.0) {
    fail(ErrorKind::InvalidSpec, "noise parameters out of range");
  }
  if (n_landmarks < 3 || n_landmarks > 5) {
    fail(ErrorKind::InvalidSpec, "n_landmarks must lie in [3, 5]");
  }
  if (n_planes < 1 || n_planes > 2) fail(ErrorKind::InvalidSpec, "n_planes must be 1 or 2");
}

std::string PhantomCase::name() const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "case_%04d", id);
  return buf;
}

const PlaneParams& PhantomCase::plane(const std::string& plane_name) const {
  for (const auto& p : gt_planes) {
    if (p.name == plane_name) return p.plane;
  }
  fail(ErrorKind::InvalidSpec, name() + " has no plane named " + plane_name);
}

LandmarkSet canonical_landmarks(const Dims& dims, int n_landmarks) {
  const double s = unit_scale(dims);
  LandmarkSet out;
  for (const auto& sp : kSpheres) {
    out.points.push_back(sp.center * s);
    out.labels.emplace_back(sp.label);
  }
  if (n_landmarks >= 4) {
    out.points.push_back(kBarStart * s);
    out.labels.emplace_back("bar_start");
  }
  if (n_landmarks >= 5) {
    out.points.push_back(kBarEnd * s);
    out.labels.emplace_back("bar_end");
  }
  return out;
}

std::vector<NamedPlane> canonical_planes(const Dims& dims, int n_planes) {
  const double s = unit_scale(dims);
  const Vec3 c0 = kSpheres[0].center * s;
  const Vec3 c1 = kSpheres[1].center * s;
  const Vec3 c2 = kSpheres[2].center * s;
  const PlaneParams spheres = plane_with_canonical_sign((c1 - c0).cross(c2 - c0), c0);
  std::vector<NamedPlane> out{{"spheres", spheres}};
  if (n_planes >= 2) {
    const Vec3 axis = (kBarEnd - kBarStart).normalized();
    out.push_back({"bar", plane_with_canonical_sign(spheres.normal().cross(axis), kBarStart * s)});
  }
  return out;
}

double canonical_intensity(const Dims& dims, const Vec3& x) {
  const double s = unit_scale(dims);
  const Vec3 outer = kEllipsoidAxes * s;
  const Vec3 inner = (kEllipsoidAxes.array() - kShellThickness).matrix() * s;
  const double w_out = coverage(ellipsoid_sd(x, outer));
  const double w_in = coverage(ellipsoid_sd(x, inner));
  double v = kBackground * (1.0 - w_out) + w_out * (kShell * (1.0 - w_in) + kFluid * w_in);
  for (const auto& sp : kSpheres) {
    const double w = coverage((x - sp.center * s).norm() - sp.radius * s);
    v += w * (sp.intensity - v);
  }
  const double wb = coverage(segment_distance(x, kBarStart * s, kBarEnd * s) - kBarRadius * s);
  v += wb * (kBarIntensity - v);
  return v;
}

RigidTransform sample_pose(const PhantomSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec3 axis(normal(rng), normal(rng), normal(rng));
  if (axis.norm() < 1e-12) axis = Vec3::UnitZ();
  const double angle = unit(rng) * spec.max_rotation_deg;
  Vec3 t;
  for (int a = 0; a < 3; ++a) t[a] = (2.0 * unit(rng) - 1.0) * spec.max_translation_vox;
  return {axis_angle_rotation(axis, angle), t};
}

PhantomCase generate(const PhantomSpec& spec, int id) {
  spec.validate();
  PhantomCase c;
  c.id = id;
  c.seed = spec.seed;
  c.pose = sample_pose(spec);
  c.landmarks = transform_landmarks(canonical_landmarks(spec.dims, spec.n_landmarks), c.pose);
  for (const auto& p : canonical_planes(spec.dims, spec.n_planes)) {
    c.gt_planes.push_back({p.name, transform_plane(p.plane, c.pose)});
  }

  const Dims& d = spec.dims;
  const std::size_t count = static_cast<std::size_t>(d[0]) * d[1] * d[2];
  const Vec3 origin((d[0] - 1) / 2.0, (d[1] - 1) / 2.0, (d[2] - 1) / 2.0);
  const RigidTransform to_canonical = c.pose.inverse();
  std::vector<double> data(count);
  std::size_t idx = 0;
  for (int k = 0; k < d[2]; ++k) {
    for (int j = 0; j < d[1]; ++j) {
      for (int i = 0; i < d[0]; ++i) {
        data[idx++] = canonical_intensity(d, to_canonical.apply(Vec3(i, j, k) - origin));
      }
    }
  }

  // Noise streams are separate from the pose stream so the pose depends on
  // the seed alone.
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  if (spec.speckle_strength > 0.0) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> field(count);
    for (double& f : field) f = u(rng);
    // Separable 3-voxel box smoothing, truncated at the borders.
    const std::size_t stride[3] = {1, static_cast<std::size_t>(d[0]),
                                   static_cast<std::size_t>(d[0]) * d[1]};
    std::vector<double> tmp(count);
    for (int axis = 0; axis < 3; ++axis) {
      idx = 0;
      for (int k = 0; k < d[2]; ++k) {
        for (int j = 0; j < d[1]; ++j) {
          for (int i = 0; i < d[0]; ++i, ++idx) {
            const int pos = axis == 0 ? i : (axis == 1 ? j : k);
            double sum = field[idx];
            int n = 1;
            if (pos > 0) {
              sum += field[idx - stride[axis]];
              ++n;
            }
            if (pos + 1 < d[axis]) {
              sum += field[idx + stride[axis]];
              ++n;
            }
            tmp[idx] = sum / n;
          }
        }
      }
      field.swap(tmp);
    }
    // Box smoothing shrinks the spread; restore roughly unit amplitude.
    for (std::size_t n = 0; n < count; ++n) data[n] *= 1.0 + spec.speckle_strength * 2.0 * field[n];
  }
  if (spec.noise_sigma > 0.0) {
    std::normal_distribution<double> g(0.0, spec.noise_sigma);
    for (double& x : data) x += g(rng);
  }
  // Stored at f32 precision so the on-disk format round-trips exactly.
  for (double& x : data) x = static_cast<double>(static_cast<float>(std::clamp(x, 0.0, 1.0)));
  c.volume = Volume(d, std::move(data));

  for (const auto& p : c.landmarks.points) {
    if (!c.volume.contains(p)) fail(ErrorKind::InvalidSpec, "posed landmark left the volume");
  }
  return c;
}

Dataset generate_dataset(const PhantomSpec& spec, int n, const Split& split) {
  if (n <= 0 || split.train < 0 || split.val < 0 || split.test < 0 || split.total() != n) {
    fail(ErrorKind::InvalidSplit, "split sizes must be non-negative and sum to n");
  }
  Dataset out;
  for (int i = 0; i < n; ++i) {
    PhantomSpec s = spec;
    s.seed = spec.seed + static_cast<std::uint64_t>(i);
    PhantomCase c = generate(s, i);
    if (i < split.train) {
      out.train.push_back(std::move(c));
    } else if (i < split.train + split.val) {
      out.val.push_back(std::move(c));
    } else {
      out.test.push_back(std::move(c));
    }
  }
  return out;
}

void write_case(const std::filesystem::path& dir, const PhantomCase& c) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  write_volume(dir / (c.name() + ".vol"), c.volume);

  json j;
  j["id"] = c.id;
  j["seed"] = c.seed;
  j["dims"] = c.volume.dims();
  j["voxel_size_mm"] = c.volume.voxel_size_mm();
  j["landmarks"] = json::array();
  for (std::size_t k = 0; k < c.landmarks.size(); ++k) {
    const Vec3& p = c.landmarks.points[k];
    j["landmarks"].push_back({{"label", c.landmarks.labels[k]}, {"point", {p.x(), p.y(), p.z()}}});
  }
  j["planes"] = json::array();
  for (const auto& p : c.gt_planes) j["planes"].push_back(plane_to_json(p));
  json rot = json::array();
  for (int r = 0; r < 3; ++r) {
    rot.push_back({c.pose.rotation(r, 0), c.pose.rotation(r, 1), c.pose.rotation(r, 2)});
  }
  j["pose"] = {{"rotation", rot},
               {"translation", {c.pose.translation.x(), c.pose.translation.y(),
                                c.pose.translation.z()}}};

  std::ofstream out(dir / (c.name() + ".json"));
  if (!out) fail(ErrorKind::IoError, "cannot write sidecar for " + c.name());
  out << j.dump(2) << '\n';
}

PhantomCase read_case(const std::filesystem::path& dir, const std::string& name) {
  std::ifstream in(dir / (name + ".json"));
  if (!in) fail(ErrorKind::IoError, "missing sidecar " + (dir / (name + ".json")).string());
  PhantomCase c;
  try {
    const json j = json::parse(in);
    c.id = j.at("id").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& l : j.at("landmarks")) {
      const auto p = l.at("point").get<std::vector<double>>();
      c.landmarks.points.emplace_back(p.at(0), p.at(1), p.at(2));
      c.landmarks.labels.push_back(l.at("label").get<std::string>());
    }
    for (const auto& p : j.at("planes")) {
      c.gt_planes.push_back({p.at("name").get<std::string>(),
                             PlaneParams(p.at("alpha").get<double>(), p.at("beta").get<double>(),
                                         p.at("gamma").get<double>(), p.at("d").get<double>())});
    }
    const auto& pose = j.at("pose");
    for (int r = 0; r < 3; ++r) {
      for (int col = 0; col < 3; ++col) {
        c.pose.rotation(r, col) = pose.at("rotation").at(r).at(col).get<double>();
      }
      c.pose.translation[r] = pose.at("translation").at(r).get<double>();
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::IoError, "malformed sidecar for " + name + ": " + e.what());
  }
  c.volume = read_volume(dir / (name + ".vol"));
  return c;
}

}  // namespace planeloc
