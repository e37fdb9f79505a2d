#include "planeloc/volume.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "binary_io.hpp"
#include "planeloc/error.hpp"

namespace planeloc {
namespace {

constexpr char kVolumeMagic[9] = "PLVOL\0\0\0";

}  // namespace

Volume::Volume(Dims dims, std::vector<double> data, double voxel_size_mm)
    : dims_(dims), voxel_size_mm_(voxel_size_mm), data_(std::move(data)) {
  for (int n : dims_) {
    if (n < 8) fail(ErrorKind::InvalidSpec, "volume dims must all be >= 8");
  }
  const auto expected = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  if (data_.size() != expected) fail(ErrorKind::InvalidSpec, "volume data length mismatch");
  if (!(voxel_size_mm_ > 0.0)) fail(ErrorKind::InvalidSpec, "voxel size must be positive");

  double lo = 0.0;
  double hi = 0.0;
  bool first = true;
  for (double x : data_) {
    if (!std::isfinite(x)) fail(ErrorKind::InvalidSpec, "non-finite intensity");
    if (first) {
      lo = hi = x;
      first = false;
    }
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (lo < 0.0 || hi > 1.0) {
    if (hi > lo) {
      const double scale = 1.0 / (hi - lo);
      for (double& x : data_) x = (x - lo) * scale;
    } else {
      for (double& x : data_) x = std::clamp(x, 0.0, 1.0);
    }
  }
}

Vec3 Volume::origin() const {
  return {(dims_[0] - 1) / 2.0, (dims_[1] - 1) / 2.0, (dims_[2] - 1) / 2.0};
}

bool Volume::contains(const Vec3& centred) const {
  const Vec3 p = to_index(centred);
  for (int a = 0; a < 3; ++a) {
    if (!(p[a] >= 0.0 && p[a] <= dims_[a] - 1)) return false;
  }
  return true;
}

double Volume::half_extent() const {
  return (*std::min_element(dims_.begin(), dims_.end()) - 1) / 2.0;
}

double Volume::sample(const Vec3& centred) const { return sample_index(to_index(centred)); }

double Volume::sample_index(const Vec3& p) const {
  int i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    const int hi = dims_[a] - 1;
    // Rounding in slice stepping can overshoot a face by a few ulps.
    constexpr double kEdge = 1e-9;
    if (!(p[a] >= -kEdge && p[a] <= hi + kEdge)) return 0.0;
    const double x = std::clamp(p[a], 0.0, static_cast<double>(hi));
    int i = static_cast<int>(x);
    if (i >= hi) i = hi - 1;
    i0[a] = i;
    f[a] = x - i;
  }
  const std::size_t sx = 1;
  const std::size_t sy = static_cast<std::size_t>(dims_[0]);
  const std::size_t sz = sy * static_cast<std::size_t>(dims_[1]);
  const double* c = data_.data() + index(i0[0], i0[1], i0[2]);
  const double c00 = c[0] + f[0] * (c[sx] - c[0]);
  const double c10 = c[sy] + f[0] * (c[sy + sx] - c[sy]);
  const double c01 = c[sz] + f[0] * (c[sz + sx] - c[sz]);
  const double c11 = c[sz + sy] + f[0] * (c[sz + sy + sx] - c[sz + sy]);
  const double c0 = c00 + f[1] * (c10 - c00);
  const double c1 = c01 + f[1] * (c11 - c01);
  return c0 + f[2] * (c1 - c0);
}

Vec3 SliceGeometry::pixel_position(double row, double col) const {
  const double h = (size - 1) / 2.0;
  return center + ((col - h) * u + (row - h) * w) * spacing;
}

SliceGeometry slice_geometry(const Volume& v, const PlaneParams& p, int size) {
  const Vec3& n = p.normal();
  Vec3 u = n.cross(Vec3::UnitZ());
  if (u.norm() < 1e-6) u = n.cross(Vec3::UnitX());
  u.normalize();
  SliceGeometry g;
  g.center = p.foot_point();
  g.u = u;
  g.w = n.cross(u);
  g.size = size;
  g.spacing = static_cast<double>(*std::min_element(v.dims().begin(), v.dims().end())) / size;
  return g;
}

SliceImage extract_slice(const Volume& v, const PlaneParams& p, int size,
                         const RigidTransform& frame_to_volume) {
  if (size < 8) fail(ErrorKind::InvalidSpec, "slice size must be >= 8");
  const SliceGeometry g = slice_geometry(v, p, size);
  SliceImage out;
  out.size = size;
  out.plane = p;
  out.pixels.resize(static_cast<std::size_t>(size) * size);

  // Step along the slice in the volume's index space directly.
  const Mat3& r = frame_to_volume.rotation;
  const Vec3 du = r * (g.u * g.spacing);
  const Vec3 dw = r * (g.w * g.spacing);
  const double h = (size - 1) / 2.0;
  const Vec3 corner = v.to_index(frame_to_volume.apply(g.center)) - h * du - h * dw;
  for (int row = 0; row < size; ++row) {
    const Vec3 row_start = corner + static_cast<double>(row) * dw;
    for (int col = 0; col < size; ++col) {
      out.pixels[static_cast<std::size_t>(row) * size + col] =
          v.sample_index(row_start + static_cast<double>(col) * du);
    }
  }
  return out;
}

SliceImage mirror_columns(const SliceImage& s) {
  SliceImage out = s;
  for (int r = 0; r < s.size; ++r) {
    for (int c = 0; c < s.size; ++c) {
      out.pixels[static_cast<std::size_t>(r) * s.size + c] = s.at(r, s.size - 1 - c);
    }
  }
  return out;
}

AgentState compose_state(std::shared_ptr<const SliceImage> prev2,
                         std::shared_ptr<const SliceImage> prev1,
                         std::shared_ptr<const SliceImage> cur) {
  if (!prev2 || !prev1 || !cur || prev2->size != cur->size || prev1->size != cur->size ||
      prev2->pixels.size() != cur->pixels.size() || prev1->pixels.size() != cur->pixels.size()) {
    fail(ErrorKind::SizeMismatch, "state channels must share one slice size");
  }
  return AgentState{{std::move(prev2), std::move(prev1), std::move(cur)}};
}

AgentState initial_state(std::shared_ptr<const SliceImage> first) {
  return compose_state(first, first, first);
}

AgentState advance_state(const AgentState& s, std::shared_ptr<const SliceImage> next) {
  return compose_state(s.channels[1], s.channels[2], std::move(next));
}

Volume resample(const Volume& v, const RigidTransform& frame_to_volume) {
  std::vector<double> data(v.voxel_count());
  for (int k = 0; k < v.nz(); ++k) {
    for (int j = 0; j < v.ny(); ++j) {
      for (int i = 0; i < v.nx(); ++i) {
        const Vec3 x = v.to_centred(Vec3(i, j, k));
        data[v.index(i, j, k)] = v.sample(frame_to_volume.apply(x));
      }
    }
  }
  return Volume(v.dims(), std::move(data), v.voxel_size_mm());
}

void write_volume(const std::filesystem::path& path, const Volume& v) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
  detail::write_magic(out, kVolumeMagic);
  detail::write_le<std::uint32_t>(out, kVolumeFormatVersion);
  detail::write_le<std::uint32_t>(out, 0);
  for (int n : v.dims()) detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(n));
  detail::write_le<double>(out, v.voxel_size_mm());
  for (double x : v.data()) detail::write_le<float>(out, static_cast<float>(x));
  if (!out) fail(ErrorKind::IoError, "write failed for " + path.string());
}

Volume read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
  if (!detail::read_magic(in, kVolumeMagic)) {
    fail(ErrorKind::IoError, path.string() + " is not a volume file");
  }
  const auto version = detail::read_le<std::uint32_t>(in);
  if (version != kVolumeFormatVersion) {
    fail(ErrorKind::IoError, "unsupported volume format version " + std::to_string(version));
  }
  detail::read_le<std::uint32_t>(in);
  Dims dims{};
  for (int& n : dims) n = static_cast<int>(detail::read_le<std::uint32_t>(in));
  const double voxel = detail::read_le<double>(in);
  const auto count = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  std::vector<float> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) fail(ErrorKind::IoError, "truncated volume data in " + path.string());
  std::vector<double> data(raw.begin(), raw.end());
  try {
    return Volume(dims, std::move(data), voxel);
  } catch (const Error& e) {
    fail(ErrorKind::IoError, "invalid volume in " + path.string() + ": " + e.what());
  }
}

}  // namespace planeloc
