#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "planeloc/geometry.hpp"

namespace planeloc {

using Dims = std::array<int, 3>;

/// Axis-aligned isotropic scalar grid, immutable after construction.
///
/// Storage is x-fastest: index(i, j, k) = i + nx * (j + ny * k). Geometry in
/// the rest of the library uses centred coordinates, where the origin sits at
/// the volume centre ((nx-1)/2, (ny-1)/2, (nz-1)/2) in index space.
class Volume {
 public:
  Volume() = default;

  /// Intensities already inside [0, 1] are kept as given. Data with any value
  /// outside [0, 1] is min-max rescaled into [0, 1] (clamped if constant).
  /// Throws InvalidSpec for dims below 8, a length mismatch, or non-finite data.
  Volume(Dims dims, std::vector<double> data, double voxel_size_mm = kVoxelSizeMm);

  const Dims& dims() const { return dims_; }
  int nx() const { return dims_[0]; }
  int ny() const { return dims_[1]; }
  int nz() const { return dims_[2]; }
  std::size_t voxel_count() const { return data_.size(); }
  double voxel_size_mm() const { return voxel_size_mm_; }
  std::span<const double> data() const { return data_; }

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims_[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_[1]) * k);
  }
  double at(int i, int j, int k) const { return data_[index(i, j, k)]; }

  /// Index-space position of the centred origin.
  Vec3 origin() const;
  Vec3 to_index(const Vec3& centred) const { return centred + origin(); }
  Vec3 to_centred(const Vec3& index_point) const { return index_point - origin(); }

  /// True when the centred point lies inside [0, n-1] on every axis.
  bool contains(const Vec3& centred) const;

  /// Half of the smallest edge, (min(n) - 1) / 2, the radius of the inscribed ball.
  double half_extent() const;

  /// Trilinear interpolation at a centred point; 0 outside the grid.
  double sample(const Vec3& centred) const;
  /// Same, at an index-space point.
  double sample_index(const Vec3& p) const;

 private:
  Dims dims_{0, 0, 0};
  double voxel_size_mm_ = kVoxelSizeMm;
  std::vector<double> data_;
};

/// Square image sampled on a plane.
struct SliceImage {
  int size = 0;
  std::vector<double> pixels;  // row-major, size * size
  PlaneParams plane;

  double at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * size + col]; }
};

/// In-plane frame of a slice: pixel (r, c) sits at
/// center + ((c - h) * u + (r - h) * w) * spacing with h = (size - 1) / 2.
struct SliceGeometry {
  Vec3 center;
  Vec3 u;
  Vec3 w;
  double spacing = 1.0;
  int size = 0;

  Vec3 pixel_position(double row, double col) const;
};

/// u = normalize(n x z), or normalize(n x x) when n is parallel to z; w = n x u.
SliceGeometry slice_geometry(const Volume& v, const PlaneParams& p, int size);

/// Samples an S x S slice. `frame_to_volume` maps the plane's frame into the
/// volume's centred frame; the identity samples the volume directly, an
/// atlas-to-case transform samples a case volume as if aligned to the atlas.
/// Throws InvalidSpec when size < 8.
SliceImage extract_slice(const Volume& v, const PlaneParams& p, int size,
                         const RigidTransform& frame_to_volume = RigidTransform::identity());

/// Left-right mirror, the image-orientation change caused by flipping (n, d).
SliceImage mirror_columns(const SliceImage& s);

/// Three stacked slices (t-2, t-1, t). Channels are shared, never mutated.
struct AgentState {
  std::array<std::shared_ptr<const SliceImage>, 3> channels;

  int size() const { return channels[0] ? channels[0]->size : 0; }
};

/// Throws SizeMismatch unless all three slices share one size.
AgentState compose_state(std::shared_ptr<const SliceImage> prev2,
                         std::shared_ptr<const SliceImage> prev1,
                         std::shared_ptr<const SliceImage> cur);

/// Episode-start state: all channels equal the initial slice.
AgentState initial_state(std::shared_ptr<const SliceImage> first);

/// Shifts the state window by one slice.
AgentState advance_state(const AgentState& s, std::shared_ptr<const SliceImage> next);

/// Resamples `v` into a new grid of the same dims where voxel x holds
/// v(frame_to_volume . x). Parity helper for explicit atlas-space volumes.
Volume resample(const Volume& v, const RigidTransform& frame_to_volume);

// Binary container: 16-byte header ("PLVOL\0\0\0", u32 version, u32 reserved),
// dims as 3 x u32, voxel size as f64, then nx*ny*nz f32, all little-endian,
// x-fastest.
inline constexpr std::uint32_t kVolumeFormatVersion = 1;

/// Throws IoError on write failure.
void write_volume(const std::filesystem::path& path, const Volume& v);
/// Throws IoError on read failure or a malformed header.
Volume read_volume(const std::filesystem::path& path);

}  // namespace planeloc
