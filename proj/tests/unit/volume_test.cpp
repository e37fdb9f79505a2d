#include <cmath>
#include <fstream>
#include <random>

#include <doctest.h>

#include "planeloc/error.hpp"
#include "planeloc/volume.hpp"
#include "support.hpp"

using namespace planeloc;

namespace {

Volume ramp(Dims d) {
  std::vector<double> v(static_cast<std::size_t>(d[0]) * d[1] * d[2]);
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        v[i + d[0] * (j + d[1] * k)] = static_cast<float>(0.01 * i + 0.002 * j + 0.0005 * k);
      }
  return Volume(d, v);
}

}  // namespace

TEST_CASE("intensities outside [0, 1] are min-max rescaled") {
  std::vector<double> v(512, 0.5);
  v[0] = -2.0;
  v[1] = 6.0;
  const Volume vol({8, 8, 8}, v);
  CHECK(vol.data()[0] == 0.0);
  CHECK(vol.data()[1] == 1.0);
  CHECK(vol.data()[2] == doctest::Approx(2.5 / 8.0));
  const Volume kept({8, 8, 8}, std::vector<double>(512, 0.25));
  CHECK(kept.data()[7] == 0.25);
  CHECK_THROWS_AS(Volume({8, 8, 4}, std::vector<double>(256)), Error);
  CHECK_THROWS_AS(Volume({8, 8, 8}, std::vector<double>(10)), Error);
  std::vector<double> bad(512, 0.0);
  bad[3] = NAN;
  CHECK_THROWS_AS(Volume({8, 8, 8}, bad), Error);
}

TEST_CASE("trilinear sampling reproduces grid values and linear fields") {
  const Volume v = ramp({10, 12, 14});
  CHECK(v.sample_index(Vec3(3, 4, 5)) == v.at(3, 4, 5));
  // A linear field is reproduced exactly between grid points.
  const Vec3 p(3.25, 4.5, 5.75);
  CHECK(v.sample_index(p) == doctest::Approx(0.01 * 3.25 + 0.002 * 4.5 + 0.0005 * 5.75).epsilon(1e-6));
  CHECK(v.sample_index(Vec3(-0.1, 0, 0)) == 0.0);
  CHECK(v.sample_index(Vec3(9, 11, 13)) == v.at(9, 11, 13));
  CHECK(v.half_extent() == 4.5);
  CHECK((v.to_index(Vec3::Zero()) - Vec3(4.5, 5.5, 6.5)).norm() == 0.0);
}

TEST_CASE("an axis-aligned slice matches direct voxel reads") {
  const Volume v = ramp({16, 16, 16});
  // Normal +z through the centre plane z = 0.5 voxel off a grid layer.
  const PlaneParams p = PlaneParams::from_normal(Vec3(0, 0, 1), 0.5);
  const SliceImage s = extract_slice(v, p, 16);
  const SliceGeometry g = slice_geometry(v, p, 16);
  CHECK(g.spacing == 1.0);
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 16; ++c) {
      const Vec3 x = g.pixel_position(r, c);
      CHECK(s.at(r, c) == doctest::Approx(v.sample(x)));
    }
  }
  // Pixel positions lie on the plane.
  CHECK(g.pixel_position(3, 11).z() == doctest::Approx(0.5));
  CHECK_THROWS_AS(extract_slice(v, p, 4), Error);
}

TEST_CASE("sampling through a frame transform equals resampling first") {
  const Volume v = ramp({16, 16, 16});
  const RigidTransform t = RigidTransform::checked(axis_angle_rotation(Vec3(1, 1, 0), 20.0), Vec3(0.5, -1.0, 0.25));
  const Volume r = resample(v, t);
  // Only grid-point slices agree exactly; take a plane through voxel centres.
  const PlaneParams p = PlaneParams::from_normal(Vec3(0, 0, 1), 0.5);
  const SliceImage a = extract_slice(v, p, 16, t);
  const SliceImage b = extract_slice(r, p, 16);
  for (std::size_t i = 0; i < a.pixels.size(); ++i) CHECK(a.pixels[i] == doctest::Approx(b.pixels[i]).epsilon(1e-9));
}

TEST_CASE("volume files round-trip and reject garbage") {
  const auto dir = testing::scratch_dir("volume_io");
  const Volume v = ramp({8, 9, 10});
  write_volume(dir / "a.vol", v);
  const Volume w = read_volume(dir / "a.vol");
  CHECK(w.dims() == v.dims());
  CHECK(w.voxel_size_mm() == v.voxel_size_mm());
  CHECK(std::equal(v.data().begin(), v.data().end(), w.data().begin()));
  std::ofstream(dir / "bad.vol") << "not a volume";
  CHECK_THROWS_AS(read_volume(dir / "bad.vol"), Error);
  CHECK_THROWS_AS(read_volume(dir / "missing.vol"), Error);
}

TEST_CASE("state stacks shift their window and check sizes") {
  auto s1 = std::make_shared<const SliceImage>(SliceImage{8, std::vector<double>(64, 0.1), {}});
  auto s2 = std::make_shared<const SliceImage>(SliceImage{8, std::vector<double>(64, 0.2), {}});
  auto odd = std::make_shared<const SliceImage>(SliceImage{9, std::vector<double>(81, 0.2), {}});
  AgentState st = initial_state(s1);
  CHECK(st.channels[0] == s1);
  st = advance_state(st, s2);
  CHECK(st.channels[1] == s1);
  CHECK(st.channels[2] == s2);
  CHECK_THROWS_AS(advance_state(st, odd), Error);
  const SliceImage m = mirror_columns(*s1);
  CHECK(m.pixels == s1->pixels);
}
