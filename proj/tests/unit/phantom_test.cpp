#include <random>

#include <doctest.h>

#include "planeloc/error.hpp"
#include "planeloc/phantom.hpp"
#include "support.hpp"

using namespace planeloc;

namespace {

double variance(const SliceImage& s) {
  double m = 0.0;
  for (double x : s.pixels) m += x;
  m /= static_cast<double>(s.pixels.size());
  double v = 0.0;
  for (double x : s.pixels) v += (x - m) * (x - m);
  return v / static_cast<double>(s.pixels.size());
}

}  // namespace

TEST_CASE("zero pose range leaves the canonical landmarks in place") {
  PhantomSpec s = testing::small_spec(11);
  s.max_rotation_deg = 0.0;
  s.max_translation_vox = 0.0;
  const PhantomCase c = generate(s);
  const LandmarkSet canon = canonical_landmarks(s.dims, s.n_landmarks);
  REQUIRE(c.landmarks.size() == canon.size());
  for (std::size_t k = 0; k < canon.size(); ++k) CHECK((c.landmarks.points[k] - canon.points[k]).norm() < 1e-12);
  CHECK(c.landmarks.labels == canon.labels);
}

TEST_CASE("generation is deterministic in the seed") {
  const PhantomCase a = generate(testing::small_spec(12));
  const PhantomCase b = generate(testing::small_spec(12));
  CHECK(std::equal(a.volume.data().begin(), a.volume.data().end(), b.volume.data().begin()));
  CHECK(a.landmarks.points == b.landmarks.points);
  const PhantomCase c = generate(testing::small_spec(13));
  CHECK_FALSE(std::equal(a.volume.data().begin(), a.volume.data().end(), c.volume.data().begin()));
}

TEST_CASE("landmarks and planes follow the sampled pose") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    PhantomSpec s = testing::small_spec(seed);
    s.n_landmarks = 5;
    const PhantomCase c = generate(s);
    const LandmarkSet canon = canonical_landmarks(s.dims, s.n_landmarks);
    const RigidTransform est = solve_rigid(canon, c.landmarks);
    CHECK((est.rotation - c.pose.rotation).norm() < 1e-6);
    CHECK((est.translation - c.pose.translation).norm() < 1e-6);
    const auto planes = canonical_planes(s.dims, s.n_planes);
    for (std::size_t p = 0; p < planes.size(); ++p) {
      CHECK(angle_between(c.gt_planes[p].plane, transform_plane(planes[p].plane, c.pose)) < 1e-9);
    }
    for (const Vec3& x : c.landmarks.points) CHECK(c.volume.contains(x));
    CHECK(rotation_angle_deg(c.pose.rotation) <= s.max_rotation_deg + 1e-9);
  }
}

TEST_CASE("the sphere plane passes through the three sphere centres") {
  const PhantomCase c = generate(testing::small_spec(14));
  const PlaneParams& p = c.plane("spheres");
  for (std::size_t k = 0; k < 3; ++k) CHECK(p.normal().dot(c.landmarks.points[k]) == doctest::Approx(p.d()));
  CHECK_THROWS_AS(c.plane("nope"), Error);
}

TEST_CASE("target planes carry more contrast than random planes") {
  double target = 0.0;
  double random = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const PhantomCase c = generate(testing::small_spec(100 + seed));
    target += variance(extract_slice(c.volume, c.plane("spheres"), 32));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    std::uniform_real_distribution<double> d(-c.volume.half_extent(), c.volume.half_extent());
    double acc = 0.0;
    for (int r = 0; r < 20; ++r) {
      const PlaneParams p = PlaneParams::from_normal(Vec3(n(rng), n(rng), n(rng)), d(rng));
      acc += variance(extract_slice(c.volume, p, 32));
    }
    random += acc / 20.0;
  }
  CHECK(target > random);
}

TEST_CASE("datasets split deterministically into disjoint lists") {
  const Dataset ds = generate_dataset(testing::small_spec(20), 5, {3, 1, 1});
  CHECK(ds.train.size() == 3);
  CHECK(ds.val.size() == 1);
  CHECK(ds.test.size() == 1);
  CHECK(ds.val[0].id == 3);
  CHECK(ds.test[0].seed == 24);
  // Poses are pairwise distinct.
  std::vector<const PhantomCase*> all{&ds.train[0], &ds.train[1], &ds.train[2], &ds.val[0], &ds.test[0]};
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      CHECK((all[i]->pose.rotation - all[j]->pose.rotation).norm() > 1e-6);
    }
  CHECK_THROWS_AS(generate_dataset(testing::small_spec(20), 4, {3, 1, 1}), Error);
}

TEST_CASE("cases round-trip through volume and sidecar files") {
  const auto dir = testing::scratch_dir("phantom_io");
  const PhantomCase c = generate(testing::small_spec(21), 7);
  write_case(dir, c);
  const PhantomCase r = read_case(dir, c.name());
  CHECK(r.id == 7);
  CHECK(r.seed == c.seed);
  CHECK(std::equal(c.volume.data().begin(), c.volume.data().end(), r.volume.data().begin()));
  CHECK(r.landmarks.points == c.landmarks.points);
  CHECK(r.landmarks.labels == c.landmarks.labels);
  REQUIRE(r.gt_planes.size() == c.gt_planes.size());
  CHECK(r.gt_planes[0].plane == c.gt_planes[0].plane);
  CHECK((r.pose.rotation - c.pose.rotation).norm() == 0.0);
  CHECK_THROWS_AS(read_case(dir, "case_9999"), Error);
}

TEST_CASE("invalid specs are rejected") {
  PhantomSpec s = testing::small_spec(1);
  s.n_landmarks = 2;
  CHECK_THROWS_AS(generate(s), Error);
  s = testing::small_spec(1);
  s.max_rotation_deg = 190.0;
  CHECK_THROWS_AS(generate(s), Error);
}
