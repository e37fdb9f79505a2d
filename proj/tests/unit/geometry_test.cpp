#include <cmath>
#include <random>

#include <doctest.h>

#include "planeloc/error.hpp"
#include "planeloc/geometry.hpp"

using namespace planeloc;

namespace {

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized();
}

RigidTransform random_transform(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ang(0.0, 180.0), t(-20.0, 20.0);
  return RigidTransform::checked(axis_angle_rotation(random_unit(rng), ang(rng)), Vec3(t(rng), t(rng), t(rng)));
}

}  // namespace

TEST_CASE("plane normal is the normalized cosine vector") {
  const PlaneParams p(60.0, 60.0, 45.0, 3.0);
  const Vec3 c(std::cos(M_PI / 3), std::cos(M_PI / 3), std::cos(M_PI / 4));
  CHECK((p.normal() - c.normalized()).norm() < 1e-15);
  CHECK(p.foot_point().dot(p.normal()) == doctest::Approx(3.0));
  CHECK_THROWS_AS(PlaneParams(90.0, 90.0, 90.0, 0.0), Error);
}

TEST_CASE("from_normal reproduces the plane") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const Vec3 n = random_unit(rng);
    const PlaneParams p = PlaneParams::from_normal(n, 4.5);
    CHECK((p.normal() - n).norm() < 1e-12);
    CHECK(p.d() == 4.5);
  }
}

TEST_CASE("an action followed by its inverse restores the parameters") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const PlaneParams p = PlaneParams::from_normal(random_unit(rng), 2.0);
    for (int a = 0; a < PlaneAction::kCount; ++a) {
      const PlaneAction act(a);
      const PlaneParams q = apply_action(apply_action(p, act), act.inverse());
      for (int k = 0; k < 4; ++k) CHECK(q.as_array()[k] == doctest::Approx(p.as_array()[k]).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(PlaneAction(8), Error);
  CHECK(PlaneAction(PlaneAction::kDMinus).parameter() == 3);
  CHECK(PlaneAction(PlaneAction::kDMinus).sign() == -1);
}

TEST_CASE("single steps move one parameter by the step size") {
  const PlaneParams p(70.0, 50.0, 46.0, 1.0);
  const PlaneParams a = apply_action(p, PlaneAction(PlaneAction::kBetaPlus));
  CHECK(a.beta() == doctest::Approx(51.0));
  CHECK(a.alpha() == p.alpha());
  const PlaneParams d = apply_action(p, PlaneAction(PlaneAction::kDMinus));
  CHECK(d.d() == doctest::Approx(0.5));
}

TEST_CASE("reward is the sign of the parameter-distance change") {
  const PlaneParams gt(60.0, 60.0, 45.0, 0.0);
  const PlaneParams far(64.0, 60.0, 45.0, 2.0);
  const PlaneParams near = apply_action(far, PlaneAction(PlaneAction::kAlphaMinus));
  CHECK(reward(far, near, gt) == 1);
  CHECK(reward(near, far, gt) == -1);
  CHECK(reward(far, far, gt) == 0);
}

TEST_CASE("angle and distance identities") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-10.0, 10.0);
  for (int i = 0; i < 200; ++i) {
    const PlaneParams p = PlaneParams::from_normal(random_unit(rng), d(rng));
    const PlaneParams g = PlaneParams::from_normal(random_unit(rng), d(rng));
    CHECK(angle_between(p, p) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(angle_between(p, g) == doctest::Approx(angle_between(g, p)));
    CHECK(distance_between(p, g) == doctest::Approx(distance_between(g, p)));
    CHECK(distance_between(p, g) == doctest::Approx(std::abs(p.d() - g.d()) * kVoxelSizeMm));
    const PlaneParams flipped = PlaneParams::from_normal(-p.normal(), -p.d());
    CHECK(angle_between(p, flipped) == doctest::Approx(180.0));
    const PlaneError e = plane_error(flipped, p);
    CHECK(e.ang < 1e-6);
    CHECK(e.dis < 1e-12);
  }
}

TEST_CASE("canonicalize keeps the geometric plane and fixes the sign") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    const PlaneParams p = PlaneParams::from_normal(random_unit(rng), 3.0);
    const PlaneParams c = canonicalize(p);
    const Vec3& n = c.normal();
    Eigen::Index k = 0;
    n.cwiseAbs().maxCoeff(&k);
    CHECK(n[k] > 0.0);
    // Any point on p lies on c.
    const Vec3 x = p.foot_point() + p.normal().unitOrthogonal() * 5.0;
    CHECK(c.normal().dot(x) == doctest::Approx(c.d()));
  }
}

TEST_CASE("solve_rigid recovers random transforms") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int i = 0; i < 100; ++i) {
    const RigidTransform t = random_transform(rng);
    std::vector<Vec3> src, dst;
    for (int k = 0; k < 5; ++k) {
      src.emplace_back(u(rng), u(rng), u(rng));
      dst.push_back(t.apply(src.back()));
    }
    const RigidTransform est = solve_rigid(src, dst);
    CHECK((est.rotation - t.rotation).norm() < 1e-9);
    CHECK((est.translation - t.translation).norm() < 1e-9);
    CHECK(rms_residual(est, src, dst) < 1e-9);
  }
}

TEST_CASE("solve_rigid rejects degenerate landmark sets") {
  std::vector<Vec3> two{Vec3(0, 0, 0), Vec3(1, 0, 0)};
  CHECK_THROWS_AS(solve_rigid(two, two), Error);
  std::vector<Vec3> line{Vec3(0, 0, 0), Vec3(1, 1, 1), Vec3(2, 2, 2)};
  CHECK_THROWS_AS(solve_rigid(line, line), Error);
  std::vector<Vec3> same{Vec3(1, 2, 3), Vec3(1, 2, 3), Vec3(1, 2, 3)};
  CHECK_THROWS_AS(solve_rigid(same, same), Error);
  std::vector<Vec3> tri{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  CHECK_THROWS_AS(solve_rigid(tri, std::vector<Vec3>(two)), Error);
}

TEST_CASE("a reflection is never returned") {
  std::vector<Vec3> src{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  std::vector<Vec3> dst;
  for (const Vec3& p : src) dst.emplace_back(-p.x(), p.y(), p.z());
  const RigidTransform t = solve_rigid(src, dst);
  CHECK(t.rotation.determinant() == doctest::Approx(1.0));
}

TEST_CASE("transform_plane moves every point of the plane") {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 100; ++i) {
    const RigidTransform t = random_transform(rng);
    const PlaneParams p = PlaneParams::from_normal(random_unit(rng), 4.0);
    const PlaneParams q = transform_plane(p, t);
    const Vec3 e1 = p.normal().unitOrthogonal();
    const Vec3 e2 = p.normal().cross(e1);
    for (double s : {-3.0, 0.0, 7.0}) {
      const Vec3 x = p.foot_point() + s * e1 + (s * s) * e2;
      CHECK(q.normal().dot(t.apply(x)) == doctest::Approx(q.d()).epsilon(1e-12));
    }
  }
}

TEST_CASE("rigid transform algebra") {
  std::mt19937_64 rng(7);
  const RigidTransform a = random_transform(rng);
  const RigidTransform b = random_transform(rng);
  const Vec3 x(1.0, -2.0, 3.0);
  CHECK(((a * b).apply(x) - a.apply(b.apply(x))).norm() < 1e-12);
  CHECK(((a * a.inverse()).apply(x) - x).norm() < 1e-12);
  CHECK(rotation_angle_deg(axis_angle_rotation(Vec3(1, 2, 3), 37.0)) == doctest::Approx(37.0));
  Mat3 bad = Mat3::Identity();
  bad(0, 0) = 2.0;
  CHECK_THROWS_AS(RigidTransform::checked(bad, Vec3::Zero()), Error);
}
