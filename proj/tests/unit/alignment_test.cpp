#include <cmath>
#include <random>

#include <doctest.h>

#include "planeloc/alignment.hpp"
#include "planeloc/error.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace planeloc;

namespace {

// A posed copy of the canonical structure without rendering a volume.
AtlasCandidate posed_candidate(int id, const PhantomSpec& spec, double noise, std::mt19937_64& rng) {
  PhantomSpec s = spec;
  s.seed = spec.seed + static_cast<std::uint64_t>(id);
  const RigidTransform pose = sample_pose(s);
  LandmarkSet l = transform_landmarks(canonical_landmarks(s.dims, s.n_landmarks), pose);
  std::normal_distribution<double> n(0.0, noise);
  for (Vec3& p : l.points) p += Vec3(n(rng), n(rng), n(rng));
  const PlaneParams plane = transform_plane(canonical_planes(s.dims, 1)[0].plane, pose);
  return {id, l, plane};
}

oracle::Candidate to_oracle(const AtlasCandidate& c) {
  return {c.id, c.landmarks.points, c.plane.normal(), c.plane.d()};
}

}  // namespace

TEST_CASE("heatmaps peak at the landmark") {
  const Dims dims{9, 7, 5};
  const Heatmap h = make_heatmap(dims, Vec3(4, 2, 3), 1.5);
  CHECK(h.at(4, 2, 3) == 1.0);
  CHECK(h.at(5, 2, 3) == doctest::Approx(std::exp(-1.0 / (2 * 2.25))));
  CHECK(extract_landmark(h) == Vec3(4, 2, 3));
  for (double v : h.values) CHECK((v > 0.0 && v <= 1.0));
  CHECK_THROWS_AS(make_heatmap(dims, Vec3(9, 0, 0), 1.0), Error);
  CHECK_THROWS_AS(make_heatmap(dims, Vec3(1, 1, 1), 0.0), Error);
  // An off-grid landmark is recovered to the nearest voxel.
  CHECK(extract_landmark(make_heatmap(dims, Vec3(2.3, 4.6, 1.2), 2.0)) == Vec3(2, 5, 1));
}

TEST_CASE("extraction ties go to the smallest index") {
  Heatmap h{{4, 4, 4}, std::vector<double>(64, 0.0)};
  h.values[h.index(3, 1, 0)] = 2.0;
  h.values[h.index(1, 3, 2)] = 2.0;
  h.values[h.index(1, 2, 3)] = 2.0;
  CHECK(extract_landmark(h) == Vec3(1, 2, 3));
}

TEST_CASE("heatmap loss and its gradient") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  const Dims dims{4, 3, 3};
  std::vector<Heatmap> pred, gt;
  for (int l = 0; l < 3; ++l) {
    gt.push_back(make_heatmap(dims, Vec3(l, 1, 2), 1.0));
    Heatmap p{dims, std::vector<double>(36)};
    for (double& v : p.values) v = n(rng);
    pred.push_back(p);
  }
  std::vector<Heatmap> grad;
  const double loss = heatmap_loss(pred, gt, &grad);
  double direct = 0.0;
  for (int l = 0; l < 3; ++l)
    for (int v = 0; v < 36; ++v) direct += std::pow(pred[l].values[v] - gt[l].values[v], 2) / 3.0;
  CHECK(loss == doctest::Approx(direct).epsilon(1e-12));
  CHECK(heatmap_loss(gt, gt) == 0.0);
  for (int l = 0; l < 3; ++l) {
    const auto numeric = testing::numeric_grad(pred[l].values, [&] { return heatmap_loss(pred, gt); });
    CHECK(testing::rel_error(grad[l].values, numeric) <= 1e-4);
  }
  CHECK_THROWS_AS(heatmap_loss(std::span<const Heatmap>(pred).first(2), gt), Error);
}

TEST_CASE("detector in oracle mode and persistence") {
  const PhantomCase c = generate(testing::small_spec(2), 0);
  DetectorConfig oc;
  oc.oracle = true;
  LandmarkDetector oracle_det(oc, c.volume.dims(), c.landmarks.labels, 1);
  const LandmarkSet l = oracle_det.detect(c);
  CHECK(l.points == c.landmarks.points);
  CHECK_THROWS_AS(oracle_det.detect(c.volume), Error);

  DetectorConfig cfg;
  cfg.channels = {4};
  cfg.epochs = 1;
  LandmarkDetector a(cfg, c.volume.dims(), c.landmarks.labels, 3);
  CHECK(a.grid_dims() == Dims{8, 8, 8});
  const std::vector<PhantomCase> cases{c, generate(testing::small_spec(3), 1)};
  const auto losses = a.train(cases);
  CHECK(losses.size() == 1);
  const auto dir = testing::scratch_dir("detector");
  a.save(dir / "d.ckpt");
  LandmarkDetector b(cfg, c.volume.dims(), c.landmarks.labels, 99);
  b.load(dir / "d.ckpt");
  const LandmarkSet la = a.detect(c), lb = b.detect(c);
  CHECK(la.points == lb.points);
  CHECK(la.labels == c.landmarks.labels);
}

TEST_CASE("grid conversions invert") {
  const PhantomCase c = generate(testing::small_spec(2), 0);
  LandmarkDetector d(DetectorConfig{}, c.volume.dims(), c.landmarks.labels, 1);
  const Vec3 p(3.2, -4.0, 7.5);
  CHECK((d.grid_to_centred(c.volume, d.centred_to_grid(c.volume, p)) - p).norm() < 1e-12);
  // The pooled input is the block mean.
  const nn::Tensor x = d.pooled_input(c.volume);
  double block = 0.0;
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 4; ++i) block += c.volume.at(i, j, k) / 64.0;
  CHECK(x[0] == doctest::Approx(block));
}

TEST_CASE("atlas selection matches a brute-force oracle") {
  std::mt19937_64 rng(4);
  PhantomSpec spec = testing::small_spec(0);
  spec.dims = {64, 64, 64};
  int checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    spec.seed = 1000 * trial;
    spec.n_landmarks = 3 + trial % 3;
    const int n = 2 + trial % 5;
    std::vector<AtlasCandidate> cands;
    std::vector<oracle::Candidate> oc;
    for (int i = 0; i < n; ++i) {
      cands.push_back(posed_candidate(i, spec, 0.7, rng));
      oc.push_back(to_oracle(cands.back()));
    }
    const Atlas a = select_atlas(cands, "spheres");
    const auto [best, margin] = oracle::brute_atlas(oc);
    if (margin > 1e-9) {
      CHECK(a.case_id == cands[best].id);
      ++checked;
    }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) CHECK(a.error_table[i][j] == doctest::Approx(oracle::registration_error(oc[i], oc[j])).epsilon(1e-6));
  }
  CHECK(checked >= 18);
  std::vector<AtlasCandidate> one{posed_candidate(0, spec, 0.0, rng)};
  CHECK_THROWS_AS(select_atlas(one, "spheres"), Error);
}

TEST_CASE("atlas json round trip") {
  std::mt19937_64 rng(5);
  PhantomSpec spec = testing::small_spec(9);
  std::vector<AtlasCandidate> c;
  for (int i = 0; i < 3; ++i) c.push_back(posed_candidate(i, spec, 0.5, rng));
  const Atlas a = select_atlas(c, "spheres");
  const Atlas b = atlas_from_json(atlas_to_json(a));
  CHECK(b.case_id == a.case_id);
  CHECK(b.plane == a.plane);
  CHECK(b.landmarks.points == a.landmarks.points);
  CHECK(b.landmarks.labels == a.landmarks.labels);
  CHECK(b.error_table == a.error_table);
  CHECK(b.mean_errors == a.mean_errors);
  CHECK_THROWS_AS(atlas_from_json("{}"), Error);
}

TEST_CASE("alignment with exact landmarks recovers the plane") {
  for (int s = 0; s < 10; ++s) {
    const PhantomCase atlas_case = generate(testing::small_spec(100 + s), 0);
    const PhantomCase c = generate(testing::small_spec(200 + s), 1);
    const std::vector<PhantomCase> pair{atlas_case, c};
    Atlas atlas = select_atlas(pair, "spheres");
    const PhantomCase& ref = atlas.case_id == 0 ? atlas_case : c;
    const PhantomCase& other = atlas.case_id == 0 ? c : atlas_case;
    const Alignment al = align_to_atlas(other.landmarks, atlas);
    const PlaneError e = plane_error(al.case_plane(), other.plane("spheres"));
    CHECK(e.ang < 1e-6);
    CHECK(e.dis < 1e-6);
    // The fitted transform is the relative pose.
    const RigidTransform rel = ref.pose * other.pose.inverse();
    CHECK((al.case_to_atlas.rotation - rel.rotation).norm() < 1e-9);
    CHECK((al.case_to_atlas.translation - rel.translation).norm() < 1e-9);
  }
}

TEST_CASE("alignment is equivariant under case motion") {
  std::mt19937_64 rng(6);
  const PhantomSpec spec = testing::small_spec(7);
  std::vector<AtlasCandidate> c;
  for (int i = 0; i < 3; ++i) c.push_back(posed_candidate(i, spec, 0.4, rng));
  const Atlas atlas = select_atlas(c, "spheres");
  const LandmarkSet& l = c[(atlas.case_id + 1) % 3].landmarks;
  const RigidTransform move = RigidTransform::checked(axis_angle_rotation(Vec3(1, 2, 3), 17.0), Vec3(2, -1, 0.5));
  const Alignment a = align_to_atlas(l, atlas);
  const Alignment b = align_to_atlas(transform_landmarks(l, move), atlas);
  const PlaneError e = plane_error(b.case_plane(), transform_plane(a.case_plane(), move));
  CHECK(e.ang < 1e-6);
  CHECK(e.dis < 1e-9);

  LandmarkSet relabelled = l;
  relabelled.labels[0] = "other";
  CHECK_THROWS_AS(align_to_atlas(relabelled, atlas), Error);
}

TEST_CASE("alignment under half-voxel landmark noise") {
  std::mt19937_64 rng(7);
  PhantomSpec spec = testing::small_spec(0);
  spec.dims = {64, 64, 64};
  const AtlasCandidate a0 = posed_candidate(0, spec, 0.0, rng);
  const AtlasCandidate a1 = posed_candidate(1, spec, 0.0, rng);
  const Atlas atlas = select_atlas(std::vector<AtlasCandidate>{a0, a1}, "spheres");
  int good = 0;
  for (int i = 0; i < 100; ++i) {
    const AtlasCandidate exact = posed_candidate(10 + i, spec, 0.0, rng);
    AtlasCandidate noisy = exact;
    std::normal_distribution<double> n(0.0, 0.5);
    for (Vec3& p : noisy.landmarks.points) p += Vec3(n(rng), n(rng), n(rng));
    const PlaneError e = plane_error(align_to_atlas(noisy.landmarks, atlas).case_plane(), exact.plane);
    good += e.ang <= 15.0 && e.dis <= 5.0;
  }
  CHECK(good >= 90);
}
