#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ksi/posekit.hpp"

using namespace ksi;
using namespace ksi::pose;
using ksi::geom::random_pose;

namespace {

struct TwoView {
  PoseSE3 rel;  // camera a -> camera b
  std::vector<Correspondence> c;
  std::vector<Vec3> points_a;  // in camera a
};

Mat3 skew(const Vec3& t) {
  Mat3 m;
  m << 0, -t.z(), t.y(), t.z(), 0, -t.x(), -t.y(), t.x(), 0;
  return m;
}

TwoView two_view(std::uint64_t seed, int n) {
  Rng rng(seed);
  TwoView v;
  const Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  v.rel.rotation = RotationMatrix::from_axis_angle(axis.normalized() * rng.uniform(0.05, 0.3));
  v.rel.translation = Vec3(rng.uniform(-1, 1), rng.uniform(-0.3, 0.3), rng.uniform(-0.5, 0.5)).normalized() * 0.8;
  while (static_cast<int>(v.c.size()) < n) {
    const Vec3 xa(rng.uniform(-3, 3), rng.uniform(-2, 2), rng.uniform(4, 12));
    const Vec3 xb = v.rel.apply(xa);
    if (xb.z() < 1.0) continue;
    v.points_a.push_back(xa);
    v.c.push_back({xa.hnormalized(), xb.hnormalized()});
  }
  return v;
}

double max_residual(const Mat3& e, const std::vector<Correspondence>& c) {
  double worst = 0.0;
  for (const auto& x : c) worst = std::max(worst, std::abs(x.b.homogeneous().dot(e * x.a.homogeneous())));
  return worst;
}

double angle_deg(const Mat3& a, const Mat3& b) {
  return geom::rotation_distance(RotationMatrix::nearest(a), RotationMatrix::nearest(b)) * 180.0 / std::numbers::pi;
}

}  // namespace

TEST(EightPoint, PureTranslation) {
  TwoView v = two_view(1, 20);
  v.rel = {RotationMatrix(), Vec3(1, 0, 0)};
  for (std::size_t i = 0; i < v.c.size(); ++i) v.c[i].b = (v.points_a[i] + v.rel.translation).hnormalized();
  const Mat3 e = essential_8pt(v.c);
  EXPECT_LT(max_residual(skew(v.rel.translation), v.c), 1e-12);
  EXPECT_LT(max_residual(e, v.c), 1e-12);
  // E is skew(t) up to sign
  const Mat3 want = skew(v.rel.translation);
  EXPECT_LT(std::min((e - want).norm(), (e + want).norm()), 1e-9);
}

TEST(EightPoint, NoiseFreeSeededPose) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const TwoView v = two_view(seed, 8);
    const Mat3 e = essential_8pt(v.c);
    for (const auto& c : v.c) ASSERT_LT(sampson_distance(e, c), 1e-9);
    ASSERT_LT(max_residual(e, v.c), 1e-9);
    Eigen::JacobiSVD<Mat3> svd(e);
    const auto s = svd.singularValues();
    ASSERT_NEAR(s[0] / s[1], 1.0, 1e-6);
    ASSERT_LT(s[2] / s[0], 1e-6);
  }
}

TEST(EightPoint, PlanarSceneIsDegenerate) {
  Rng rng(4);
  const TwoView base = two_view(2, 8);
  std::vector<Correspondence> c;
  for (int i = 0; i < 12; ++i) {
    const Vec3 xa(rng.uniform(-2, 2), rng.uniform(-2, 2), 6.0);  // the plane z = 6
    c.push_back({xa.hnormalized(), base.rel.apply(xa).hnormalized()});
  }
  EXPECT_THROW(essential_8pt(c), DegenerateError);
}

TEST(EightPoint, NeedsEight) {
  const TwoView v = two_view(3, 7);
  EXPECT_THROW(essential_8pt(v.c), ValidationError);
  RansacConfig cfg;
  EXPECT_THROW(ransac_essential(v.c, cfg), ValidationError);
}

TEST(Ransac, AllInliersRecovered) {
  const TwoView v = two_view(5, 100);
  const auto r = ransac_essential(v.c, RansacConfig{});
  ASSERT_TRUE(r.ok);
  EXPECT_EQ(r.inliers.size(), 100u);
  EXPECT_LT(max_residual(r.essential, v.c), 1e-9);
}

TEST(Ransac, SeparatesOutliers) {
  TwoView v = two_view(6, 70);
  Rng rng(60);
  for (int i = 0; i < 30; ++i)
    v.c.push_back({Vec2(rng.uniform(-0.5, 0.5), rng.uniform(-0.4, 0.4)), Vec2(rng.uniform(-0.5, 0.5), rng.uniform(-0.4, 0.4))});
  RansacConfig cfg;
  cfg.seed = 9;
  const auto r = ransac_essential(v.c, cfg);
  ASSERT_TRUE(r.ok);
  // Ground truth: the 70 generated inliers plus any outlier that happens to
  // fall within the threshold of the true epipolar geometry.
  const Mat3 e_true = skew(v.rel.translation) * v.rel.rotation.matrix();
  std::vector<int> want;
  for (int i = 0; i < 100; ++i)
    if (i < 70 || sampson_distance(e_true, v.c[static_cast<std::size_t>(i)]) < cfg.inlier_threshold) want.push_back(i);
  EXPECT_EQ(r.inliers, want);
  EXPECT_LE(want.size(), 72u);
  const auto rp = estimate_relative_pose(v.c, cfg);
  ASSERT_TRUE(rp.ok);
  EXPECT_LT(angle_deg(rp.rotation.matrix(), v.rel.rotation.matrix()), 0.1);
}

TEST(Ransac, Deterministic) {
  TwoView v = two_view(7, 60);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) v.c.push_back({Vec2(rng.uniform(-0.5, 0.5), 0.1), Vec2(0.2, rng.uniform(-0.4, 0.4))});
  RansacConfig cfg;
  cfg.seed = 4;
  const auto a = ransac_essential(v.c, cfg), b = ransac_essential(v.c, cfg);
  EXPECT_EQ(a.inliers, b.inliers);
  EXPECT_EQ(a.iterations, b.iterations);
  EXPECT_TRUE(a.essential == b.essential);
}

TEST(Ransac, TooFewInliersIsSignalled) {
  Rng rng(2);
  std::vector<Correspondence> c;
  for (int i = 0; i < 40; ++i)
    c.push_back({Vec2(rng.uniform(-0.5, 0.5), rng.uniform(-0.4, 0.4)), Vec2(rng.uniform(-0.5, 0.5), rng.uniform(-0.4, 0.4))});
  RansacConfig cfg;
  cfg.min_inliers = 30;
  const auto r = ransac_essential(c, cfg);
  EXPECT_FALSE(r.ok);
  EXPECT_FALSE(r.failure.empty());
}

TEST(Ransac, AdaptiveIterations) {
  EXPECT_EQ(adaptive_iterations(1.0, 8, 0.999, 2000), 1);
  EXPECT_EQ(adaptive_iterations(0.0, 8, 0.999, 2000), 2000);
  EXPECT_EQ(adaptive_iterations(0.5, 8, 0.999, 2000),
            static_cast<int>(std::ceil(std::log(0.001) / std::log(1.0 - std::pow(0.5, 8)))));
  EXPECT_EQ(adaptive_iterations(0.1, 8, 0.999, 2000), 2000);
}

TEST(Decompose, RecoversPose) {
  for (std::uint64_t seed = 10; seed < 30; ++seed) {
    const TwoView v = two_view(seed, 30);
    const Mat3 e = skew(v.rel.translation) * v.rel.rotation.matrix();
    const auto r = decompose_essential(e, v.c);
    ASSERT_TRUE(r.ok);
    ASSERT_LT(geom::rotation_distance(r.rotation, v.rel.rotation), 1e-6);
    ASSERT_LT((r.direction - v.rel.translation.normalized()).norm(), 1e-6);
  }
}

TEST(Decompose, PureTranslationGivesIdentity) {
  TwoView v = two_view(11, 20);
  const Vec3 t(0.3, 0.1, 0.9);
  for (std::size_t i = 0; i < v.c.size(); ++i) v.c[i].b = (v.points_a[i] + t).hnormalized();
  const auto r = decompose_essential(skew(t), v.c);
  ASSERT_TRUE(r.ok);
  EXPECT_LT((r.rotation.matrix() - Mat3::Identity()).norm(), 1e-9);
}

TEST(Decompose, PointOnBaselineFailsEveryCandidate) {
  // Forward motion; the only inlier sits at the epipole, so no candidate can
  // put it strictly in front of both cameras.
  const Vec3 t(0, 0, 1);
  const auto r = decompose_essential(skew(t), {{Vec2(0, 0), Vec2(0, 0)}});
  EXPECT_FALSE(r.ok);
  EXPECT_THROW(decompose_essential(skew(t), {}), ValidationError);
}

TEST(Scale, Examples) {
  const PoseSE3 gt{RotationMatrix(), Vec3(0, 1.5, 2.0)};
  EXPECT_EQ(scale_translation(Vec3(1, 0, 0), gt), Vec3(2.5, 0, 0));
  EXPECT_EQ(scale_translation(Vec3(0, 0, 1), PoseSE3::identity()), Vec3::Zero());
  Rng rng(3);
  const PoseSE3 p = random_pose(rng);
  EXPECT_NEAR(scale_translation(Vec3(1, 2, 2).normalized(), p).norm(), p.translation.norm(), 1e-12);
  EXPECT_THROW(scale_translation(Vec3(1, 1, 0), gt), ValidationError);
}

TEST(Chain, GroundTruthRelativesReproduceAbsolutes) {
  Rng rng(8);
  std::vector<PoseSE3> abs{random_pose(rng)};
  std::vector<std::optional<PoseSE3>> rel;
  for (int k = 0; k < 100; ++k) {
    const PoseSE3 step{RotationMatrix::from_axis_angle(Vec3(0, rng.uniform(-0.1, 0.1), 0)),
                       Vec3(rng.uniform(-0.2, 0.2), 0, rng.uniform(0.5, 1.0))};
    abs.push_back(step * abs.back());
    rel.push_back(geom::relative_pose(abs[abs.size() - 2], abs.back()));
  }
  const auto t = chain_trajectory(rel, abs[0]);
  ASSERT_EQ(t.size(), 101u);
  for (std::size_t k = 0; k < t.size(); ++k) {
    ASSERT_LT((t[k].pose.translation - abs[k].translation).norm(), 1e-9);
    ASSERT_LT((t[k].pose.rotation.matrix() - abs[k].rotation.matrix()).norm(), 1e-9);
  }
  EXPECT_EQ(t.flagged_count(), 0u);
}

TEST(Chain, EmptyAndSkip) {
  const auto single = chain_trajectory({}, PoseSE3::identity());
  EXPECT_EQ(single.size(), 1u);
  const PoseSE3 step{RotationMatrix(), Vec3(0, 0, -1)};
  const auto t = chain_trajectory({step, std::nullopt, step}, PoseSE3::identity());
  ASSERT_EQ(t.size(), 4u);
  EXPECT_TRUE(t[2].flagged);
  EXPECT_EQ(t.flagged_count(), 1u);
  EXPECT_LT((t[3].pose.translation - Vec3(0, 0, -3)).norm(), 1e-12);  // constant velocity through the gap
}

TEST(Trajectory, StrictlyIncreasing) {
  Trajectory t;
  t.push(3, PoseSE3::identity());
  EXPECT_THROW(t.push(3, PoseSE3::identity()), ValidationError);
}

TEST(Tum, RoundTrip) {
  Rng rng(12);
  Trajectory t;
  for (int k = 0; k < 10; ++k) t.push(2 * k, random_pose(rng));
  const std::string text = to_tum(t);
  const auto back = from_tum(text);
  ASSERT_EQ(back.size(), t.size());
  for (std::size_t k = 0; k < t.size(); ++k) {
    EXPECT_EQ(back[k].frame_index, t[k].frame_index);
    EXPECT_LT((back[k].pose.translation - t[k].pose.translation).norm(), 1e-12);
    EXPECT_LT((back[k].pose.rotation.matrix() - t[k].pose.rotation.matrix()).norm(), 1e-12);
  }
  EXPECT_THROW(from_tum("1 2 3\n"), ValidationError);
}

TEST(Tum, WritesCameraCentre) {
  Trajectory t;
  t.push(0, geom::look_along(Vec3(4, 5, 1), 0.3));
  std::istringstream in(to_tum(t));
  int idx;
  double x, y, z;
  in >> idx >> x >> y >> z;
  EXPECT_NEAR(x, 4, 1e-12);
  EXPECT_NEAR(y, 5, 1e-12);
  EXPECT_NEAR(z, 1, 1e-12);
}

namespace {

struct PnpScene {
  PoseSE3 pose;
  std::vector<Vec2> px;
  std::vector<Vec3> world;
};

PnpScene pnp_scene(std::uint64_t seed, int n) {
  Rng rng(seed);
  const geom::CameraIntrinsics intr;
  PnpScene s;
  s.pose = geom::look_along(Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), 1.2), rng.uniform(-3, 3));
  while (static_cast<int>(s.world.size()) < n) {
    const Vec3 pc(rng.uniform(-4, 4), rng.uniform(-3, 3), rng.uniform(3, 20));
    const Vec3 w = geom::se3_inverse(s.pose).apply(pc);
    const auto uv = geom::project(intr, s.pose, w);
    if (!uv || !intr.contains(*uv)) continue;
    s.world.push_back(w);
    s.px.push_back(*uv);
  }
  return s;
}

}  // namespace

TEST(Pnp, NoiseFree) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto s = pnp_scene(seed, 20);
    const auto r = pnp_dlt_ransac(s.px, s.world, geom::CameraIntrinsics{}, PnpConfig{});
    ASSERT_TRUE(r.ok);
    ASSERT_LT((r.pose.center() - s.pose.center()).norm(), 1e-6);
    ASSERT_LT((r.pose.translation - s.pose.translation).norm(), 1e-6);
  }
}

TEST(Pnp, NeedsSix) {
  const auto s = pnp_scene(2, 5);
  EXPECT_THROW(pnp_dlt_ransac(s.px, s.world, geom::CameraIntrinsics{}, PnpConfig{}), ValidationError);
}

TEST(Pnp, HalfGrossOutliers) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto s = pnp_scene(seed, 60);
    Rng rng(100 + seed);
    for (std::size_t i = 0; i < 30; ++i) s.px[2 * i] = Vec2(rng.uniform(0, 640), rng.uniform(0, 480));
    PnpConfig cfg;
    cfg.seed = seed;
    const auto r = pnp_dlt_ransac(s.px, s.world, geom::CameraIntrinsics{}, cfg);
    ASSERT_TRUE(r.ok);
    EXPECT_LT((r.pose.center() - s.pose.center()).norm(), 0.01);
    EXPECT_EQ(r.inliers.size(), 30u);
  }
}

TEST(Pnp, AllOutliersFail) {
  auto s = pnp_scene(3, 30);
  Rng rng(5);
  for (auto& p : s.px) p = Vec2(rng.uniform(0, 640), rng.uniform(0, 480));
  const auto r = pnp_dlt_ransac(s.px, s.world, geom::CameraIntrinsics{}, PnpConfig{});
  EXPECT_FALSE(r.ok);
}
