#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "ksi/scenesim.hpp"

using namespace ksi;
using namespace ksi::sim;

namespace {

SceneConfig small_config(std::uint64_t seed = 1) {
  SceneConfig c;
  c.seed = seed;
  c.n_trunks_per_row = 10;
  return c;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Mean cosine between descriptors of two different trunks (same anchor slot),
// estimated by drawing fresh observations.
double mean_inter_trunk_cosine(double alpha, std::uint64_t seed, int draws) {
  SceneConfig c = small_config(seed);
  c.aliasing_alpha = alpha;
  const Scene s = generate_scene(c);
  Rng rng(99);
  double sum = 0.0;
  for (int k = 0; k < draws; ++k) {
    const auto a = synth_descriptor(SemanticClass::Trunk, 1, s, rng, nullptr, 0);
    const auto b = synth_descriptor(SemanticClass::Trunk, 2, s, rng, nullptr, 0);
    sum += dot(a, b);
  }
  return sum / draws;
}

}  // namespace

TEST(SceneConfig, ValidationNamesField) {
  SceneConfig c;
  c.descriptor_dim = 7;
  try {
    c.validate();
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.field(), "descriptor_dim");
  }
  c = {};
  c.n_rows = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.noise_sigma = -1;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.aliasing_alpha = std::nan("");
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(SceneConfig, JsonRoundTripAndUnknownField) {
  SceneConfig c = small_config(42);
  c.aliasing_alpha = 0.3;
  const nlohmann::json j = c;
  const auto back = j.get<SceneConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  nlohmann::json bad = j;
  bad["trunks"] = 3;
  EXPECT_THROW(bad.get<SceneConfig>(), ValidationError);
}

TEST(Scene, CountsInstances) {
  const Scene s = generate_scene(small_config());
  int trunks = 0, buildings = 0;
  std::set<int> ids;
  for (const auto& i : s.instances) {
    trunks += i.cls == SemanticClass::Trunk;
    buildings += i.cls == SemanticClass::Building;
    ids.insert(i.id);
  }
  EXPECT_EQ(trunks, 20);
  EXPECT_EQ(buildings, s.config.n_buildings);
  EXPECT_EQ(ids.size(), s.instances.size());
}

TEST(Scene, DeterministicGivenSeed) {
  const auto a = to_json(generate_scene(small_config(7))).dump();
  const auto b = to_json(generate_scene(small_config(7))).dump();
  const auto c = to_json(generate_scene(small_config(8))).dump();
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Scene, FullScaleLoopLength) {
  SceneConfig c = SceneConfig::full_scale();
  const Scene s = generate_scene(c);
  const double len = trajectory_length(s);
  EXPECT_NEAR(len, 153.0, 0.05 * 153.0);
}

TEST(Scene, TrajectoryIsClosed) {
  const Scene s = generate_scene(small_config());
  EXPECT_LT((s.trajectory.front().center() - s.trajectory.back().center()).norm(), 1e-9);
  EXPECT_LT(geom::rotation_distance(s.trajectory.front().rotation, s.trajectory.back().rotation), 1e-9);
}

TEST(Scene, TurnsRespectMaxHeadingStep) {
  SceneConfig c = small_config();
  c.heading_wobble = 0.0;
  const Scene s = generate_scene(c);
  for (std::size_t k = 1; k < s.trajectory.size(); ++k)
    ASSERT_LE(geom::rotation_distance(s.trajectory[k - 1].rotation, s.trajectory[k].rotation), c.max_turn_step + 1e-9);
}

TEST(Scene, JsonRoundTrip) {
  const Scene s = generate_scene(small_config(3));
  const auto j = to_json(s);
  EXPECT_EQ(to_json(scene_from_json(j)).dump(), j.dump());
}

TEST(Descriptor, UnitNorm) {
  const Scene s = generate_scene(small_config());
  Rng rng(1);
  for (int k = 0; k < 50; ++k) {
    const auto d = synth_descriptor(SemanticClass::Trunk, 1 + k % 20, s, rng, nullptr, k % 8);
    ASSERT_NEAR(std::sqrt(dot(d, d)), 1.0, 1e-9);
  }
}

TEST(Descriptor, NoAliasingNoNoiseMeansIdenticalTrunks) {
  SceneConfig c = small_config();
  c.aliasing_alpha = 0.0;
  c.noise_sigma = 0.0;
  const Scene s = generate_scene(c);
  Rng rng(1);
  EXPECT_EQ(synth_descriptor(SemanticClass::Trunk, 1, s, rng, nullptr, 2),
            synth_descriptor(SemanticClass::Trunk, 7, s, rng, nullptr, 2));
}

TEST(Descriptor, OrthogonalOffsetsGiveHalfCosine) {
  // Unit base, alpha = 1 with orthonormal offsets: (b + o1).(b + o2) / 2 = 1/2.
  const std::vector<double> base{1, 0, 0, 0}, o1{0, 1, 0, 0}, o2{0, 0, 1, 0};
  Rng rng(1);
  const auto a = synth_descriptor(base, &o1, 1.0, 0.0, rng);
  const auto b = synth_descriptor(base, &o2, 1.0, 0.0, rng);
  EXPECT_NEAR(dot(a, b), 0.5, 1e-15);
}

TEST(Descriptor, InterTrunkCosineMatchesExpectation) {
  // E[cos] ~ (1 + beta^2) / (1 + beta^2 + alpha^2 + sigma^2 D) for two trunks
  // observed at the same slot; offsets are orthogonal to the base, slot
  // patterns shared. Independent offsets are close to orthogonal in 256-D.
  const SceneConfig c;
  const double beta2 = c.anchor_beta * c.anchor_beta;
  const double expect = (1.0 + beta2) / (1.0 + beta2 + c.aliasing_alpha * c.aliasing_alpha +
                                         c.noise_sigma * c.noise_sigma * c.descriptor_dim);
  double mc = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) mc += mean_inter_trunk_cosine(c.aliasing_alpha, seed, 200);
  EXPECT_NEAR(mc / 5.0, expect, 0.01);
}

TEST(Descriptor, CosineNonIncreasingInAlpha) {
  double prev = 2.0;
  for (double alpha : {0.0, 0.05, 0.2, 1.0}) {
    const double m = mean_inter_trunk_cosine(alpha, 11, 200);
    EXPECT_LE(m, prev + 1e-3) << "alpha " << alpha;
    prev = m;
  }
}

TEST(Render, Deterministic) {
  const Scene s = generate_scene(small_config());
  EXPECT_EQ(to_json(render_frame(s, 5)).dump(), to_json(render_frame(s, 5)).dump());
  EXPECT_THROW(render_frame(s, -1), ValidationError);
  EXPECT_THROW(render_frame(s, static_cast<int>(s.trajectory.size())), ValidationError);
}

TEST(Render, FrameInvariants) {
  const Scene s = generate_scene(small_config());
  for (int f = 0; f < static_cast<int>(s.trajectory.size()); f += 7) {
    const auto o = render_frame(s, f);
    ASSERT_EQ(o.keypoints.size(), o.gt_instance.size());
    ASSERT_EQ(o.keypoints.size(), o.gt_depth.size());
    ASSERT_EQ(o.masks.size(), o.mask_depth.size());
    for (const auto& m : o.masks) ASSERT_GT(m.bitmap.count(), 0u);
    int background = 0;
    for (std::size_t k = 0; k < o.keypoints.size(); ++k) {
      const auto& p = o.keypoints[k].position;
      ASSERT_TRUE(s.intrinsics.contains(p));
      ASSERT_GT(o.gt_depth[k], 0.0);
      if (o.gt_instance[k] == kBackgroundInstance) {
        ++background;
        continue;
      }
      const auto* m = o.mask_of(o.gt_instance[k]);
      ASSERT_NE(m, nullptr);
      ASSERT_TRUE(m->bitmap.at(static_cast<int>(p.x()), static_cast<int>(p.y())));
    }
    ASSERT_LE(background, s.config.background_keypoints);
  }
}

TEST(Render, KeypointDepthMatchesPose) {
  const Scene s = generate_scene(small_config());
  const auto o = render_frame(s, 3);
  for (std::size_t k = 0; k < o.keypoints.size(); ++k) {
    const auto w = geom::backproject(s.intrinsics, o.pose_gt, o.keypoints[k].position, o.gt_depth[k]);
    const auto uv = geom::project(s.intrinsics, o.pose_gt, w);
    ASSERT_LT((*uv - o.keypoints[k].position).norm(), 1e-9);
  }
}

TEST(Render, InstanceBehindCameraIsAbsent) {
  const Scene s = generate_scene(small_config());
  const auto o = render_frame(s, 0);
  for (const auto& m : o.masks) {
    const auto& inst = s.instance(m.instance_id);
    bool any_in_front = false;
    for (std::size_t i = 0; i < inst.footprint.size(); ++i) {
      any_in_front |= o.pose_gt.apply(inst.bottom_vertex(i)).z() > 0.0;
      any_in_front |= o.pose_gt.apply(inst.top_vertex(i)).z() > 0.0;
    }
    EXPECT_TRUE(any_in_front) << "instance " << m.instance_id;
  }
}

TEST(Render, AdjacentFramesHaveCorrespondences) {
  const Scene s = generate_scene(small_config());
  for (int f = 0; f + 1 < static_cast<int>(s.trajectory.size()); ++f) {
    const auto a = render_frame(s, f), b = render_frame(s, f + 1);
    const std::set<std::int64_t> seen(a.anchor_id.begin(), a.anchor_id.end());
    int shared_anchors = 0;
    for (auto id : b.anchor_id) shared_anchors += static_cast<int>(seen.count(id));
    ASSERT_GT(shared_anchors, 0) << "frame " << f;

    // Whenever both frames see trunks, at least one of them is the same trunk.
    bool trunk_a = false, trunk_b = false, shared = false;
    for (const auto& m : a.masks) {
      if (m.cls != SemanticClass::Trunk) continue;
      trunk_a = true;
      shared = shared || b.mask_of(m.instance_id) != nullptr;
    }
    for (const auto& m : b.masks) trunk_b = trunk_b || m.cls == SemanticClass::Trunk;
    if (trunk_a && trunk_b) ASSERT_TRUE(shared) << "frame " << f;
  }
}

TEST(Render, VisibilityDropsInstanceKeypoints) {
  SceneConfig c = small_config();
  c.visibility = 0.0;
  const Scene s = generate_scene(c);
  const auto o = render_frame(s, 4);
  for (int id : o.gt_instance) EXPECT_EQ(id, kBackgroundInstance);
}

TEST(Render, FrameJsonRoundTrip) {
  const Scene s = generate_scene(small_config());
  const auto o = render_frame(s, 9);
  const auto j = to_json(o);
  EXPECT_EQ(to_json(frame_from_json(j)).dump(), j.dump());
}
