#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "ksi/bitmap.hpp"
#include "ksi/error.hpp"
#include "ksi/geom.hpp"
#include "ksi/rng.hpp"

// Deterministic two-row vineyard simulator.
//
// World frame: X along the rows, Y across them, Z up, ground at Z = 0.
// Trunk row r stands on the line Y = r * row_spacing. The camera drives
// forward (+X) along Y = -row_spacing/2, makes a U-turn around the far end of
// row 1, drives back (-X) along Y = +row_spacing/2 and turns around the near
// end to close the loop.
namespace ksi::sim {

using geom::Vec2;
using geom::Vec3;

enum class SemanticClass { Trunk, Building, Background };

inline std::string to_string(SemanticClass c) {
  switch (c) {
    case SemanticClass::Trunk: return "trunk";
    case SemanticClass::Building: return "building";
    case SemanticClass::Background: return "background";
  }
  return "background";
}

inline SemanticClass class_from_string(const std::string& s) {
  if (s == "trunk") return SemanticClass::Trunk;
  if (s == "building") return SemanticClass::Building;
  if (s == "background") return SemanticClass::Background;
  throw ValidationError("unknown semantic class '" + s + "'", "class");
}

inline constexpr int kBackgroundInstance = -1;

struct SceneConfig {
  int n_trunks_per_row = 12;
  int n_rows = 2;
  double row_length = 12.0;  // meters
  int n_buildings = 2;
  double aliasing_alpha = 0.05;
  double noise_sigma = 0.02;
  int descriptor_dim = 256;
  int keypoints_per_instance = 8;
  int background_keypoints = 40;  // per-frame cap
  std::uint64_t seed = 1;

  // Fraction of instance keypoints kept per observation (foliage stand-in).
  double visibility = 1.0;
  double row_spacing = 2.5;    // meters between trunk rows
  double row_margin = 2.0;     // straight path beyond each row end
  double frame_spacing = 0.4;  // meters of path between frames
  double max_turn_step = 0.1;  // radians of heading change between frames on turns
  double camera_height = 1.0;
  double path_wobble = 0.05;     // lateral sway amplitude, meters
  double heading_wobble = 0.02;  // yaw sway amplitude, radians
  double pixel_noise = 0.0;      // keypoint position noise, pixels (std)
  // Weight of a per-slot pattern shared by the k-th anchor of every instance
  // of a class; 0 reproduces the plain instance-offset model.
  double anchor_beta = 0.2;
  double ground_relief = 0.3;  // height range of ground-texture anchors, meters
  geom::CameraIntrinsics intrinsics;

  void validate() const {
    auto positive_count = [](int v, const char* name) {
      if (v < 1) throw ValidationError("must be >= 1", name);
    };
    positive_count(n_trunks_per_row, "n_trunks_per_row");
    positive_count(n_rows, "n_rows");
    positive_count(n_buildings, "n_buildings");
    positive_count(keypoints_per_instance, "keypoints_per_instance");
    positive_count(background_keypoints, "background_keypoints");
    if (descriptor_dim < 8 || descriptor_dim % 2 != 0)
      throw ValidationError("must be even and >= 8", "descriptor_dim");
    auto nonneg = [](double v, const char* name) {
      if (!std::isfinite(v) || v < 0.0) throw ValidationError("must be finite and >= 0", name);
    };
    auto positive = [](double v, const char* name) {
      if (!std::isfinite(v) || !(v > 0.0)) throw ValidationError("must be finite and > 0", name);
    };
    nonneg(aliasing_alpha, "aliasing_alpha");
    nonneg(noise_sigma, "noise_sigma");
    nonneg(path_wobble, "path_wobble");
    nonneg(heading_wobble, "heading_wobble");
    nonneg(pixel_noise, "pixel_noise");
    nonneg(anchor_beta, "anchor_beta");
    nonneg(ground_relief, "ground_relief");
    positive(row_length, "row_length");
    positive(row_spacing, "row_spacing");
    positive(frame_spacing, "frame_spacing");
    positive(max_turn_step, "max_turn_step");
    positive(camera_height, "camera_height");
    nonneg(row_margin, "row_margin");
    if (!(visibility >= 0.0 && visibility <= 1.0)) throw ValidationError("must lie in [0, 1]", "visibility");
    intrinsics.validate();
  }

  // Loop length for the given geometry.
  double loop_length() const { return 2.0 * (row_length + 2.0 * row_margin) + std::numbers::pi * row_spacing; }

  // Full-size loop (about 153 m of path).
  static SceneConfig full_scale() {
    SceneConfig c;
    c.row_length = 68.6;
    c.n_trunks_per_row = 57;
    c.frame_spacing = 1.0;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const SceneConfig& c) {
  j = nlohmann::json{{"n_trunks_per_row", c.n_trunks_per_row},
                     {"n_rows", c.n_rows},
                     {"row_length", c.row_length},
                     {"n_buildings", c.n_buildings},
                     {"aliasing_alpha", c.aliasing_alpha},
                     {"noise_sigma", c.noise_sigma},
                     {"descriptor_dim", c.descriptor_dim},
                     {"keypoints_per_instance", c.keypoints_per_instance},
                     {"background_keypoints", c.background_keypoints},
                     {"seed", c.seed},
                     {"visibility", c.visibility},
                     {"row_spacing", c.row_spacing},
                     {"row_margin", c.row_margin},
                     {"frame_spacing", c.frame_spacing},
                     {"max_turn_step", c.max_turn_step},
                     {"camera_height", c.camera_height},
                     {"path_wobble", c.path_wobble},
                     {"heading_wobble", c.heading_wobble},
                     {"pixel_noise", c.pixel_noise},
                     {"anchor_beta", c.anchor_beta},
                     {"ground_relief", c.ground_relief},
                     {"intrinsics", c.intrinsics}};
}

// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, SceneConfig& c) {
  static const char* known[] = {"n_trunks_per_row", "n_rows",        "row_length",     "n_buildings",
                                "aliasing_alpha",   "noise_sigma",   "descriptor_dim", "keypoints_per_instance",
                                "background_keypoints", "seed",      "visibility",     "row_spacing",
                                "row_margin",       "frame_spacing", "camera_height",  "path_wobble",
                                "heading_wobble",   "pixel_noise",   "anchor_beta",    "ground_relief", "max_turn_step",
                                "intrinsics"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(std::begin(known), std::end(known), it.key()) == std::end(known))
      throw ValidationError("unknown scene config field", it.key());
  }
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("wrong type", key);
    }
  };
  get("n_trunks_per_row", c.n_trunks_per_row);
  get("n_rows", c.n_rows);
  get("row_length", c.row_length);
  get("n_buildings", c.n_buildings);
  get("aliasing_alpha", c.aliasing_alpha);
  get("noise_sigma", c.noise_sigma);
  get("descriptor_dim", c.descriptor_dim);
  get("keypoints_per_instance", c.keypoints_per_instance);
  get("background_keypoints", c.background_keypoints);
  get("seed", c.seed);
  get("visibility", c.visibility);
  get("row_spacing", c.row_spacing);
  get("row_margin", c.row_margin);
  get("frame_spacing", c.frame_spacing);
  get("max_turn_step", c.max_turn_step);
  get("camera_height", c.camera_height);
  get("path_wobble", c.path_wobble);
  get("heading_wobble", c.heading_wobble);
  get("pixel_noise", c.pixel_noise);
  get("anchor_beta", c.anchor_beta);
  get("ground_relief", c.ground_relief);
  get("intrinsics", c.intrinsics);
}

// Convex solid as the intersection of half-spaces n.p <= c.
struct ConvexSolid {
  std::vector<Vec3> vertices;
  std::vector<std::pair<int, int>> edges;
  std::vector<std::pair<Vec3, double>> planes;

  ConvexSolid transformed(const geom::PoseSE3& pose) const {
    ConvexSolid out;
    out.edges = edges;
    out.vertices.reserve(vertices.size());
    for (const auto& v : vertices) out.vertices.push_back(pose.apply(v));
    out.planes.reserve(planes.size());
    for (const auto& [n, c] : planes) {
      const Vec3 rn = pose.rotation * n;
      out.planes.emplace_back(rn, c + rn.dot(pose.translation));
    }
    return out;
  }

  // Entry distance along the ray o + s*d (s > s_min), if it hits.
  std::optional<double> ray_entry(const Vec3& o, const Vec3& d, double s_min) const {
    double s_in = s_min, s_out = std::numeric_limits<double>::infinity();
    for (const auto& [n, c] : planes) {
      const double nd = n.dot(d);
      const double rhs = c - n.dot(o);
      if (nd > 0.0) {
        s_out = std::min(s_out, rhs / nd);
      } else if (nd < 0.0) {
        s_in = std::max(s_in, rhs / nd);
      } else if (rhs < 0.0) {
        return std::nullopt;
      }
      if (s_in > s_out) return std::nullopt;
    }
    return s_in;
  }
};

// Vertical frustum-like prism: footprint polygon on the ground, top face
// scaled about the footprint centroid and shifted by `lean`.
struct Instance {
  int id = 0;
  SemanticClass cls = SemanticClass::Trunk;
  std::vector<Vec2> footprint;  // counter-clockwise, meters
  double height = 1.0;
  double top_scale = 1.0;
  Vec2 lean = Vec2::Zero();
  std::vector<Vec3> anchors;  // persistent keypoint anchors on the side faces

  Vec2 centroid() const {
    Vec2 c = Vec2::Zero();
    for (const auto& p : footprint) c += p;
    return c / static_cast<double>(footprint.size());
  }

  Vec3 top_vertex(std::size_t i) const {
    const Vec2 c = centroid();
    const Vec2 p = c + top_scale * (footprint[i] - c) + lean;
    return {p.x(), p.y(), height};
  }
  Vec3 bottom_vertex(std::size_t i) const { return {footprint[i].x(), footprint[i].y(), 0.0}; }

  ConvexSolid solid() const {
    ConvexSolid s;
    const std::size_t n = footprint.size();
    for (std::size_t i = 0; i < n; ++i) s.vertices.push_back(bottom_vertex(i));
    for (std::size_t i = 0; i < n; ++i) s.vertices.push_back(top_vertex(i));
    Vec3 inside = Vec3::Zero();
    for (const auto& v : s.vertices) inside += v;
    inside /= static_cast<double>(s.vertices.size());
    auto add_plane = [&](Vec3 normal, const Vec3& on) {
      normal.normalize();
      if (normal.dot(inside - on) > 0.0) normal = -normal;
      s.planes.emplace_back(normal, normal.dot(on));
    };
    add_plane(Vec3(0, 0, -1), s.vertices[0]);
    add_plane((s.vertices[n + 1] - s.vertices[n]).cross(s.vertices[n + 2] - s.vertices[n]), s.vertices[n]);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = (i + 1) % n;
      add_plane((s.vertices[j] - s.vertices[i]).cross(s.vertices[n + i] - s.vertices[i]), s.vertices[i]);
      s.edges.emplace_back(static_cast<int>(i), static_cast<int>(j));
      s.edges.emplace_back(static_cast<int>(n + i), static_cast<int>(n + j));
      s.edges.emplace_back(static_cast<int>(i), static_cast<int>(n + i));
    }
    return s;
  }
};

struct BackgroundAnchor {
  Vec3 position;
  double priority = 0.0;  // per-frame selection keeps the highest priorities
  std::vector<double> base;
};

struct Scene {
  SceneConfig config;
  geom::CameraIntrinsics intrinsics;
  std::vector<Instance> instances;
  std::vector<geom::PoseSE3> trajectory;  // world-to-camera, indexed by frame
  std::map<SemanticClass, std::vector<double>> base_descriptors;
  std::vector<std::vector<double>> instance_offsets;  // parallel to instances
  std::map<SemanticClass, std::vector<std::vector<double>>> slot_patterns;  // per class, one per anchor slot
  std::vector<BackgroundAnchor> background;

  const Instance& instance(int id) const {
    for (const auto& inst : instances)
      if (inst.id == id) return inst;
    throw ValidationError("no instance with id " + std::to_string(id), "instance_id");
  }
  std::size_t instance_index(int id) const { return static_cast<std::size_t>(&instance(id) - instances.data()); }
};

struct Keypoint {
  Vec2 position = Vec2::Zero();
  std::vector<double> descriptor;
};

struct InstanceMask {
  int instance_id = 0;
  SemanticClass cls = SemanticClass::Trunk;
  Bitmap bitmap;
};

// Per-pixel camera depth over a mask's crop window.
struct DepthPatch {
  PixelBox box;
  std::vector<double> depth;

  double at(int x, int y) const {
    if (!box.contains(x, y)) return std::numeric_limits<double>::infinity();
    return depth[static_cast<std::size_t>(y - box.y0) * static_cast<std::size_t>(box.w()) +
                 static_cast<std::size_t>(x - box.x0)];
  }
};

struct FrameObservation {
  int frame_index = 0;
  std::vector<Keypoint> keypoints;
  std::vector<InstanceMask> masks;
  std::vector<int> gt_instance;           // per keypoint; kBackgroundInstance for background
  std::vector<double> gt_depth;           // per keypoint, meters
  std::vector<std::int64_t> anchor_id;    // per keypoint; shared by re-observations of one 3D point
  geom::PoseSE3 pose_gt;
  std::vector<DepthPatch> mask_depth;     // parallel to masks; not serialized

  const InstanceMask* mask_of(int instance_id) const {
    for (const auto& m : masks)
      if (m.instance_id == instance_id) return &m;
    return nullptr;
  }
};

namespace detail {

inline std::vector<double> random_unit(Rng& rng, int dim) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  double n2 = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    n2 += x * x;
  }
  const double n = std::sqrt(n2);
  for (auto& x : v) x /= n;
  return v;
}

// Unit vector orthogonal to `ref` (ref assumed unit).
inline std::vector<double> random_unit_orthogonal(Rng& rng, const std::vector<double>& ref) {
  std::vector<double> v = random_unit(rng, static_cast<int>(ref.size()));
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) d += v[i] * ref[i];
  double n2 = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] -= d * ref[i];
    n2 += v[i] * v[i];
  }
  const double n = std::sqrt(n2);
  for (auto& x : v) x /= n;
  return v;
}

struct PathSample {
  Vec2 position;
  double heading;
};

// Point on the nominal loop at arc length s (wrapped to [0, length)).
inline PathSample nominal_path(const SceneConfig& c, double s) {
  const double half = c.row_spacing / 2.0;
  const double x_start = -c.row_margin, x_end = c.row_length + c.row_margin;
  const double straight = x_end - x_start;
  const double turn = std::numbers::pi * half;
  const double length = 2.0 * straight + 2.0 * turn;
  s = std::fmod(s, length);
  if (s < 0.0) s += length;
  if (s < straight) return {{x_start + s, -half}, 0.0};
  s -= straight;
  if (s < turn) {
    const double a = -std::numbers::pi / 2.0 + s / half;
    return {{x_end + half * std::cos(a), half * std::sin(a)}, a + std::numbers::pi / 2.0};
  }
  s -= turn;
  if (s < straight) return {{x_end - s, half}, std::numbers::pi};
  s -= straight;
  const double a = std::numbers::pi / 2.0 + s / half;
  return {{x_start + half * std::cos(a), half * std::sin(a)}, a + std::numbers::pi / 2.0};
}

// Arc lengths of the frames: even spacing on the straights, denser on the
// U-turns so the heading never changes by more than max_turn_step per frame.
// The last value equals the loop length (closing frame).
inline std::vector<double> frame_arc_lengths(const SceneConfig& c) {
  const double half = c.row_spacing / 2.0;
  const double straight = c.row_length + 2.0 * c.row_margin;
  const double turn = std::numbers::pi * half;
  const int n_straight = std::max(1, static_cast<int>(std::lround(straight / c.frame_spacing)));
  const int n_turn = std::max({1, static_cast<int>(std::lround(turn / c.frame_spacing)),
                               static_cast<int>(std::ceil(std::numbers::pi / c.max_turn_step - 1e-9))});
  std::vector<double> out;
  double s0 = 0.0;
  for (int seg = 0; seg < 4; ++seg) {
    const bool is_turn = seg % 2 == 1;
    const double len = is_turn ? turn : straight;
    const int n = is_turn ? n_turn : n_straight;
    for (int k = 0; k < n; ++k) out.push_back(s0 + len * k / n);
    s0 += len;
  }
  out.push_back(s0);
  return out;
}

}  // namespace detail

// d = normalize(base + alpha * offset + sigma * g), g ~ N(0, I).
inline std::vector<double> synth_descriptor(const std::vector<double>& base, const std::vector<double>* offset,
                                            double alpha, double sigma, Rng& rng,
                                            const std::vector<double>* pattern = nullptr, double beta = 0.0) {
  const std::size_t dim = base.size();
  std::vector<double> d(base);
  if (pattern != nullptr)
    for (std::size_t i = 0; i < dim; ++i) d[i] += beta * (*pattern)[i];
  if (offset != nullptr)
    for (std::size_t i = 0; i < dim; ++i) d[i] += alpha * (*offset)[i];
  if (sigma > 0.0)
    for (auto& x : d) x += sigma * rng.normal();
  double n2 = 0.0;
  for (auto x : d) n2 += x * x;
  const double n = std::sqrt(n2);
  for (auto& x : d) x /= n;
  return d;
}

// Descriptor of one observation of a keypoint: instance classes use the
// class base plus the instance offset (and the slot pattern of anchor `slot`
// when anchor_beta > 0); background uses the anchor's own base.
inline std::vector<double> synth_descriptor(SemanticClass cls, int instance_id, const Scene& scene, Rng& rng,
                                            const BackgroundAnchor* anchor = nullptr, int slot = -1) {
  const auto& c = scene.config;
  if (cls == SemanticClass::Background) {
    if (anchor == nullptr) throw ValidationError("background descriptor needs an anchor", "anchor");
    return synth_descriptor(anchor->base, nullptr, c.aliasing_alpha, c.noise_sigma, rng);
  }
  const auto& offset = scene.instance_offsets.at(scene.instance_index(instance_id));
  const std::vector<double>* pattern = nullptr;
  if (c.anchor_beta > 0.0 && slot >= 0) pattern = &scene.slot_patterns.at(cls).at(static_cast<std::size_t>(slot));
  return synth_descriptor(scene.base_descriptors.at(cls), &offset, c.aliasing_alpha, c.noise_sigma, rng, pattern,
                          c.anchor_beta);
}

inline Scene generate_scene(const SceneConfig& config) {
  config.validate();
  Scene scene;
  scene.config = config;
  scene.intrinsics = config.intrinsics;
  Rng rng(child_seed(config.seed, 1));
  const int dim = config.descriptor_dim;

  // Trunks: regular spacing with seeded shape jitter.
  const double spacing = config.row_length / config.n_trunks_per_row;
  int next_id = 1;
  for (int r = 0; r < config.n_rows; ++r) {
    for (int i = 0; i < config.n_trunks_per_row; ++i) {
      Instance t;
      t.id = next_id++;
      t.cls = SemanticClass::Trunk;
      const double radius = rng.uniform(0.05, 0.10);
      const double squash = rng.uniform(0.7, 1.0);
      const double phase = rng.uniform(0.0, std::numbers::pi / 3.0);
      const Vec2 centre((i + 0.5) * spacing + rng.uniform(-0.1, 0.1) * spacing, r * config.row_spacing);
      for (int k = 0; k < 6; ++k) {
        const double a = phase + k * std::numbers::pi / 3.0;
        t.footprint.emplace_back(centre.x() + radius * std::cos(a), centre.y() + squash * radius * std::sin(a));
      }
      t.height = rng.uniform(0.7, 1.3);
      t.top_scale = rng.uniform(0.5, 1.0);
      t.lean = Vec2(rng.uniform(-0.15, 0.15), rng.uniform(-0.08, 0.08));
      scene.instances.push_back(std::move(t));
    }
  }
  // Buildings: beyond alternating row ends, off to the side of the loop.
  for (int b = 0; b < config.n_buildings; ++b) {
    Instance h;
    h.id = next_id++;
    h.cls = SemanticClass::Building;
    const bool far_end = b % 2 == 0;
    const double along = far_end ? config.row_length + config.row_margin + rng.uniform(12.0, 16.0)
                                 : -config.row_margin - rng.uniform(12.0, 16.0);
    const double across = (b / 2) * 6.0 * (far_end ? 1.0 : -1.0) + rng.uniform(-3.0, 3.0);
    const double w = rng.uniform(3.0, 5.0), d = rng.uniform(2.5, 4.0), yaw = rng.uniform(-0.4, 0.4);
    const Vec2 corners[4] = {{-w / 2, -d / 2}, {w / 2, -d / 2}, {w / 2, d / 2}, {-w / 2, d / 2}};
    for (const auto& p : corners) {
      const Vec2 q(std::cos(yaw) * p.x() - std::sin(yaw) * p.y(), std::sin(yaw) * p.x() + std::cos(yaw) * p.y());
      h.footprint.emplace_back(along + q.x(), across + q.y());
    }
    h.height = rng.uniform(2.5, 4.5);
    scene.instances.push_back(std::move(h));
  }
  // Anchors on side faces.
  for (auto& inst : scene.instances) {
    const std::size_t n = inst.footprint.size();
    for (int k = 0; k < config.keypoints_per_instance; ++k) {
      const std::size_t f = rng.index(n);
      const double u = rng.uniform(0.15, 0.85), v = rng.uniform(0.05, 0.95);
      const Vec3 bottom = (1 - u) * inst.bottom_vertex(f) + u * inst.bottom_vertex((f + 1) % n);
      const Vec3 top = (1 - u) * inst.top_vertex(f) + u * inst.top_vertex((f + 1) % n);
      inst.anchors.push_back((1 - v) * bottom + v * top);
    }
  }

  // Descriptor model.
  Rng drng(child_seed(config.seed, 2));
  scene.base_descriptors[SemanticClass::Trunk] = detail::random_unit(drng, dim);
  scene.base_descriptors[SemanticClass::Building] = detail::random_unit(drng, dim);
  for (const auto& inst : scene.instances)
    scene.instance_offsets.push_back(detail::random_unit_orthogonal(drng, scene.base_descriptors.at(inst.cls)));
  Rng srng(child_seed(config.seed, 5));
  for (const auto& [cls, base] : scene.base_descriptors)
    for (int k = 0; k < config.keypoints_per_instance; ++k)
      scene.slot_patterns[cls].push_back(detail::random_unit_orthogonal(srng, base));

  // Background anchors: ground texture around the loop plus a distant tree line.
  Rng brng(child_seed(config.seed, 3));
  const int n_background = 12 * config.background_keypoints;
  const int n_ground = n_background * 7 / 10;
  const double x_lo = -config.row_margin - 8.0, x_hi = config.row_length + config.row_margin + 8.0;
  const double y_lo = -config.row_spacing / 2 - 6.0, y_hi = config.row_spacing * config.n_rows + 6.0;
  const Vec2 mid((x_lo + x_hi) / 2, (y_lo + y_hi) / 2);
  const double far_radius = std::hypot(x_hi - x_lo, y_hi - y_lo) / 2 + 20.0;
  for (int i = 0; i < n_background; ++i) {
    BackgroundAnchor a;
    if (i < n_ground) {
      a.position = Vec3(brng.uniform(x_lo, x_hi), brng.uniform(y_lo, y_hi), brng.uniform(0.0, config.ground_relief));
    } else {
      const double ang = brng.uniform(0.0, 2.0 * std::numbers::pi);
      a.position = Vec3(mid.x() + far_radius * std::cos(ang), mid.y() + far_radius * std::sin(ang),
                        brng.uniform(0.5, 10.0));
    }
    a.priority = brng.uniform();
    a.base = detail::random_unit(brng, dim);
    scene.background.push_back(std::move(a));
  }

  // Trajectory: frames evenly spaced along the loop, including a closing frame.
  Rng prng(child_seed(config.seed, 4));
  const double length = config.loop_length();
  const double sway_phase = prng.uniform(0.0, 2.0 * std::numbers::pi);
  const double yaw_phase = prng.uniform(0.0, 2.0 * std::numbers::pi);
  for (const double s : detail::frame_arc_lengths(config)) {
    const auto p = detail::nominal_path(config, s);
    const double u = 2.0 * std::numbers::pi * s / length;
    const double sway = config.path_wobble * std::sin(7.0 * u + sway_phase);
    const double yaw = config.heading_wobble * std::sin(11.0 * u + yaw_phase);
    const Vec2 normal(-std::sin(p.heading), std::cos(p.heading));
    const Vec2 xy = p.position + sway * normal;
    scene.trajectory.push_back(geom::look_along(Vec3(xy.x(), xy.y(), config.camera_height), p.heading + yaw));
  }
  return scene;
}

inline Scene generate_scene(const SceneConfig& config, std::uint64_t seed) {
  SceneConfig c = config;
  c.seed = seed;
  return generate_scene(c);
}

inline constexpr double kNearPlane = 0.05;

namespace detail {

// Pixel window covered by the projection of `solid` (camera frame), clipped to the image.
inline PixelBox projected_box(const ConvexSolid& solid, const geom::CameraIntrinsics& intr) {
  std::vector<Vec3> pts;
  for (const auto& v : solid.vertices)
    if (v.z() >= kNearPlane) pts.push_back(v);
  for (const auto& [a, b] : solid.edges) {
    const Vec3& p = solid.vertices[static_cast<std::size_t>(a)];
    const Vec3& q = solid.vertices[static_cast<std::size_t>(b)];
    if ((p.z() - kNearPlane) * (q.z() - kNearPlane) < 0.0) {
      const double t = (kNearPlane - p.z()) / (q.z() - p.z());
      pts.push_back(p + t * (q - p));
    }
  }
  if (pts.empty()) return {};
  double u0 = std::numeric_limits<double>::infinity(), v0 = u0, u1 = -u0, v1 = -u0;
  for (const auto& p : pts) {
    const auto uv = geom::project_camera(intr, p);
    u0 = std::min(u0, uv->x());
    u1 = std::max(u1, uv->x());
    v0 = std::min(v0, uv->y());
    v1 = std::max(v1, uv->y());
  }
  const PixelBox raw{static_cast<int>(std::floor(u0)) - 1, static_cast<int>(std::floor(v0)) - 1,
                     static_cast<int>(std::floor(u1)) + 1, static_cast<int>(std::floor(v1)) + 1};
  return intersect(raw, PixelBox{0, 0, intr.width - 1, intr.height - 1});
}

inline Vec3 pixel_ray(const geom::CameraIntrinsics& intr, double u, double v) {
  return {(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0};
}

// Nearest instance hit along the camera ray through pixel position (u, v):
// (index into solids, depth Z).
inline std::optional<std::pair<std::size_t, double>> nearest_hit(const std::vector<ConvexSolid>& solids,
                                                                 const std::vector<PixelBox>& boxes,
                                                                 const geom::CameraIntrinsics& intr, double u,
                                                                 double v) {
  const Vec3 d = pixel_ray(intr, u, v);
  const int px = static_cast<int>(std::floor(u)), py = static_cast<int>(std::floor(v));
  std::optional<std::pair<std::size_t, double>> best;
  for (std::size_t i = 0; i < solids.size(); ++i) {
    if (!boxes[i].contains(px, py)) continue;
    const auto s = solids[i].ray_entry(Vec3::Zero(), d, kNearPlane);
    if (s && (!best || *s < best->second)) best = std::make_pair(i, *s);
  }
  return best;
}

}  // namespace detail

// Renders masks (exact per-pixel visibility), keypoints and ground truth for one frame.
inline FrameObservation render_frame(const Scene& scene, int frame_index) {
  if (frame_index < 0 || frame_index >= static_cast<int>(scene.trajectory.size()))
    throw ValidationError("frame index outside trajectory", "frame_index");
  const auto& intr = scene.intrinsics;
  const auto& cfg = scene.config;
  FrameObservation obs;
  obs.frame_index = frame_index;
  obs.pose_gt = scene.trajectory[static_cast<std::size_t>(frame_index)];

  std::vector<ConvexSolid> solids;
  std::vector<PixelBox> boxes;
  for (const auto& inst : scene.instances) {
    solids.push_back(inst.solid().transformed(obs.pose_gt));
    boxes.push_back(detail::projected_box(solids.back(), intr));
  }

  // Depth buffer restricted to the union of instance windows.
  const std::size_t n_pix = static_cast<std::size_t>(intr.width) * static_cast<std::size_t>(intr.height);
  std::vector<double> zbuf(n_pix, std::numeric_limits<double>::infinity());
  std::vector<int> owner(n_pix, -1);
  for (std::size_t i = 0; i < solids.size(); ++i) {
    const auto& b = boxes[i];
    for (int y = b.y0; y <= b.y1; ++y)
      for (int x = b.x0; x <= b.x1; ++x) {
        const auto s = solids[i].ray_entry(Vec3::Zero(), detail::pixel_ray(intr, x + 0.5, y + 0.5), kNearPlane);
        const std::size_t p = static_cast<std::size_t>(y) * static_cast<std::size_t>(intr.width) + static_cast<std::size_t>(x);
        if (s && *s < zbuf[p]) {
          zbuf[p] = *s;
          owner[p] = static_cast<int>(i);
        }
      }
  }
  for (std::size_t i = 0; i < solids.size(); ++i) {
    const auto& b = boxes[i];
    if (b.empty()) continue;
    Bitmap bm(intr.width, intr.height, b);
    DepthPatch patch;
    bool any = false;
    for (int y = b.y0; y <= b.y1; ++y)
      for (int x = b.x0; x <= b.x1; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * static_cast<std::size_t>(intr.width) + static_cast<std::size_t>(x);
        if (owner[p] == static_cast<int>(i)) {
          bm.set(x, y);
          any = true;
        }
      }
    if (!any) continue;
    const PixelBox tight = bm.bounding_box();
    Bitmap cropped(intr.width, intr.height, tight);
    patch.box = tight;
    patch.depth.assign(static_cast<std::size_t>(tight.w()) * static_cast<std::size_t>(tight.h()),
                       std::numeric_limits<double>::infinity());
    for (int y = tight.y0; y <= tight.y1; ++y)
      for (int x = tight.x0; x <= tight.x1; ++x)
        if (bm.at(x, y)) {
          cropped.set(x, y);
          patch.depth[static_cast<std::size_t>(y - tight.y0) * static_cast<std::size_t>(tight.w()) +
                      static_cast<std::size_t>(x - tight.x0)] =
              zbuf[static_cast<std::size_t>(y) * static_cast<std::size_t>(intr.width) + static_cast<std::size_t>(x)];
        }
    obs.masks.push_back({scene.instances[i].id, scene.instances[i].cls, std::move(cropped)});
    obs.mask_depth.push_back(std::move(patch));
  }

  Rng rng(child_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(frame_index)));
  auto jitter = [&](Vec2 px) {
    if (cfg.pixel_noise > 0.0) px += Vec2(cfg.pixel_noise * rng.normal(), cfg.pixel_noise * rng.normal());
    return px;
  };

  // Instance keypoints: anchors that are the first surface hit along their own ray.
  for (std::size_t i = 0; i < scene.instances.size(); ++i) {
    const auto& inst = scene.instances[i];
    const InstanceMask* mask = obs.mask_of(inst.id);
    for (std::size_t k = 0; k < inst.anchors.size(); ++k) {
      const bool keep = rng.uniform() < cfg.visibility;  // drawn for every anchor to keep streams aligned
      const Vec3 pc = obs.pose_gt.apply(inst.anchors[k]);
      const auto uv = geom::project_camera(intr, pc);
      if (!keep || mask == nullptr || pc.z() < kNearPlane || !uv || !intr.contains(*uv)) continue;
      if (!mask->bitmap.at(static_cast<int>(std::floor(uv->x())), static_cast<int>(std::floor(uv->y())))) continue;
      const auto hit = detail::nearest_hit(solids, boxes, intr, uv->x(), uv->y());
      if (!hit || hit->first != i || std::abs(hit->second - pc.z()) > 1e-6 * std::max(1.0, pc.z())) continue;
      Keypoint kp;
      kp.position = *uv;
      kp.descriptor = synth_descriptor(inst.cls, inst.id, scene, rng, nullptr, static_cast<int>(k));
      obs.keypoints.push_back(std::move(kp));
      obs.gt_instance.push_back(inst.id);
      obs.gt_depth.push_back(pc.z());
      obs.anchor_id.push_back(static_cast<std::int64_t>(inst.id) * 1000 + static_cast<std::int64_t>(k));
    }
  }
  // Background keypoints: visible, unoccluded anchors with the highest priority.
  std::vector<std::pair<double, std::size_t>> candidates;
  for (std::size_t j = 0; j < scene.background.size(); ++j) {
    const Vec3 pc = obs.pose_gt.apply(scene.background[j].position);
    const auto uv = geom::project_camera(intr, pc);
    if (pc.z() < kNearPlane || !uv || !intr.contains(*uv)) continue;
    const auto hit = detail::nearest_hit(solids, boxes, intr, uv->x(), uv->y());
    if (hit && hit->second < pc.z()) continue;
    candidates.emplace_back(-scene.background[j].priority, j);
  }
  std::sort(candidates.begin(), candidates.end());
  if (candidates.size() > static_cast<std::size_t>(cfg.background_keypoints))
    candidates.resize(static_cast<std::size_t>(cfg.background_keypoints));
  std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
  for (const auto& [prio, j] : candidates) {
    const auto& a = scene.background[j];
    const Vec3 pc = obs.pose_gt.apply(a.position);
    Keypoint kp;
    kp.position = *geom::project_camera(intr, pc);
    kp.descriptor = synth_descriptor(SemanticClass::Background, kBackgroundInstance, scene, rng, &a);
    obs.keypoints.push_back(std::move(kp));
    obs.gt_instance.push_back(kBackgroundInstance);
    obs.gt_depth.push_back(pc.z());
    obs.anchor_id.push_back(1'000'000'000LL + static_cast<std::int64_t>(j));
  }
  // Pixel noise is applied last so it never changes which anchors are visible.
  for (std::size_t i = 0; i < obs.keypoints.size(); ++i) {
    auto& kp = obs.keypoints[i];
    const Vec2 moved = jitter(kp.position);
    if (!intr.contains(moved)) continue;
    if (obs.gt_instance[i] != kBackgroundInstance &&
        !obs.mask_of(obs.gt_instance[i])->bitmap.at(static_cast<int>(std::floor(moved.x())),
                                                    static_cast<int>(std::floor(moved.y()))))
      continue;
    kp.position = moved;
  }
  return obs;
}

// ---- serialization -------------------------------------------------------

inline void to_json(nlohmann::json& j, const InstanceMask& m) {
  j = nlohmann::json{{"instance_id", m.instance_id},
                     {"class", to_string(m.cls)},
                     {"width", m.bitmap.width()},
                     {"height", m.bitmap.height()},
                     {"rle", m.bitmap.rle()}};
}

inline void from_json(const nlohmann::json& j, InstanceMask& m) {
  m.instance_id = j.at("instance_id").get<int>();
  m.cls = class_from_string(j.at("class").get<std::string>());
  m.bitmap = Bitmap::from_rle(j.at("width").get<int>(), j.at("height").get<int>(),
                              j.at("rle").get<std::vector<std::uint32_t>>());
  if (m.bitmap.none()) throw ValidationError("mask is empty", "rle");
}

inline nlohmann::json to_json(const FrameObservation& f) {
  nlohmann::json kps = nlohmann::json::array();
  for (std::size_t i = 0; i < f.keypoints.size(); ++i) {
    kps.push_back({{"position", {f.keypoints[i].position.x(), f.keypoints[i].position.y()}},
                   {"descriptor", f.keypoints[i].descriptor},
                   {"instance_id", f.gt_instance[i]},
                   {"depth", f.gt_depth[i]},
                   {"anchor_id", f.anchor_id[i]}});
  }
  nlohmann::json masks = nlohmann::json::array();
  for (const auto& m : f.masks) masks.push_back(m);
  return {{"frame_index", f.frame_index}, {"pose_gt", f.pose_gt}, {"keypoints", kps}, {"masks", masks}};
}

inline FrameObservation frame_from_json(const nlohmann::json& j) {
  FrameObservation f;
  f.frame_index = j.at("frame_index").get<int>();
  f.pose_gt = j.at("pose_gt").get<geom::PoseSE3>();
  for (const auto& k : j.at("keypoints")) {
    Keypoint kp;
    const auto& p = k.at("position");
    kp.position = Vec2(p.at(0).get<double>(), p.at(1).get<double>());
    kp.descriptor = k.at("descriptor").get<std::vector<double>>();
    f.keypoints.push_back(std::move(kp));
    f.gt_instance.push_back(k.at("instance_id").get<int>());
    f.gt_depth.push_back(k.at("depth").get<double>());
    f.anchor_id.push_back(k.at("anchor_id").get<std::int64_t>());
  }
  for (const auto& m : j.at("masks")) f.masks.push_back(m.get<InstanceMask>());
  return f;
}

inline nlohmann::json to_json(const Scene& s) {
  nlohmann::json inst = nlohmann::json::array();
  for (std::size_t i = 0; i < s.instances.size(); ++i) {
    const auto& in = s.instances[i];
    nlohmann::json fp = nlohmann::json::array();
    for (const auto& p : in.footprint) fp.push_back({p.x(), p.y()});
    nlohmann::json anchors = nlohmann::json::array();
    for (const auto& a : in.anchors) anchors.push_back({a.x(), a.y(), a.z()});
    inst.push_back({{"id", in.id},
                    {"class", to_string(in.cls)},
                    {"footprint", fp},
                    {"height", in.height},
                    {"top_scale", in.top_scale},
                    {"lean", {in.lean.x(), in.lean.y()}},
                    {"anchors", anchors},
                    {"offset", s.instance_offsets[i]}});
  }
  nlohmann::json traj = nlohmann::json::array();
  for (std::size_t k = 0; k < s.trajectory.size(); ++k) traj.push_back({{"frame_index", k}, {"pose", s.trajectory[k]}});
  nlohmann::json bases = nlohmann::json::object();
  for (const auto& [cls, v] : s.base_descriptors) bases[to_string(cls)] = v;
  nlohmann::json slots = nlohmann::json::object();
  for (const auto& [cls, v] : s.slot_patterns) slots[to_string(cls)] = v;
  nlohmann::json bg = nlohmann::json::array();
  for (const auto& a : s.background)
    bg.push_back({{"position", {a.position.x(), a.position.y(), a.position.z()}}, {"priority", a.priority}, {"base", a.base}});
  return {{"config", s.config},       {"intrinsics", s.intrinsics}, {"instances", inst},
          {"trajectory", traj},       {"base_descriptors", bases},  {"slot_patterns", slots},
          {"background_anchors", bg}};
}

inline Scene scene_from_json(const nlohmann::json& j) {
  Scene s;
  s.config = j.at("config").get<SceneConfig>();
  s.intrinsics = j.at("intrinsics").get<geom::CameraIntrinsics>();
  for (const auto& in : j.at("instances")) {
    Instance i;
    i.id = in.at("id").get<int>();
    i.cls = class_from_string(in.at("class").get<std::string>());
    for (const auto& p : in.at("footprint")) i.footprint.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    i.height = in.at("height").get<double>();
    i.top_scale = in.at("top_scale").get<double>();
    i.lean = Vec2(in.at("lean").at(0).get<double>(), in.at("lean").at(1).get<double>());
    for (const auto& a : in.at("anchors"))
      i.anchors.emplace_back(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>());
    s.instance_offsets.push_back(in.at("offset").get<std::vector<double>>());
    s.instances.push_back(std::move(i));
  }
  for (const auto& t : j.at("trajectory")) s.trajectory.push_back(t.at("pose").get<geom::PoseSE3>());
  for (auto it = j.at("base_descriptors").begin(); it != j.at("base_descriptors").end(); ++it)
    s.base_descriptors[class_from_string(it.key())] = it.value().get<std::vector<double>>();
  if (j.contains("slot_patterns"))
    for (auto it = j.at("slot_patterns").begin(); it != j.at("slot_patterns").end(); ++it)
      s.slot_patterns[class_from_string(it.key())] = it.value().get<std::vector<std::vector<double>>>();
  for (const auto& a : j.at("background_anchors")) {
    BackgroundAnchor b;
    const auto& p = a.at("position");
    b.position = Vec3(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
    b.priority = a.at("priority").get<double>();
    b.base = a.at("base").get<std::vector<double>>();
    s.background.push_back(std::move(b));
  }
  return s;
}

// Trajectory arc length (sum of camera-centre steps).
inline double trajectory_length(const Scene& s) {
  double len = 0.0;
  for (std::size_t k = 1; k < s.trajectory.size(); ++k)
    len += (s.trajectory[k].center() - s.trajectory[k - 1].center()).norm();
  return len;
}

}  // namespace ksi::sim
