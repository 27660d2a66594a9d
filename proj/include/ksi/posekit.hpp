#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ksi/error.hpp"
#include "ksi/geom.hpp"
#include "ksi/io.hpp"
#include "ksi/rng.hpp"

// Two-view relative pose (essential matrix), trajectory chaining and PnP.
//
// Correspondences are (x_a, x_b) in normalized image coordinates with
// x_b^T E x_a = 0, where E = [t]x R and X_b = R X_a + t.
namespace ksi::pose {

using geom::Mat3;
using geom::PoseSE3;
using geom::RotationMatrix;
using geom::Vec2;
using geom::Vec3;

struct Correspondence {
  Vec2 a;
  Vec2 b;
};

struct RansacConfig {
  int max_iterations = 2000;
  double inlier_threshold = 1e-3;  // Sampson distance, normalized coordinates
  int min_inliers = 15;
  double confidence = 0.999;
  std::uint64_t seed = 0;

  void validate() const {
    if (max_iterations <= 0) throw ValidationError("must be positive", "max_iterations");
    if (!(inlier_threshold > 0.0)) throw ValidationError("must be positive", "inlier_threshold");
    if (min_inliers <= 0) throw ValidationError("must be positive", "min_inliers");
    if (!(confidence > 0.0 && confidence < 1.0)) throw ValidationError("must lie in (0,1)", "confidence");
  }
};

namespace detail {

// Similarity that moves the centroid to the origin and the mean distance to sqrt(2).
inline Mat3 hartley(const std::vector<Vec2>& pts) {
  Vec2 c = Vec2::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double mean = 0.0;
  for (const auto& p : pts) mean += (p - c).norm();
  mean /= static_cast<double>(pts.size());
  const double s = mean > 0.0 ? std::sqrt(2.0) / mean : 1.0;
  Mat3 t;
  t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return t;
}

// Nearest matrix with singular values (s, s, 0), scaled so that s = 1.
inline Mat3 to_essential_manifold(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double s = 0.5 * (svd.singularValues()[0] + svd.singularValues()[1]);
  if (!(s > 0.0)) throw DegenerateError("essential matrix estimate vanished");
  return svd.matrixU() * Eigen::Vector3d(1.0, 1.0, 0.0).asDiagonal() * svd.matrixV().transpose();
}

}  // namespace detail

// Normalized 8-point algorithm.
inline Mat3 essential_8pt(const std::vector<Correspondence>& c) {
  if (c.size() < 8) throw ValidationError("need at least 8 correspondences", "correspondences");
  std::vector<Vec2> pa, pb;
  for (const auto& x : c) {
    pa.push_back(x.a);
    pb.push_back(x.b);
  }
  const Mat3 ta = detail::hartley(pa), tb = detail::hartley(pb);
  Eigen::MatrixXd a(static_cast<Eigen::Index>(std::max<std::size_t>(c.size(), 9)), 9);
  a.setZero();
  for (std::size_t i = 0; i < c.size(); ++i) {
    const Vec3 xa = ta * pa[i].homogeneous(), xb = tb * pb[i].homogeneous();
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 3; ++k) a(static_cast<Eigen::Index>(i), 3 * r + k) = xb[r] * xa[k];
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv[0] > 0.0) || sv[7] / sv[0] < 1e-10) throw DegenerateError("rank-deficient 8-point system");
  const Eigen::VectorXd e = svd.matrixV().col(8);
  Mat3 en;
  en << e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8];
  return detail::to_essential_manifold(tb.transpose() * en * ta);
}

// First-order geometric epipolar error (a distance, not squared).
inline double sampson_distance(const Mat3& e, const Correspondence& c) {
  const Vec3 xa = c.a.homogeneous(), xb = c.b.homogeneous();
  const Vec3 ea = e * xa, eb = e.transpose() * xb;
  const double num = xb.dot(ea);
  const double den = ea.x() * ea.x() + ea.y() * ea.y() + eb.x() * eb.x() + eb.y() * eb.y();
  if (!(den > 0.0)) return std::abs(num) > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  return std::abs(num) / std::sqrt(den);
}

struct EssentialResult {
  bool ok = false;
  Mat3 essential = Mat3::Zero();
  std::vector<int> inliers;
  int iterations = 0;
  std::string failure;
};

inline std::vector<int> essential_inliers(const Mat3& e, const std::vector<Correspondence>& c, double threshold) {
  std::vector<int> in;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (sampson_distance(e, c[i]) < threshold) in.push_back(static_cast<int>(i));
  return in;
}

inline int adaptive_iterations(double inlier_ratio, int sample_size, double confidence, int cap) {
  if (inlier_ratio >= 1.0) return 1;
  if (inlier_ratio <= 0.0) return cap;
  const double p = std::pow(inlier_ratio, sample_size);
  const double denom = std::log1p(-p);
  if (!(denom < 0.0)) return cap;
  const double n = std::log1p(-confidence) / denom;
  return !(n < cap) ? cap : std::max(1, static_cast<int>(std::ceil(n)));
}

inline std::vector<std::size_t> sample_distinct(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> s;
  while (s.size() < k) {
    const std::size_t i = rng.index(n);
    if (std::find(s.begin(), s.end(), i) == s.end()) s.push_back(i);
  }
  return s;
}

inline EssentialResult ransac_essential(const std::vector<Correspondence>& c, const RansacConfig& cfg) {
  cfg.validate();
  if (c.size() < 8) throw ValidationError("need at least 8 matches", "matches");
  Rng rng(cfg.seed);
  EssentialResult best;
  int needed = cfg.max_iterations;
  int it = 0;
  for (; it < needed; ++it) {
    const auto idx = sample_distinct(rng, c.size(), 8);
    std::vector<Correspondence> sample;
    for (auto i : idx) sample.push_back(c[i]);
    Mat3 e;
    try {
      e = essential_8pt(sample);
    } catch (const DegenerateError&) {
      continue;
    }
    auto in = essential_inliers(e, c, cfg.inlier_threshold);
    if (in.size() > best.inliers.size()) {
      best.essential = e;
      best.inliers = std::move(in);
      needed = adaptive_iterations(static_cast<double>(best.inliers.size()) / static_cast<double>(c.size()), 8,
                                   cfg.confidence, cfg.max_iterations);
    }
  }
  best.iterations = it;
  if (best.inliers.size() >= 8) {
    // Refit on all inliers; keep the refit only if it does not lose support.
    std::vector<Correspondence> support;
    for (int i : best.inliers) support.push_back(c[static_cast<std::size_t>(i)]);
    try {
      const Mat3 e = essential_8pt(support);
      auto in = essential_inliers(e, c, cfg.inlier_threshold);
      if (in.size() >= best.inliers.size()) {
        best.essential = e;
        best.inliers = std::move(in);
      }
    } catch (const DegenerateError&) {
    }
  }
  if (static_cast<int>(best.inliers.size()) < cfg.min_inliers) {
    best.ok = false;
    best.failure = "only " + std::to_string(best.inliers.size()) + " inliers";
    return best;
  }
  best.ok = true;
  return best;
}

// Pixel-coordinate overload: positions indexed by the match pairs.
inline EssentialResult ransac_essential(const std::vector<std::pair<int, int>>& matches, const std::vector<Vec2>& kp_a,
                                        const std::vector<Vec2>& kp_b, const geom::CameraIntrinsics& intr,
                                        const RansacConfig& cfg) {
  std::vector<Correspondence> c;
  for (const auto& [i, j] : matches) {
    if (i < 0 || j < 0 || static_cast<std::size_t>(i) >= kp_a.size() || static_cast<std::size_t>(j) >= kp_b.size())
      throw ValidationError("match index out of range", "matches");
    c.push_back({intr.normalize(kp_a[static_cast<std::size_t>(i)]), intr.normalize(kp_b[static_cast<std::size_t>(j)])});
  }
  return ransac_essential(c, cfg);
}

// Depths (z_a, z_b) of the point seen at x_a and x_b under X_b = R X_a + t.
inline Eigen::Vector2d triangulate_depths(const Mat3& r, const Vec3& t, const Correspondence& c) {
  Eigen::Matrix<double, 3, 2> m;
  m.col(0) = r * c.a.homogeneous();
  m.col(1) = -c.b.homogeneous();
  return m.colPivHouseholderQr().solve(-t);
}

struct RelativePose {
  bool ok = false;
  RotationMatrix rotation;
  Vec3 direction = Vec3::Zero();  // unit translation
  std::vector<int> inliers;
  std::string failure;
};

// Four-candidate decomposition; the candidate with the most inliers in front
// of both cameras wins and must hold a strict majority.
inline RelativePose decompose_essential(const Mat3& e, const std::vector<Correspondence>& inliers) {
  if (inliers.empty()) throw ValidationError("need at least one inlier", "inliers");
  Eigen::JacobiSVD<Mat3> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU(), v = svd.matrixV();
  if (u.determinant() < 0) u.col(2) *= -1.0;
  if (v.determinant() < 0) v.col(2) *= -1.0;
  Mat3 w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Mat3 r1 = u * w * v.transpose(), r2 = u * w.transpose() * v.transpose();
  const Vec3 t = u.col(2).normalized();
  const std::array<std::pair<Mat3, Vec3>, 4> cand{{{r1, t}, {r1, -t}, {r2, t}, {r2, -t}}};
  int best = -1;
  std::size_t best_count = 0;
  for (int k = 0; k < 4; ++k) {
    std::size_t count = 0;
    for (const auto& c : inliers) {
      const Eigen::Vector2d z = triangulate_depths(cand[static_cast<std::size_t>(k)].first, cand[static_cast<std::size_t>(k)].second, c);
      if (z[0] > 0.0 && z[1] > 0.0) ++count;
    }
    if (count > best_count) {
      best_count = count;
      best = k;
    }
  }
  RelativePose out;
  if (best < 0 || 2 * best_count <= inliers.size()) {
    out.failure = "no decomposition places a majority of points in front of both cameras";
    return out;
  }
  out.ok = true;
  out.rotation = RotationMatrix::nearest(cand[static_cast<std::size_t>(best)].first);
  out.direction = cand[static_cast<std::size_t>(best)].second;
  return out;
}

inline RelativePose estimate_relative_pose(const std::vector<Correspondence>& c, const RansacConfig& cfg) {
  const EssentialResult er = ransac_essential(c, cfg);
  RelativePose out;
  if (!er.ok) {
    out.failure = er.failure;
    out.inliers = er.inliers;
    return out;
  }
  std::vector<Correspondence> in;
  for (int i : er.inliers) in.push_back(c[static_cast<std::size_t>(i)]);
  out = decompose_essential(er.essential, in);
  out.inliers = er.inliers;
  return out;
}

inline Vec3 scale_translation(const Vec3& t_unit, const PoseSE3& gt_relative) {
  if (std::abs(t_unit.norm() - 1.0) > 1e-9) throw ValidationError("translation must be a unit vector", "t_unit");
  return t_unit * gt_relative.translation.norm();
}

// ---- trajectories -------------------------------------------------------------

struct TrajectoryEntry {
  int frame_index = 0;
  PoseSE3 pose;          // world-to-camera
  bool flagged = false;  // pose extrapolated after an estimation failure
};

class Trajectory {
 public:
  void push(int frame_index, const PoseSE3& pose, bool flagged = false) {
    if (!entries_.empty() && frame_index <= entries_.back().frame_index)
      throw ValidationError("frame indices must increase strictly", "trajectory");
    entries_.push_back({frame_index, pose, flagged});
  }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const TrajectoryEntry& operator[](std::size_t i) const { return entries_[i]; }
  const std::vector<TrajectoryEntry>& entries() const { return entries_; }
  std::size_t flagged_count() const {
    return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [](const auto& e) { return e.flagged; }));
  }

 private:
  std::vector<TrajectoryEntry> entries_;
};

// relatives[k] maps camera k to camera k+1 (nullopt: estimation failed). A
// failed step repeats the previous relative pose (identity if none) and flags
// the frame it produces.
inline Trajectory chain_trajectory(const std::vector<std::optional<PoseSE3>>& relatives, const PoseSE3& start,
                                   int start_index = 0) {
  Trajectory t;
  t.push(start_index, start);
  PoseSE3 current = start;
  PoseSE3 last = PoseSE3::identity();
  for (std::size_t k = 0; k < relatives.size(); ++k) {
    const bool skip = !relatives[k].has_value();
    if (!skip) last = *relatives[k];
    current = last * current;
    t.push(start_index + static_cast<int>(k) + 1, current, skip);
  }
  return t;
}

// TUM-style text: "frame_index tx ty tz qw qx qy qz" with the camera-to-world
// pose (camera position and orientation in the world).
inline std::string to_tum(const Trajectory& t) {
  std::string s;
  for (const auto& e : t.entries()) {
    const PoseSE3 c2w = geom::se3_inverse(e.pose);
    const auto q = c2w.rotation.quaternion();
    s += std::to_string(e.frame_index);
    for (int i = 0; i < 3; ++i) s += " " + io::fmt(c2w.translation[i]);
    for (double v : q) s += " " + io::fmt(v);
    s += "\n";
  }
  return s;
}

inline Trajectory from_tum(const std::string& text) {
  Trajectory t;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int idx;
    double tx, ty, tz, qw, qx, qy, qz;
    if (!(ls >> idx >> tx >> ty >> tz >> qw >> qx >> qy >> qz)) throw ValidationError("malformed line: " + line, "tum");
    const Eigen::Quaterniond q(qw, qx, qy, qz);
    PoseSE3 c2w{RotationMatrix::nearest(q.normalized().toRotationMatrix()), Vec3(tx, ty, tz)};
    t.push(idx, geom::se3_inverse(c2w));
  }
  return t;
}

// ---- PnP ------------------------------------------------------------------------

struct PnpConfig {
  int max_iterations = 2000;
  double reprojection_threshold = 2.0;  // pixels
  int min_inliers = 12;
  double confidence = 0.999;
  std::uint64_t seed = 0;

  void validate() const {
    if (max_iterations <= 0) throw ValidationError("must be positive", "max_iterations");
    if (!(reprojection_threshold > 0.0)) throw ValidationError("must be positive", "reprojection_threshold");
    if (min_inliers < 6) throw ValidationError("must be >= 6", "min_inliers");
    if (!(confidence > 0.0 && confidence < 1.0)) throw ValidationError("must lie in (0,1)", "confidence");
  }
};

struct PnpResult {
  bool ok = false;
  PoseSE3 pose;  // world-to-camera
  std::vector<int> inliers;
  std::string failure;
};

// Linear pose from >= 6 normalized-image / world correspondences. The 3x4
// projection is solved by DLT, its left block projected onto SO(3).
inline PoseSE3 pnp_dlt(const std::vector<Vec2>& xn, const std::vector<Vec3>& world) {
  const std::size_t n = xn.size();
  if (n < 6 || world.size() != n) throw ValidationError("need at least 6 correspondences", "correspondences");
  Vec3 c = Vec3::Zero();
  for (const auto& p : world) c += p;
  c /= static_cast<double>(n);
  double mean = 0.0;
  for (const auto& p : world) mean += (p - c).norm();
  mean /= static_cast<double>(n);
  if (!(mean > 0.0)) throw DegenerateError("world points coincide");
  const double s = std::sqrt(3.0) / mean;
  Eigen::MatrixXd a(static_cast<Eigen::Index>(std::max<std::size_t>(2 * n, 12)), 12);
  a.setZero();
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector4d x = (s * (world[i] - c)).homogeneous();
    const auto r = static_cast<Eigen::Index>(2 * i);
    a.block<1, 4>(r, 0) = x.transpose();
    a.block<1, 4>(r, 8) = -xn[i].x() * x.transpose();
    a.block<1, 4>(r + 1, 4) = x.transpose();
    a.block<1, 4>(r + 1, 8) = -xn[i].y() * x.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv[0] > 0.0) || sv[10] / sv[0] < 1e-10) throw DegenerateError("rank-deficient DLT system");
  const Eigen::VectorXd p = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> pm;
  pm << p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9], p[10], p[11];
  Mat3 m = pm.leftCols<3>();
  Vec3 t = pm.col(3);
  if (m.determinant() < 0) {
    m = -m;
    t = -t;
  }
  Eigen::JacobiSVD<Mat3> ms(m);
  const double scale = ms.singularValues().mean();
  if (!(scale > 0.0)) throw DegenerateError("degenerate DLT solution");
  const RotationMatrix r = RotationMatrix::nearest(m / scale);
  // P acts on s(X - c); rescale to metric world coordinates.
  const Vec3 t_metric = t / (scale * s) - r * c;
  return {r, t_metric};
}

inline double reprojection_error(const geom::CameraIntrinsics& intr, const PoseSE3& pose, const Vec3& world,
                                 const Vec2& px) {
  const auto p = geom::project(intr, pose, world);
  return p ? (*p - px).norm() : std::numeric_limits<double>::infinity();
}

inline PnpResult pnp_dlt_ransac(const std::vector<Vec2>& points2d, const std::vector<Vec3>& points3d,
                                const geom::CameraIntrinsics& intr, const PnpConfig& cfg) {
  cfg.validate();
  if (points2d.size() != points3d.size()) throw ValidationError("2D and 3D point counts differ", "points");
  if (points2d.size() < 6) throw ValidationError("need at least 6 correspondences", "points");
  const std::size_t n = points2d.size();
  std::vector<Vec2> xn;
  for (const auto& p : points2d) xn.push_back(intr.normalize(p));
  auto inliers_of = [&](const PoseSE3& pose) {
    std::vector<int> in;
    for (std::size_t i = 0; i < n; ++i)
      if (reprojection_error(intr, pose, points3d[i], points2d[i]) < cfg.reprojection_threshold)
        in.push_back(static_cast<int>(i));
    return in;
  };
  Rng rng(cfg.seed);
  PnpResult best;
  int needed = cfg.max_iterations;
  for (int it = 0; it < needed; ++it) {
    const auto idx = sample_distinct(rng, n, 6);
    std::vector<Vec2> sx;
    std::vector<Vec3> sw;
    for (auto i : idx) {
      sx.push_back(xn[i]);
      sw.push_back(points3d[i]);
    }
    PoseSE3 pose;
    try {
      pose = pnp_dlt(sx, sw);
    } catch (const DegenerateError&) {
      continue;
    }
    auto in = inliers_of(pose);
    if (in.size() > best.inliers.size()) {
      best.pose = pose;
      best.inliers = std::move(in);
      needed = adaptive_iterations(static_cast<double>(best.inliers.size()) / static_cast<double>(n), 6, cfg.confidence,
                                   cfg.max_iterations);
    }
  }
  if (best.inliers.size() >= 6) {
    std::vector<Vec2> sx;
    std::vector<Vec3> sw;
    for (int i : best.inliers) {
      sx.push_back(xn[static_cast<std::size_t>(i)]);
      sw.push_back(points3d[static_cast<std::size_t>(i)]);
    }
    try {
      const PoseSE3 pose = pnp_dlt(sx, sw);
      auto in = inliers_of(pose);
      if (in.size() >= best.inliers.size()) {
        best.pose = pose;
        best.inliers = std::move(in);
      }
    } catch (const DegenerateError&) {
    }
  }
  if (static_cast<int>(best.inliers.size()) < cfg.min_inliers) {
    best.failure = "only " + std::to_string(best.inliers.size()) + " inliers";
    return best;
  }
  best.ok = true;
  return best;
}

}  // namespace ksi::pose
