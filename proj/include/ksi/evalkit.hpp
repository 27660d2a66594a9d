#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "ksi/bitmap.hpp"
#include "ksi/enrich.hpp"
#include "ksi/error.hpp"
#include "ksi/geom.hpp"
#include "ksi/matchcore.hpp"
#include "ksi/posekit.hpp"
#include "ksi/scenesim.hpp"

// Evaluation protocols: instance correspondence by projected-mask IoU,
// semantic matching accuracy, trajectory errors and localization metrics.
namespace ksi::eval {

using geom::PoseSE3;

// Moves every mask pixel (at its centre, with its depth) into frame B and
// closes 1-pixel holes. `rel` maps camera A coordinates to camera B.
inline Bitmap project_mask(const Bitmap& mask, const sim::DepthPatch& depth, const PoseSE3& rel,
                           const geom::CameraIntrinsics& intr) {
  Bitmap out(intr.width, intr.height);
  mask.for_each_set([&](int x, int y) {
    const double z = depth.at(x, y);
    if (!std::isfinite(z)) return;
    const geom::Vec3 pa = geom::backproject_camera(intr, {x + 0.5, y + 0.5}, z);
    const auto uv = geom::project_camera(intr, rel.apply(pa));
    if (!uv || !intr.contains(*uv)) return;
    out.set(static_cast<int>(std::floor(uv->x())), static_cast<int>(std::floor(uv->y())));
  });
  return close3(out);
}

inline double iou(const Bitmap& a, const Bitmap& b) {
  if (!a.same_shape(b)) throw ValidationError("bitmaps differ in size", "iou");
  std::size_t inter = 0;
  a.for_each_set([&](int x, int y) { inter += b.at(x, y) ? 1 : 0; });
  const std::size_t uni = a.count() + b.count() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct InstancePair {
  int a = 0;
  int b = 0;
  double iou = 0.0;
};

struct InstanceCorrespondence {
  std::vector<InstancePair> pairs;  // sorted by instance id in A
  std::vector<int> unmatched_a;
  std::vector<int> unmatched_b;

  std::optional<int> partner_of(int a) const {
    for (const auto& p : pairs)
      if (p.a == a) return p.b;
    return std::nullopt;
  }
};

// Greedy highest-IoU one-to-one selection; pairs below `threshold` are dropped.
inline InstanceCorrespondence instance_correspondence(const sim::FrameObservation& fa, const sim::FrameObservation& fb,
                                                      const PoseSE3& rel, const geom::CameraIntrinsics& intr,
                                                      double threshold = 0.1) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ValidationError("must lie in (0,1]", "threshold");
  if (fa.mask_depth.size() != fa.masks.size()) throw ValidationError("frame A lacks per-pixel depth", "depth");
  struct Cand {
    double iou;
    std::size_t i, j;
  };
  std::vector<Cand> cands;
  for (std::size_t i = 0; i < fa.masks.size(); ++i) {
    const Bitmap proj = project_mask(fa.masks[i].bitmap, fa.mask_depth[i], rel, intr);
    if (proj.none()) continue;
    const PixelBox pb = proj.bounding_box();
    for (std::size_t j = 0; j < fb.masks.size(); ++j) {
      if (intersect(pb, fb.masks[j].bitmap.bounding_box()).empty()) continue;
      const double v = iou(proj, fb.masks[j].bitmap);
      if (v >= threshold) cands.push_back({v, i, j});
    }
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) { return x.iou > y.iou; });
  std::vector<char> used_a(fa.masks.size(), 0), used_b(fb.masks.size(), 0);
  InstanceCorrespondence out;
  for (const auto& c : cands) {
    if (used_a[c.i] || used_b[c.j]) continue;
    used_a[c.i] = used_b[c.j] = 1;
    out.pairs.push_back({fa.masks[c.i].instance_id, fb.masks[c.j].instance_id, c.iou});
  }
  std::sort(out.pairs.begin(), out.pairs.end(), [](const auto& x, const auto& y) { return x.a < y.a; });
  for (std::size_t i = 0; i < fa.masks.size(); ++i)
    if (!used_a[i]) out.unmatched_a.push_back(fa.masks[i].instance_id);
  for (std::size_t j = 0; j < fb.masks.size(); ++j)
    if (!used_b[j]) out.unmatched_b.push_back(fb.masks[j].instance_id);
  return out;
}

struct AccuracyReport {
  std::size_t correct = 0;
  std::size_t incorrect = 0;
  std::size_t unmatched = 0;  // semantic keypoints on corresponding instances left without a match
  std::size_t excluded = 0;   // semantic keypoints on instances without a correspondence
  bool defined = false;
  double accuracy = 0.0;  // percent; meaningful only when defined
};

// A semantic keypoint of frame A is correct when its match lies on the
// instance of frame B that corresponds to its own instance.
inline AccuracyReport matching_accuracy(const match::MatchSet& m, const InstanceCorrespondence& corr,
                                        const enrich::EnrichedKeypointSet& a, const enrich::EnrichedKeypointSet& b) {
  std::map<int, int> partner;
  for (const auto& p : corr.pairs) partner[p.a] = p.b;
  std::vector<int> match_of(a.size(), -1);
  for (const auto& p : m.pairs) {
    if (p.a < 0 || p.b < 0 || static_cast<std::size_t>(p.a) >= a.size() || static_cast<std::size_t>(p.b) >= b.size())
      throw ValidationError("match index out of range", "matches");
    match_of[static_cast<std::size_t>(p.a)] = p.b;
  }
  AccuracyReport r;
  for (std::size_t i = a.background.size(); i < a.size(); ++i) {
    const auto it = partner.find(a.combined(i).instance_id);
    if (it == partner.end()) {
      ++r.excluded;
      continue;
    }
    const int j = match_of[i];
    if (j < 0) {
      ++r.unmatched;
      continue;
    }
    const auto& kb = b.combined(static_cast<std::size_t>(j));
    const bool ok = b.domain(static_cast<std::size_t>(j)) == enrich::Domain::Semantic && kb.instance_id == it->second;
    ++(ok ? r.correct : r.incorrect);
  }
  const std::size_t denom = r.correct + r.incorrect;
  r.defined = denom > 0;
  if (r.defined) r.accuracy = 100.0 * static_cast<double>(r.correct) / static_cast<double>(denom);
  return r;
}

// ---- trajectory errors ------------------------------------------------------------

struct ErrorStats {
  double mean = 0.0;  // centimeters
  double std = 0.0;   // population standard deviation, centimeters
  std::size_t count = 0;
};

inline ErrorStats stats_cm(const std::vector<double>& meters) {
  ErrorStats s;
  s.count = meters.size();
  if (meters.empty()) return s;
  double sum = 0.0;
  for (double v : meters) sum += 100.0 * v;
  s.mean = sum / static_cast<double>(meters.size());
  double var = 0.0;
  for (double v : meters) var += (100.0 * v - s.mean) * (100.0 * v - s.mean);
  s.std = std::sqrt(var / static_cast<double>(meters.size()));
  return s;
}

inline void check_aligned(const pose::Trajectory& est, const pose::Trajectory& gt) {
  if (est.size() != gt.size()) throw ValidationError("trajectories differ in length", "trajectory");
  for (std::size_t i = 0; i < est.size(); ++i)
    if (est[i].frame_index != gt[i].frame_index) throw ValidationError("frame indices differ", "trajectory");
}

// Per consecutive pair: translation norm of gt_rel^-1 * est_rel.
inline ErrorStats rpe(const pose::Trajectory& est, const pose::Trajectory& gt) {
  check_aligned(est, gt);
  std::vector<double> e;
  for (std::size_t i = 0; i + 1 < est.size(); ++i) {
    const PoseSE3 re = geom::relative_pose(est[i].pose, est[i + 1].pose);
    const PoseSE3 rg = geom::relative_pose(gt[i].pose, gt[i + 1].pose);
    e.push_back((geom::se3_inverse(rg) * re).translation.norm());
  }
  return stats_cm(e);
}

// Per-frame camera-position distance, optionally after moving the estimate so
// its first pose coincides with the ground truth's.
inline ErrorStats ape(const pose::Trajectory& est, const pose::Trajectory& gt, bool align_first_pose = true) {
  check_aligned(est, gt);
  std::vector<double> e;
  if (est.empty()) return stats_cm(e);
  // World-to-camera poses: aligned_i = est_i * est_0^-1 * gt_0.
  const PoseSE3 align = align_first_pose ? geom::se3_inverse(est[0].pose) * gt[0].pose : PoseSE3::identity();
  for (std::size_t i = 0; i < est.size(); ++i)
    e.push_back(((est[i].pose * align).center() - gt[i].pose.center()).norm());
  return stats_cm(e);
}

// ---- localization --------------------------------------------------------------------

struct LocalizationReport {
  bool defined = false;  // false when there are no usable queries
  double mte_cm = 0.0;   // median over successful, non-outlier queries
  bool mte_defined = false;
  double recall_05 = 0.0;  // percent
  double recall_1 = 0.0;
  double recall_5 = 0.0;
  std::size_t queries = 0;   // non-outlier queries, failures included
  std::size_t outliers = 0;  // errors above the cutoff, discarded
  std::size_t failures = 0;
};

// `failures` are queries that could not be localized: they stay in the recall
// denominator (as errors beyond 5 m) but have no error value for the median.
inline LocalizationReport localization_metrics(const std::vector<double>& errors_m, std::size_t failures = 0,
                                               double outlier_cutoff_m = 1000.0) {
  LocalizationReport r;
  std::vector<double> kept;
  for (double e : errors_m) {
    if (!(e >= 0.0)) throw ValidationError("errors must be non-negative", "errors");
    if (e > outlier_cutoff_m)
      ++r.outliers;
    else
      kept.push_back(e);
  }
  r.failures = failures;
  r.queries = kept.size() + failures;
  r.defined = r.queries > 0;
  if (!r.defined) return r;
  auto recall = [&](double x) {
    const auto n = std::count_if(kept.begin(), kept.end(), [x](double e) { return e < x; });
    return 100.0 * static_cast<double>(n) / static_cast<double>(r.queries);
  };
  r.recall_05 = recall(0.5);
  r.recall_1 = recall(1.0);
  r.recall_5 = recall(5.0);
  if (!kept.empty()) {
    std::sort(kept.begin(), kept.end());
    const std::size_t n = kept.size();
    const double med = n % 2 ? kept[n / 2] : 0.5 * (kept[n / 2 - 1] + kept[n / 2]);
    r.mte_cm = 100.0 * med;
    r.mte_defined = true;
  }
  return r;
}

// ---- serialization --------------------------------------------------------------------

inline nlohmann::json to_json(const InstanceCorrespondence& c) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : c.pairs) pairs.push_back({{"a", p.a}, {"b", p.b}, {"iou", p.iou}});
  return {{"pairs", pairs}, {"unmatched_a", c.unmatched_a}, {"unmatched_b", c.unmatched_b}};
}

inline nlohmann::json to_json(const AccuracyReport& r) {
  nlohmann::json j{{"correct", r.correct}, {"incorrect", r.incorrect}, {"unmatched", r.unmatched},
                   {"excluded", r.excluded}, {"defined", r.defined}};
  j["accuracy"] = r.defined ? nlohmann::json(r.accuracy) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const LocalizationReport& r) {
  return {{"defined", r.defined},  {"mte_cm", r.mte_defined ? nlohmann::json(r.mte_cm) : nlohmann::json(nullptr)},
          {"recall_0.5m", r.recall_05}, {"recall_1m", r.recall_1}, {"recall_5m", r.recall_5},
          {"queries", r.queries},  {"outliers", r.outliers}, {"failures", r.failures}};
}

}  // namespace ksi::eval
