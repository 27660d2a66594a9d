#pragma once

#include <json.hpp>

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ksi/enrich.hpp"
#include "ksi/error.hpp"
#include "ksi/evalkit.hpp"
#include "ksi/io.hpp"
#include "ksi/maskenc.hpp"
#include "ksi/matchcore.hpp"
#include "ksi/posekit.hpp"
#include "ksi/rng.hpp"
#include "ksi/scenesim.hpp"

// End-to-end experiments on a simulated scene: matching accuracy, visual
// odometry, localization and the three ablations. Shared by the CLI and the
// acceptance suite.
namespace ksi::exp {

// A named simulator condition standing in for one recording session.
struct Condition {
  std::string name = "default";
  double visibility = 1.0;
  double noise_sigma = 0.02;
};

struct ExperimentConfig {
  sim::SceneConfig scene;
  std::string encoder = "moments";  // moments | autoencoder
  double embedding_gain = 1.0;
  int ae_grid_size = 32;
  int ae_epochs = 200;
  enrich::Mode mode = enrich::Mode::Add;
  enrich::NormalizationConfig normalization;
  match::MatcherConfig matcher;
  match::MatchMode match_mode = match::MatchMode::Heterogeneous;
  pose::RansacConfig ransac;
  pose::PnpConfig pnp;
  double iou_threshold = 0.1;
  int pair_first = 0;   // first frame of the first pair
  int pair_last = -1;   // first frame of the last pair; -1: through the end
  std::vector<Condition> conditions{Condition{}};
  std::string output_dir = "out";
  std::uint64_t seed = 1;

  void validate() const {
    scene.validate();
    if (encoder != "moments" && encoder != "autoencoder")
      throw ValidationError("expected moments|autoencoder, got '" + encoder + "'", "encoder");
    if (!(embedding_gain > 0.0) || !std::isfinite(embedding_gain)) throw ValidationError("must be positive", "embedding_gain");
    if (ae_grid_size < 8 || (ae_grid_size & (ae_grid_size - 1)) != 0)
      throw ValidationError("must be a power of two >= 8", "ae_grid_size");
    if (ae_epochs < 1) throw ValidationError("must be >= 1", "ae_epochs");
    matcher.validate();
    ransac.validate();
    pnp.validate();
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw ValidationError("must lie in (0,1]", "iou_threshold");
    if (pair_first < 0) throw ValidationError("must be >= 0", "pair_first");
    if (conditions.empty()) throw ValidationError("need at least one condition", "conditions");
    for (const auto& c : conditions) {
      if (!(c.visibility >= 0.0 && c.visibility <= 1.0)) throw ValidationError("must lie in [0,1]", "visibility");
      if (!(c.noise_sigma >= 0.0) || !std::isfinite(c.noise_sigma)) throw ValidationError("must be >= 0", "noise_sigma");
    }
  }

  // Scene config actually simulated for a condition: the experiment seed governs.
  sim::SceneConfig scene_for(const Condition& c) const {
    sim::SceneConfig s = scene;
    s.seed = seed;
    s.visibility = c.visibility;
    s.noise_sigma = c.noise_sigma;
    return s;
  }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json conds = nlohmann::json::array();
  for (const auto& k : c.conditions)
    conds.push_back({{"name", k.name}, {"visibility", k.visibility}, {"noise_sigma", k.noise_sigma}});
  return {{"scene", c.scene},
          {"encoder", c.encoder},
          {"embedding_gain", c.embedding_gain},
          {"ae_grid_size", c.ae_grid_size},
          {"ae_epochs", c.ae_epochs},
          {"mode", enrich::to_string(c.mode)},
          {"normalization", {{"sn", c.normalization.sn}, {"kn", c.normalization.kn}}},
          {"matcher",
           {{"solver", match::to_string(c.matcher.solver)},
            {"min_score", c.matcher.min_score},
            {"epsilon", c.matcher.sinkhorn.epsilon},
            {"iterations", c.matcher.sinkhorn.iterations},
            {"dustbin_score", c.matcher.sinkhorn.dustbin_score}}},
          {"match_mode", match::to_string(c.match_mode)},
          {"ransac",
           {{"max_iterations", c.ransac.max_iterations},
            {"inlier_threshold", c.ransac.inlier_threshold},
            {"min_inliers", c.ransac.min_inliers},
            {"confidence", c.ransac.confidence}}},
          {"pnp",
           {{"max_iterations", c.pnp.max_iterations},
            {"reprojection_threshold", c.pnp.reprojection_threshold},
            {"min_inliers", c.pnp.min_inliers},
            {"confidence", c.pnp.confidence}}},
          {"iou_threshold", c.iou_threshold},
          {"pair_first", c.pair_first},
          {"pair_last", c.pair_last},
          {"conditions", conds},
          {"output_dir", c.output_dir},
          {"seed", c.seed}};
}

namespace detail {

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(field);
  } catch (const nlohmann::json::exception&) {
    throw ValidationError("wrong type", key);
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ValidationError("expected an object", where);
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ValidationError("unknown field in " + where, it.key());
  }
}

}  // namespace detail

// Missing keys keep defaults; unknown keys are rejected; the seed is mandatory.
inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  using detail::read_field;
  detail::reject_unknown(j,
                         {"scene", "encoder", "embedding_gain", "ae_grid_size", "ae_epochs", "mode", "normalization",
                          "matcher", "match_mode", "ransac", "pnp", "iou_threshold", "pair_first", "pair_last",
                          "conditions", "output_dir", "seed"},
                         "config");
  ExperimentConfig c;
  if (!j.contains("seed")) throw ValidationError("is mandatory", "seed");
  if (j.contains("scene")) c.scene = j.at("scene").get<sim::SceneConfig>();
  read_field(j, "encoder", c.encoder);
  read_field(j, "embedding_gain", c.embedding_gain);
  read_field(j, "ae_grid_size", c.ae_grid_size);
  read_field(j, "ae_epochs", c.ae_epochs);
  if (j.contains("mode")) c.mode = enrich::mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("normalization")) {
    const auto& n = j.at("normalization");
    detail::reject_unknown(n, {"sn", "kn"}, "normalization");
    read_field(n, "sn", c.normalization.sn);
    read_field(n, "kn", c.normalization.kn);
  }
  if (j.contains("matcher")) {
    const auto& m = j.at("matcher");
    detail::reject_unknown(m, {"solver", "min_score", "epsilon", "iterations", "dustbin_score"}, "matcher");
    if (m.contains("solver")) c.matcher.solver = match::solver_from_string(m.at("solver").get<std::string>());
    read_field(m, "min_score", c.matcher.min_score);
    read_field(m, "epsilon", c.matcher.sinkhorn.epsilon);
    read_field(m, "iterations", c.matcher.sinkhorn.iterations);
    read_field(m, "dustbin_score", c.matcher.sinkhorn.dustbin_score);
  }
  if (j.contains("match_mode")) c.match_mode = match::match_mode_from_string(j.at("match_mode").get<std::string>());
  if (j.contains("ransac")) {
    const auto& r = j.at("ransac");
    detail::reject_unknown(r, {"max_iterations", "inlier_threshold", "min_inliers", "confidence"}, "ransac");
    read_field(r, "max_iterations", c.ransac.max_iterations);
    read_field(r, "inlier_threshold", c.ransac.inlier_threshold);
    read_field(r, "min_inliers", c.ransac.min_inliers);
    read_field(r, "confidence", c.ransac.confidence);
  }
  if (j.contains("pnp")) {
    const auto& r = j.at("pnp");
    detail::reject_unknown(r, {"max_iterations", "reprojection_threshold", "min_inliers", "confidence"}, "pnp");
    read_field(r, "max_iterations", c.pnp.max_iterations);
    read_field(r, "reprojection_threshold", c.pnp.reprojection_threshold);
    read_field(r, "min_inliers", c.pnp.min_inliers);
    read_field(r, "confidence", c.pnp.confidence);
  }
  read_field(j, "iou_threshold", c.iou_threshold);
  read_field(j, "pair_first", c.pair_first);
  read_field(j, "pair_last", c.pair_last);
  if (j.contains("conditions")) {
    c.conditions.clear();
    for (const auto& k : j.at("conditions")) {
      detail::reject_unknown(k, {"name", "visibility", "noise_sigma"}, "conditions");
      Condition cond;
      read_field(k, "name", cond.name);
      read_field(k, "visibility", cond.visibility);
      read_field(k, "noise_sigma", cond.noise_sigma);
      c.conditions.push_back(cond);
    }
  }
  read_field(j, "output_dir", c.output_dir);
  read_field(j, "seed", c.seed);
  c.validate();
  return c;
}

// Hash of everything that determines results (the output directory excluded).
inline std::string config_hash(const ExperimentConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("output_dir");
  return io::config_hash(j);
}

// ---- per-condition context ----------------------------------------------------

// Scene, rendered frames and lazily built encoders for one condition.
class Context {
 public:
  Context(const ExperimentConfig& cfg, const Condition& cond) : cfg_(cfg), cond_(cond) {
    cfg_.validate();
    scene_ = sim::generate_scene(cfg_.scene_for(cond));
    for (std::size_t i = 0; i < scene_.trajectory.size(); ++i) frames_.push_back(sim::render_frame(scene_, static_cast<int>(i)));
  }

  // Rebuilds the context from a stored scene (frames are re-rendered).
  Context(const ExperimentConfig& cfg, const Condition& cond, sim::Scene scene)
      : cfg_(cfg), cond_(cond), scene_(std::move(scene)) {
    cfg_.validate();
    for (std::size_t i = 0; i < scene_.trajectory.size(); ++i) frames_.push_back(sim::render_frame(scene_, static_cast<int>(i)));
  }

  const ExperimentConfig& config() const { return cfg_; }
  const Condition& condition() const { return cond_; }
  const sim::Scene& scene() const { return scene_; }
  const std::vector<sim::FrameObservation>& frames() const { return frames_; }
  int descriptor_dim() const { return scene_.config.descriptor_dim; }

  // First frames of the evaluated consecutive pairs.
  std::vector<int> pair_starts() const {
    const int n = static_cast<int>(frames_.size());
    const int last = cfg_.pair_last < 0 ? n - 2 : std::min(cfg_.pair_last, n - 2);
    std::vector<int> v;
    for (int i = cfg_.pair_first; i <= last; ++i) v.push_back(i);
    return v;
  }

  const maskenc::MaskEncoder& encoder(int dim) {
    auto it = encoders_.find(dim);
    if (it != encoders_.end()) return *it->second;
    std::unique_ptr<maskenc::MaskEncoder> e;
    if (cfg_.encoder == "moments") {
      e = std::make_unique<maskenc::MomentEncoder>(dim, cfg_.embedding_gain, child_seed(cfg_.seed, 7));
    } else {
      std::vector<maskenc::MaskGrid> grids;
      for (std::size_t f = 0; f < frames_.size() && grids.size() < 200; f += 2)
        for (const auto& m : frames_[f].masks)
          if (enrich::default_eligible().contains(m.cls)) grids.push_back(maskenc::rasterize_mask(m.bitmap, cfg_.ae_grid_size));
      maskenc::TrainingHyperparams h;
      h.epochs = cfg_.ae_epochs;
      h.seed = child_seed(cfg_.seed, 8);
      e = std::make_unique<maskenc::AutoencoderMaskEncoder>(maskenc::ae_train(grids, dim, h), cfg_.ae_grid_size,
                                                            cfg_.embedding_gain);
    }
    return *encoders_.emplace(dim, std::move(e)).first->second;
  }

  const maskenc::AutoencoderParams& compressor() {
    if (!compressor_) {
      std::vector<std::vector<double>> descs;
      for (std::size_t f = 0; f < frames_.size() && descs.size() < 400; f += 3)
        for (std::size_t k = 0; k < frames_[f].keypoints.size(); ++k)
          if (frames_[f].gt_instance[k] != sim::kBackgroundInstance) descs.push_back(frames_[f].keypoints[k].descriptor);
      maskenc::TrainingHyperparams h;
      h.epochs = cfg_.ae_epochs;
      h.seed = child_seed(cfg_.seed, 9);
      compressor_ = enrich::train_descriptor_compressor(descs, h);
    }
    return *compressor_;
  }

  enrich::EnrichOptions options(enrich::Mode mode, enrich::NormalizationConfig norm) {
    enrich::EnrichOptions o;
    o.mode = mode;
    o.norm = norm;
    if (mode == enrich::Mode::Add) o.encoder = &encoder(descriptor_dim());
    if (mode == enrich::Mode::Concat) {
      o.encoder = &encoder(descriptor_dim() / 2);
      o.compressor = &compressor();
    }
    return o;
  }

  const eval::InstanceCorrespondence& correspondence(int first) {
    auto it = corr_.find(first);
    if (it != corr_.end()) return it->second;
    const auto& a = frames_[static_cast<std::size_t>(first)];
    const auto& b = frames_[static_cast<std::size_t>(first) + 1];
    return corr_.emplace(first, eval::instance_correspondence(a, b, geom::relative_pose(a.pose_gt, b.pose_gt),
                                                              scene_.intrinsics, cfg_.iou_threshold))
        .first->second;
  }

 private:
  ExperimentConfig cfg_;
  Condition cond_;
  sim::Scene scene_;
  std::vector<sim::FrameObservation> frames_;
  std::map<int, std::unique_ptr<maskenc::MaskEncoder>> encoders_;
  std::optional<maskenc::AutoencoderParams> compressor_;
  std::map<int, eval::InstanceCorrespondence> corr_;
};

// Enrichment/matching settings of one run.
struct Variant {
  std::string label;
  enrich::Mode mode = enrich::Mode::Add;
  enrich::NormalizationConfig norm;
  match::MatchMode match_mode = match::MatchMode::Heterogeneous;
};

inline Variant variant_of(const ExperimentConfig& c, std::string label = "ksi") {
  return {std::move(label), c.mode, c.normalization, c.match_mode};
}

inline Variant baseline_of(const ExperimentConfig& c) {
  return {"baseline", enrich::Mode::Off, c.normalization, c.match_mode};
}

// ---- matching accuracy ----------------------------------------------------------

struct PairResult {
  int frame_a = 0;
  int frame_b = 0;
  match::MatchSet matches;
  eval::AccuracyReport accuracy;
  match::DomainStats domains;
};

struct MatchRun {
  Variant variant;
  std::vector<PairResult> pairs;
  bool at_most_once = true;  // every MatchSet respected the one-to-one constraint

  // Plain mean of per-pair accuracies over pairs where accuracy is defined.
  // Pairs with one or two semantic keypoints weigh as much as crowded ones.
  std::optional<double> mean_pair_accuracy() const {
    double sum = 0.0;
    int n = 0;
    for (const auto& p : pairs)
      if (p.accuracy.defined) {
        sum += p.accuracy.accuracy;
        ++n;
      }
    if (n == 0) return std::nullopt;
    return sum / n;
  }

  // Percentage of correctly matched semantic keypoints over the whole run.
  std::optional<double> accuracy() const {
    std::size_t ok = 0, bad = 0;
    for (const auto& p : pairs) {
      ok += p.accuracy.correct;
      bad += p.accuracy.incorrect;
    }
    if (ok + bad == 0) return std::nullopt;
    return 100.0 * static_cast<double>(ok) / static_cast<double>(ok + bad);
  }

  // Match-count-weighted domain fractions over the whole run.
  match::DomainStats domain_totals() const {
    match::DomainStats t;
    double ss = 0, sb = 0, bb = 0, bs = 0;
    for (const auto& p : pairs) {
      const double n = static_cast<double>(p.domains.total);
      ss += p.domains.ss * n;
      sb += p.domains.sb * n;
      bb += p.domains.bb * n;
      bs += p.domains.bs * n;
      t.total += p.domains.total;
    }
    t.empty = t.total == 0;
    if (!t.empty) {
      const double n = static_cast<double>(t.total);
      t.ss = ss / n;
      t.sb = sb / n;
      t.bb = bb / n;
      t.bs = bs / n;
    }
    return t;
  }
};

struct EnrichedPair {
  enrich::EnrichedKeypointSet a;
  enrich::EnrichedKeypointSet b;
  match::MatchSet matches;
};

inline EnrichedPair match_frames(Context& ctx, const Variant& v, int fa, int fb) {
  const auto opt = ctx.options(v.mode, v.norm);
  EnrichedPair p;
  p.a = enrich::enrich_frame(ctx.frames()[static_cast<std::size_t>(fa)], opt);
  p.b = enrich::enrich_frame(ctx.frames()[static_cast<std::size_t>(fb)], opt);
  p.matches = match::match_pair(p.a, p.b, v.match_mode, ctx.config().matcher);
  return p;
}

// `visit` (optional) sees every pair together with its enriched keypoint sets.
inline MatchRun run_match(Context& ctx, const Variant& v,
                          const std::function<void(const PairResult&, const EnrichedPair&)>& visit = {}) {
  MatchRun run;
  run.variant = v;
  for (int i : ctx.pair_starts()) {
    EnrichedPair ep = match_frames(ctx, v, i, i + 1);
    PairResult r;
    r.frame_a = i;
    r.frame_b = i + 1;
    r.accuracy = eval::matching_accuracy(ep.matches, ctx.correspondence(i), ep.a, ep.b);
    r.domains = match::match_domain_stats(ep.matches, ep.a.domains(), ep.b.domains());
    run.at_most_once = run.at_most_once && ep.matches.at_most_once();
    r.matches = ep.matches;
    if (visit) visit(r, ep);
    run.pairs.push_back(std::move(r));
  }
  return run;
}

// ---- visual odometry -------------------------------------------------------------

struct PoseRun {
  Variant variant;
  pose::Trajectory estimate;
  pose::Trajectory ground_truth;
  eval::ErrorStats rpe;
  eval::ErrorStats ape;
  std::size_t skipped = 0;
  bool at_most_once = true;
};

inline PoseRun run_pose(Context& ctx, const Variant& v) {
  PoseRun run;
  run.variant = v;
  const auto starts = ctx.pair_starts();
  if (starts.empty()) return run;
  const auto& intr = ctx.scene().intrinsics;
  std::vector<std::optional<geom::PoseSE3>> rel;
  for (int i : starts) {
    const auto& fa = ctx.frames()[static_cast<std::size_t>(i)];
    const auto& fb = ctx.frames()[static_cast<std::size_t>(i) + 1];
    const EnrichedPair ep = match_frames(ctx, v, i, i + 1);
    run.at_most_once = run.at_most_once && ep.matches.at_most_once();
    std::vector<pose::Correspondence> corr;
    for (const auto& m : ep.matches.pairs)
      corr.push_back({intr.normalize(ep.a.combined(static_cast<std::size_t>(m.a)).keypoint.position),
                      intr.normalize(ep.b.combined(static_cast<std::size_t>(m.b)).keypoint.position)});
    std::optional<geom::PoseSE3> step;
    if (corr.size() >= 8) {
      pose::RansacConfig rc = ctx.config().ransac;
      rc.seed = child_seed(ctx.config().seed, 10000 + static_cast<std::uint64_t>(i));
      const pose::RelativePose rp = pose::estimate_relative_pose(corr, rc);
      if (rp.ok)
        step = geom::PoseSE3{rp.rotation,
                             pose::scale_translation(rp.direction, geom::relative_pose(fa.pose_gt, fb.pose_gt))};
    }
    if (!step) ++run.skipped;
    rel.push_back(step);
  }
  const int first = starts.front();
  run.estimate = pose::chain_trajectory(rel, ctx.frames()[static_cast<std::size_t>(first)].pose_gt, first);
  for (int k = first; k <= starts.back() + 1; ++k) run.ground_truth.push(k, ctx.frames()[static_cast<std::size_t>(k)].pose_gt);
  run.rpe = eval::rpe(run.estimate, run.ground_truth);
  run.ape = eval::ape(run.estimate, run.ground_truth, true);
  return run;
}

// ---- localization -----------------------------------------------------------------

struct QueryResult {
  int frame = 0;
  bool ok = false;
  double error_m = 0.0;
  std::size_t inliers = 0;
};

struct LocalizationRun {
  Variant variant;
  std::vector<QueryResult> queries;
  eval::LocalizationReport report;
};

// Matches one query frame against landmarks lifted from the given map frames
// (keypoints back-projected with ground-truth depth and pose) and localizes it
// by PnP.
inline QueryResult localize_query(Context& ctx, const Variant& v, int query, const std::vector<int>& map_frames) {
  const auto opt = ctx.options(v.mode, v.norm);
  const auto& frames = ctx.frames();
  const auto& intr = ctx.scene().intrinsics;
  const int n = static_cast<int>(frames.size());
  if (query < 0 || query >= n) throw ValidationError("query frame out of range", "query");
  enrich::EnrichedKeypointSet lm;
  lm.frame_index = -1;
  std::vector<geom::Vec3> bg_points, sem_points;
  for (int f : map_frames) {
    if (f < 0 || f >= n) throw ValidationError("map frame out of range", "map_frames");
    const auto& fr = frames[static_cast<std::size_t>(f)];
    const auto set = enrich::enrich_frame(fr, opt);
    auto lift = [&](const enrich::EnrichedKeypoint& k) {
      return geom::backproject(intr, fr.pose_gt, k.keypoint.position, fr.gt_depth[k.original_index]);
    };
    for (const auto& k : set.background) {
      lm.background.push_back(k);
      bg_points.push_back(lift(k));
    }
    for (const auto& k : set.semantic) {
      lm.semantic.push_back(k);
      sem_points.push_back(lift(k));
    }
  }
  // Combined ordering of the landmark set: background first.
  std::vector<geom::Vec3> points = bg_points;
  points.insert(points.end(), sem_points.begin(), sem_points.end());
  const auto q = enrich::enrich_frame(frames[static_cast<std::size_t>(query)], opt);
  const auto m = match::match_pair(q, lm, v.match_mode, ctx.config().matcher);
  std::vector<geom::Vec2> p2;
  std::vector<geom::Vec3> p3;
  for (const auto& p : m.pairs) {
    p2.push_back(q.combined(static_cast<std::size_t>(p.a)).keypoint.position);
    p3.push_back(points[static_cast<std::size_t>(p.b)]);
  }
  QueryResult r;
  r.frame = query;
  if (p2.size() < 6) return r;
  pose::PnpConfig pc = ctx.config().pnp;
  pc.seed = child_seed(ctx.config().seed, 20000 + static_cast<std::uint64_t>(query));
  const auto res = pose::pnp_dlt_ransac(p2, p3, intr, pc);
  if (res.ok) {
    r.ok = true;
    r.inliers = res.inliers.size();
    r.error_m = (res.pose.center() - frames[static_cast<std::size_t>(query)].pose_gt.center()).norm();
  }
  return r;
}

// Even frames form the map, odd frames are queries; each query sees the map
// frames within `map_window` steps on either side.
inline LocalizationRun run_localize(Context& ctx, const Variant& v, int map_window = 1) {
  if (map_window < 1) throw ValidationError("must be >= 1", "map_window");
  LocalizationRun run;
  run.variant = v;
  const int n = static_cast<int>(ctx.frames().size());
  std::vector<double> errors;
  std::size_t failures = 0;
  for (int q = 1; q < n; q += 2) {
    std::vector<int> map_frames;
    for (int f = q + 1 - 2 * map_window; f <= q - 1 + 2 * map_window; f += 2)
      if (f >= 0 && f < n) map_frames.push_back(f);
    QueryResult r = localize_query(ctx, v, q, map_frames);
    if (r.ok)
      errors.push_back(r.error_m);
    else
      ++failures;
    run.queries.push_back(r);
  }
  run.report = eval::localization_metrics(errors, failures);
  return run;
}

}  // namespace ksi::exp
