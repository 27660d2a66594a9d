#pragma once

#include <Eigen/Core>
#include <json.hpp>

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ksi/error.hpp"
#include "ksi/maskenc.hpp"
#include "ksi/scenesim.hpp"

// Keypoint partitioning and semantic enrichment of descriptors.
namespace ksi::enrich {

using sim::Keypoint;
using sim::SemanticClass;
using Descriptor = std::vector<double>;

struct NormalizationConfig {
  bool sn = false;  // L2-normalize the semantic embedding before combining
  bool kn = true;   // L2-normalize the keypoint descriptor before combining
};

enum class Mode { Off, Add, Concat };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::Off: return "off";
    case Mode::Add: return "add";
    case Mode::Concat: return "concat";
  }
  return "off";
}

inline Mode mode_from_string(const std::string& s) {
  if (s == "off") return Mode::Off;
  if (s == "add") return Mode::Add;
  if (s == "concat") return Mode::Concat;
  throw ValidationError("expected off|add|concat, got '" + s + "'", "mode");
}

inline double l2_norm(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())).norm();
}

// Zero vectors stay zero.
inline std::vector<double> l2_normalized(std::vector<double> v) {
  const double n = l2_norm(v);
  if (n > 0.0)
    for (auto& x : v) x /= n;
  return v;
}

// d' = N(KN(d) + SN(e)); the final normalization is unconditional.
inline Descriptor enrich_add(const Descriptor& d, const maskenc::Embedding& e, const NormalizationConfig& cfg = {}) {
  if (d.size() != e.size()) throw ValidationError("descriptor and embedding dimensions differ", "embedding");
  const Descriptor a = cfg.kn ? l2_normalized(d) : d;
  const maskenc::Embedding b = cfg.sn ? l2_normalized(e) : e;
  Descriptor sum(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) sum[i] = a[i] + b[i];
  const double n = l2_norm(sum);
  if (!(n > 1e-12)) throw DegenerateError("descriptor and embedding cancel: zero-norm sum");
  for (auto& x : sum) x /= n;
  return sum;
}

// Descriptor compressor for concatenation: a D -> D/2 autoencoder without reserved coordinates.
inline Descriptor compress_descriptor(const maskenc::AutoencoderParams& compressor, const Descriptor& d) {
  const Eigen::VectorXd z = maskenc::ae_bottleneck(
      compressor, Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size())), Eigen::VectorXd());
  return {z.data(), z.data() + z.size()};
}

// d' = N([compress(d), e_half]), dimension D preserved.
inline Descriptor enrich_concat(const Descriptor& d, const maskenc::Embedding& e_half,
                                const maskenc::AutoencoderParams& compressor) {
  if (d.size() % 2 != 0) throw ValidationError("descriptor dimension must be even", "descriptor");
  const std::size_t half = d.size() / 2;
  if (compressor.input_dim != static_cast<int>(d.size()) || compressor.bottleneck_dim != static_cast<int>(half) ||
      compressor.reserved != 0)
    throw ValidationError("compressor must map D to D/2", "compressor");
  if (e_half.size() != half) throw ValidationError("embedding must have dimension D/2", "embedding");
  Descriptor out = compress_descriptor(compressor, d);
  out.insert(out.end(), e_half.begin(), e_half.end());
  const double n = l2_norm(out);
  if (!(n > 1e-12)) throw DegenerateError("concatenated descriptor has zero norm");
  for (auto& x : out) x /= n;
  return out;
}

// Trains the concat-mode compressor on a set of descriptors.
inline maskenc::AutoencoderParams train_descriptor_compressor(const std::vector<Descriptor>& descriptors,
                                                              const maskenc::TrainingHyperparams& hyper = {}) {
  if (descriptors.size() < 2) throw ValidationError("need at least two descriptors", "descriptors");
  const auto dim = static_cast<Eigen::Index>(descriptors[0].size());
  maskenc::TrainingSet t;
  t.inputs.resize(dim, static_cast<Eigen::Index>(descriptors.size()));
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    if (static_cast<Eigen::Index>(descriptors[i].size()) != dim)
      throw ValidationError("descriptor dimensions differ", "descriptors");
    t.inputs.col(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::VectorXd>(descriptors[i].data(), dim);
  }
  t.meta.resize(0, t.inputs.cols());
  return maskenc::ae_train(t, static_cast<int>(dim / 2), 0, hyper);
}

inline const std::set<SemanticClass>& default_eligible() {
  static const std::set<SemanticClass> s{SemanticClass::Trunk, SemanticClass::Building};
  return s;
}

struct Partition {
  std::vector<std::size_t> semantic;    // keypoint indices
  std::vector<int> semantic_instance;   // parallel to `semantic`
  std::vector<SemanticClass> semantic_class;
  std::vector<std::size_t> background;  // keypoint indices
};

// Each keypoint goes to the smallest-area mask containing its pixel (ties:
// lower instance id). Keypoints outside every mask, or whose mask class is
// not eligible, are background.
inline Partition partition(const sim::FrameObservation& frame,
                           const std::set<SemanticClass>& eligible = default_eligible()) {
  std::vector<std::size_t> areas;
  for (const auto& m : frame.masks) areas.push_back(m.bitmap.count());
  Partition p;
  for (std::size_t k = 0; k < frame.keypoints.size(); ++k) {
    const auto& pos = frame.keypoints[k].position;
    const int x = static_cast<int>(std::floor(pos.x())), y = static_cast<int>(std::floor(pos.y()));
    std::optional<std::size_t> best;
    for (std::size_t m = 0; m < frame.masks.size(); ++m) {
      if (!frame.masks[m].bitmap.at(x, y)) continue;
      if (!best || areas[m] < areas[*best] ||
          (areas[m] == areas[*best] && frame.masks[m].instance_id < frame.masks[*best].instance_id))
        best = m;
    }
    if (best && eligible.contains(frame.masks[*best].cls)) {
      p.semantic.push_back(k);
      p.semantic_instance.push_back(frame.masks[*best].instance_id);
      p.semantic_class.push_back(frame.masks[*best].cls);
    } else {
      p.background.push_back(k);
    }
  }
  return p;
}

enum class Domain { Semantic, Background };

struct EnrichedKeypoint {
  std::size_t original_index = 0;
  Keypoint keypoint;
  int instance_id = sim::kBackgroundInstance;
  SemanticClass cls = SemanticClass::Background;
};

struct EnrichedKeypointSet {
  int frame_index = 0;
  std::vector<EnrichedKeypoint> background;  // descriptors untouched
  std::vector<EnrichedKeypoint> semantic;    // descriptors enriched (unless mode off)

  std::size_t size() const { return background.size() + semantic.size(); }

  // Combined ordering [background..., semantic...].
  const EnrichedKeypoint& combined(std::size_t i) const {
    return i < background.size() ? background[i] : semantic[i - background.size()];
  }
  Domain domain(std::size_t i) const { return i < background.size() ? Domain::Background : Domain::Semantic; }
  std::vector<Domain> domains() const {
    std::vector<Domain> d(background.size(), Domain::Background);
    d.insert(d.end(), semantic.size(), Domain::Semantic);
    return d;
  }
};

struct EnrichOptions {
  Mode mode = Mode::Add;
  NormalizationConfig norm;
  const maskenc::MaskEncoder* encoder = nullptr;               // required unless mode is Off
  const maskenc::AutoencoderParams* compressor = nullptr;      // required for Concat
  std::set<SemanticClass> eligible = default_eligible();
};

inline EnrichedKeypointSet enrich_frame(const sim::FrameObservation& frame, const EnrichOptions& opt) {
  const Partition part = partition(frame, opt.eligible);
  EnrichedKeypointSet out;
  out.frame_index = frame.frame_index;
  for (auto k : part.background) out.background.push_back({k, frame.keypoints[k], sim::kBackgroundInstance,
                                                           SemanticClass::Background});
  if (opt.mode != Mode::Off && !part.semantic.empty()) {
    if (opt.encoder == nullptr) throw ValidationError("enrichment requires an encoder", "encoder");
    const std::size_t dim = frame.keypoints[part.semantic[0]].descriptor.size();
    const std::size_t want = opt.mode == Mode::Add ? dim : dim / 2;
    if (static_cast<std::size_t>(opt.encoder->dim()) != want)
      throw ValidationError("encoder dimension does not match enrichment mode", "encoder");
    if (opt.mode == Mode::Concat && opt.compressor == nullptr)
      throw ValidationError("concatenation requires a descriptor compressor", "compressor");
  }
  std::map<int, maskenc::Embedding> cache;
  for (std::size_t s = 0; s < part.semantic.size(); ++s) {
    const std::size_t k = part.semantic[s];
    EnrichedKeypoint ek{k, frame.keypoints[k], part.semantic_instance[s], part.semantic_class[s]};
    if (opt.mode != Mode::Off) {
      auto it = cache.find(ek.instance_id);
      if (it == cache.end())
        it = cache.emplace(ek.instance_id, opt.encoder->encode(frame.mask_of(ek.instance_id)->bitmap)).first;
      ek.keypoint.descriptor = opt.mode == Mode::Add ? enrich_add(ek.keypoint.descriptor, it->second, opt.norm)
                                                     : enrich_concat(ek.keypoint.descriptor, it->second, *opt.compressor);
    }
    out.semantic.push_back(std::move(ek));
  }
  return out;
}

inline nlohmann::json to_json(const EnrichedKeypointSet& s) {
  auto entries = [](const std::vector<EnrichedKeypoint>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& e : v)
      a.push_back({{"original_index", e.original_index},
                   {"instance_id", e.instance_id},
                   {"class", sim::to_string(e.cls)},
                   {"position", {e.keypoint.position.x(), e.keypoint.position.y()}},
                   {"descriptor", e.keypoint.descriptor}});
    return a;
  };
  return {{"frame_index", s.frame_index}, {"background", entries(s.background)}, {"semantic", entries(s.semantic)}};
}

}  // namespace ksi::enrich
