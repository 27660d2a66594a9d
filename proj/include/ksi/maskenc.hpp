#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ksi/bitmap.hpp"
#include "ksi/error.hpp"
#include "ksi/rng.hpp"
#include "ksi/scenesim.hpp"

// Semantic instance encoders: mask -> embedding carrying shape, size and position.
namespace ksi::maskenc {

using Embedding = std::vector<double>;

struct MaskGrid {
  int size = 64;                     // G
  std::vector<std::uint8_t> cells;   // G*G, row-major
  double centroid_x = 0.0;           // original mask, normalized image coords in [0, 1]
  double centroid_y = 0.0;
  double area_fraction = 0.0;        // mask pixels / image pixels
  double bbox_aspect = 1.0;          // bbox width / height of the original mask

  bool at(int x, int y) const { return cells[static_cast<std::size_t>(y * size + x)] != 0; }
  std::size_t active() const {
    std::size_t n = 0;
    for (auto c : cells) n += c;
    return n;
  }
  std::array<double, 3> metadata() const { return {centroid_x, centroid_y, area_fraction}; }
};

// Nearest-neighbour resampling of the mask's bounding box onto a G x G grid.
// Each axis is shrunk to G cells when the box is larger than G and copied
// 1:1 otherwise (no upsampling), centred in the grid.
inline MaskGrid rasterize_mask(const Bitmap& mask, int grid_size = 64) {
  if (grid_size < 1 || (grid_size & (grid_size - 1)) != 0) throw ValidationError("must be a power of two", "grid_size");
  const PixelBox box = mask.bounding_box();
  if (box.empty()) throw ValidationError("mask is empty", "mask");
  MaskGrid g;
  g.size = grid_size;
  g.cells.assign(static_cast<std::size_t>(grid_size * grid_size), 0);
  const int nx = std::min(grid_size, box.w()), ny = std::min(grid_size, box.h());
  const int ox = (grid_size - nx) / 2, oy = (grid_size - ny) / 2;
  for (int j = 0; j < ny; ++j) {
    const int sy = box.y0 + static_cast<int>((j + 0.5) * box.h() / ny);
    for (int i = 0; i < nx; ++i) {
      const int sx = box.x0 + static_cast<int>((i + 0.5) * box.w() / nx);
      if (mask.at(sx, sy)) g.cells[static_cast<std::size_t>((oy + j) * grid_size + ox + i)] = 1;
    }
  }
  double sx = 0.0, sy = 0.0;
  std::size_t n = 0;
  mask.for_each_set([&](int x, int y) {
    sx += x + 0.5;
    sy += y + 0.5;
    ++n;
  });
  g.centroid_x = sx / static_cast<double>(n) / mask.width();
  g.centroid_y = sy / static_cast<double>(n) / mask.height();
  g.area_fraction = static_cast<double>(n) / (static_cast<double>(mask.width()) * mask.height());
  g.bbox_aspect = static_cast<double>(box.w()) / box.h();
  return g;
}

inline MaskGrid rasterize_mask(const sim::InstanceMask& mask, int grid_size = 64) {
  return rasterize_mask(mask.bitmap, grid_size);
}

// Normalized central moments (eta20, eta11, eta02) and the seven Hu invariants of the grid.
struct ShapeMoments {
  double eta20 = 0, eta11 = 0, eta02 = 0;
  std::array<double, 7> hu{};
};

inline ShapeMoments shape_moments(const MaskGrid& g) {
  double m00 = 0, m10 = 0, m01 = 0;
  for (int y = 0; y < g.size; ++y)
    for (int x = 0; x < g.size; ++x)
      if (g.at(x, y)) {
        m00 += 1;
        m10 += x;
        m01 += y;
      }
  ShapeMoments out;
  if (m00 == 0) return out;
  const double xc = m10 / m00, yc = m01 / m00;
  double mu[4][4] = {};
  for (int y = 0; y < g.size; ++y)
    for (int x = 0; x < g.size; ++x)
      if (g.at(x, y)) {
        const double dx = x - xc, dy = y - yc;
        double px = 1;
        for (int p = 0; p <= 3; ++p) {
          double py = 1;
          for (int q = 0; p + q <= 3; ++q) {
            mu[p][q] += px * py;
            py *= dy;
          }
          px *= dx;
        }
      }
  auto eta = [&](int p, int q) { return mu[p][q] / std::pow(m00, 1.0 + (p + q) / 2.0); };
  const double n20 = eta(2, 0), n02 = eta(0, 2), n11 = eta(1, 1);
  const double n30 = eta(3, 0), n03 = eta(0, 3), n21 = eta(2, 1), n12 = eta(1, 2);
  out.eta20 = n20;
  out.eta11 = n11;
  out.eta02 = n02;
  const double a = n30 + n12, b = n21 + n03;
  out.hu[0] = n20 + n02;
  out.hu[1] = (n20 - n02) * (n20 - n02) + 4 * n11 * n11;
  out.hu[2] = (n30 - 3 * n12) * (n30 - 3 * n12) + (3 * n21 - n03) * (3 * n21 - n03);
  out.hu[3] = a * a + b * b;
  out.hu[4] = (n30 - 3 * n12) * a * (a * a - 3 * b * b) + (3 * n21 - n03) * b * (3 * a * a - b * b);
  out.hu[5] = (n20 - n02) * (a * a - b * b) + 4 * n11 * a * b;
  out.hu[6] = (3 * n21 - n03) * a * (a * a - 3 * b * b) - (n30 - 3 * n12) * b * (3 * a * a - b * b);
  return out;
}

// sign(h) * log10(1 + |h| * 1e7)
inline double signed_log(double h) { return h == 0.0 ? 0.0 : std::copysign(std::log10(1.0 + std::abs(h) * 1e7), h); }

inline constexpr int kMomentFeatures = 14;

// [area, centroid x, centroid y, bbox aspect, eta20, eta11, eta02, 7 x Hu].
// Hu terms are log-compressed to roughly [-1, 1]; the layout and second-order terms
// carry kLayoutWeight since they are what tells neighbouring instances apart.
inline constexpr double kLayoutWeight = 3.0;

inline std::array<double, kMomentFeatures> moment_features(const MaskGrid& g) {
  const auto m = shape_moments(g);
  std::array<double, kMomentFeatures> f{g.area_fraction, g.centroid_x, g.centroid_y, g.bbox_aspect,
                                         m.eta20,         m.eta11,      m.eta02};
  for (int i = 0; i < 7; ++i) f[static_cast<std::size_t>(i)] *= kLayoutWeight;
  for (int i = 0; i < 7; ++i) f[static_cast<std::size_t>(7 + i)] = signed_log(m.hu[static_cast<std::size_t>(i)]) / 7.0;
  return f;
}

// target_dim x features matrix with orthonormal columns drawn from a seeded Gaussian.
inline Eigen::MatrixXd orthonormal_projection(int target_dim, int features, std::uint64_t seed) {
  if (target_dim < features)
    throw ValidationError("target dimension smaller than feature count", "target_dim");
  Rng rng(seed);
  Eigen::MatrixXd a(target_dim, features);
  for (int c = 0; c < features; ++c)
    for (int r = 0; r < target_dim; ++r) a(r, c) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(target_dim, features);
  return q;
}

// ---- dense autoencoder ---------------------------------------------------
//
// Encoder: z = [act(W1 x + b1), meta]   (the trailing `reserved` bottleneck
//          coordinates carry caller-supplied metadata and are not learned)
// Decoder: x_hat = W2 z + b2
// Loss:    mean over samples and inputs of (x_hat - x)^2

enum class Activation { Tanh, Linear };

struct TrainingHyperparams {
  double step_size = 0.01;
  int epochs = 200;
  std::uint64_t seed = 11;
};

struct AutoencoderParams {
  int input_dim = 0;
  int bottleneck_dim = 0;
  int reserved = 0;
  Activation activation = Activation::Tanh;
  Eigen::MatrixXd w1;  // (bottleneck - reserved) x input
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // input x bottleneck
  Eigen::VectorXd b2;
  TrainingHyperparams hyper;
  std::vector<double> loss_trace;

  int learned_dim() const { return bottleneck_dim - reserved; }
  std::size_t parameter_count() const {
    return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size());
  }
  double& parameter(std::size_t k) {
    auto take = [&k](auto& m) -> double* {
      if (k < static_cast<std::size_t>(m.size())) return m.data() + k;
      k -= static_cast<std::size_t>(m.size());
      return nullptr;
    };
    if (auto* p = take(w1)) return *p;
    if (auto* p = take(b1)) return *p;
    if (auto* p = take(w2)) return *p;
    if (auto* p = take(b2)) return *p;
    throw ValidationError("parameter index out of range", "parameter");
  }

  static AutoencoderParams init(int input_dim, int bottleneck_dim, int reserved, std::uint64_t seed,
                                Activation act = Activation::Tanh) {
    if (input_dim < 1 || bottleneck_dim <= reserved || reserved < 0)
      throw ValidationError("inconsistent autoencoder dimensions", "bottleneck_dim");
    AutoencoderParams p;
    p.input_dim = input_dim;
    p.bottleneck_dim = bottleneck_dim;
    p.reserved = reserved;
    p.activation = act;
    Rng rng(seed);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(bottleneck_dim));
    p.w1.resize(bottleneck_dim - reserved, input_dim);
    for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = s1 * rng.normal();
    p.b1 = Eigen::VectorXd::Zero(bottleneck_dim - reserved);
    p.w2.resize(input_dim, bottleneck_dim);
    for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2.data()[i] = s2 * rng.normal();
    p.b2 = Eigen::VectorXd::Zero(input_dim);
    return p;
  }
};

// Training data: one column per sample; `meta` has `reserved` rows.
struct TrainingSet {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd meta;
};

namespace detail {

struct Forward {
  Eigen::MatrixXd pre;  // W1 X + b1
  Eigen::MatrixXd z;    // full bottleneck
  Eigen::MatrixXd out;
};

inline Forward forward(const AutoencoderParams& p, const TrainingSet& data) {
  Forward f;
  f.pre = (p.w1 * data.inputs).colwise() + p.b1;
  f.z.resize(p.bottleneck_dim, data.inputs.cols());
  f.z.topRows(p.learned_dim()) = p.activation == Activation::Tanh ? f.pre.array().tanh().matrix() : f.pre;
  if (p.reserved > 0) f.z.bottomRows(p.reserved) = data.meta;
  f.out = (p.w2 * f.z).colwise() + p.b2;
  return f;
}

inline double loss(const AutoencoderParams& p, const TrainingSet& data) {
  const Forward f = forward(p, data);
  return (f.out - data.inputs).squaredNorm() / static_cast<double>(data.inputs.size());
}

struct Gradient {
  Eigen::MatrixXd w1, w2;
  Eigen::VectorXd b1, b2;
};

inline Gradient gradient(const AutoencoderParams& p, const TrainingSet& data) {
  const Forward f = forward(p, data);
  const double scale = 2.0 / static_cast<double>(data.inputs.size());
  const Eigen::MatrixXd d_out = scale * (f.out - data.inputs);
  Gradient g;
  g.w2 = d_out * f.z.transpose();
  g.b2 = d_out.rowwise().sum();
  Eigen::MatrixXd d_z = (p.w2.transpose() * d_out).topRows(p.learned_dim());
  if (p.activation == Activation::Tanh)
    d_z.array() *= 1.0 - f.z.topRows(p.learned_dim()).array().square();
  g.w1 = d_z * data.inputs.transpose();
  g.b1 = d_z.rowwise().sum();
  return g;
}

}  // namespace detail

class TrainingFailed : public Error {
 public:
  TrainingFailed(const std::string& msg, std::vector<double> trace) : Error(msg), trace_(std::move(trace)) {}
  const std::vector<double>& loss_trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

// Full-batch gradient descent with Adam-style per-parameter scaling (the raw
// problem is badly conditioned: output biases see curvature ~1/G^2). A step
// that raises the loss is retried with half the step size, at most 10 times;
// after that training stops (or fails if the loss went non-finite). The
// returned loss trace is non-increasing.
inline AutoencoderParams ae_train(const TrainingSet& data, int bottleneck_dim, int reserved,
                                  const TrainingHyperparams& hyper = {}, Activation act = Activation::Tanh) {
  if (data.inputs.cols() < 1) throw ValidationError("no training samples", "grids");
  if (data.meta.rows() != reserved || (reserved > 0 && data.meta.cols() != data.inputs.cols()))
    throw ValidationError("metadata rows must equal reserved coordinates", "meta");
  if (!(hyper.step_size > 0.0) || hyper.epochs < 1) throw ValidationError("invalid hyperparameters", "hyperparams");
  AutoencoderParams p =
      AutoencoderParams::init(static_cast<int>(data.inputs.rows()), bottleneck_dim, reserved, hyper.seed, act);
  p.hyper = hyper;
  double current = detail::loss(p, data);
  p.loss_trace.push_back(current);
  double step = hyper.step_size;
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  detail::Gradient m{Eigen::MatrixXd::Zero(p.w1.rows(), p.w1.cols()), Eigen::MatrixXd::Zero(p.w2.rows(), p.w2.cols()),
                     Eigen::VectorXd::Zero(p.b1.size()), Eigen::VectorXd::Zero(p.b2.size())};
  detail::Gradient v = m;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    const auto g = detail::gradient(p, data);
    const double c1 = 1.0 - std::pow(b1, epoch + 1), c2 = 1.0 - std::pow(b2, epoch + 1);
    auto moments = [&](auto& mm, auto& vv, const auto& gg) {
      mm = b1 * mm + (1.0 - b1) * gg;
      vv = b2 * vv + (1.0 - b2) * gg.cwiseAbs2();
    };
    moments(m.w1, v.w1, g.w1);
    moments(m.w2, v.w2, g.w2);
    moments(m.b1, v.b1, g.b1);
    moments(m.b2, v.b2, g.b2);
    auto dir = [&](const auto& mm, const auto& vv) {
      return ((mm.array() / c1) / ((vv.array() / c2).sqrt() + eps)).matrix().eval();
    };
    bool accepted = false;
    double candidate_loss = current;
    for (int halvings = 0; halvings <= 10; ++halvings) {
      AutoencoderParams q = p;
      q.w1 -= step * dir(m.w1, v.w1);
      q.b1 -= step * dir(m.b1, v.b1);
      q.w2 -= step * dir(m.w2, v.w2);
      q.b2 -= step * dir(m.b2, v.b2);
      candidate_loss = detail::loss(q, data);
      if (std::isfinite(candidate_loss) && candidate_loss <= current) {
        q.loss_trace = std::move(p.loss_trace);
        p = std::move(q);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!std::isfinite(candidate_loss) && !std::isfinite(current))
        throw TrainingFailed("autoencoder training diverged", p.loss_trace);
      break;
    }
    current = candidate_loss;
    p.loss_trace.push_back(current);
  }
  if (!std::isfinite(current)) throw TrainingFailed("autoencoder training diverged", p.loss_trace);
  return p;
}

inline Eigen::VectorXd grid_vector(const MaskGrid& g) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(g.cells.size()));
  for (std::size_t i = 0; i < g.cells.size(); ++i) v[static_cast<Eigen::Index>(i)] = g.cells[i];
  return v;
}

inline TrainingSet grid_training_set(const std::vector<MaskGrid>& grids) {
  if (grids.empty()) throw ValidationError("no grids", "grids");
  TrainingSet t;
  const auto n = static_cast<Eigen::Index>(grids.size());
  t.inputs.resize(static_cast<Eigen::Index>(grids[0].cells.size()), n);
  t.meta.resize(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& g = grids[static_cast<std::size_t>(i)];
    if (g.cells.size() != grids[0].cells.size()) throw ValidationError("grids differ in size", "grids");
    t.inputs.col(i) = grid_vector(g);
    const auto m = g.metadata();
    t.meta.col(i) << m[0], m[1], m[2];
  }
  return t;
}

// Mask autoencoder: three reserved bottleneck coordinates carry (centroid x, centroid y, area).
inline AutoencoderParams ae_train(const std::vector<MaskGrid>& grids, int embedding_dim,
                                  const TrainingHyperparams& hyper = {}) {
  if (grids.size() < 2) throw ValidationError("need at least two grids", "grids");
  return ae_train(grid_training_set(grids), embedding_dim, 3, hyper);
}

// Bottleneck of one input.
inline Eigen::VectorXd ae_bottleneck(const AutoencoderParams& p, const Eigen::VectorXd& x, const Eigen::VectorXd& meta) {
  if (x.size() != p.input_dim) throw ValidationError("input dimension mismatch", "input_dim");
  if (meta.size() != p.reserved) throw ValidationError("metadata dimension mismatch", "reserved");
  Eigen::VectorXd z(p.bottleneck_dim);
  const Eigen::VectorXd pre = p.w1 * x + p.b1;
  z.head(p.learned_dim()) = p.activation == Activation::Tanh ? pre.array().tanh().matrix() : pre;
  z.tail(p.reserved) = meta;
  return z;
}

inline Embedding ae_encode(const AutoencoderParams& p, const MaskGrid& grid) {
  if (p.reserved != 3) throw ValidationError("not a mask autoencoder", "reserved");
  if (grid.active() == 0) throw ValidationError("grid is empty", "grid");
  const auto m = grid.metadata();
  const Eigen::VectorXd z = ae_bottleneck(p, grid_vector(grid), Eigen::Vector3d(m[0], m[1], m[2]));
  return {z.data(), z.data() + z.size()};
}

// Central-difference check of the analytic gradient on `n_weights` randomly
// chosen parameters. Returns max |a - n| / max(|a|, |n|) (0 when both vanish).
inline double ae_gradient_check(const AutoencoderParams& params, const TrainingSet& sample, double h = 1e-5,
                                int n_weights = 100, std::uint64_t seed = 3) {
  if (!(h > 0.0)) throw ValidationError("finite-difference step must be positive", "h");
  const auto g = detail::gradient(params, sample);
  AutoencoderParams analytic = params;
  analytic.w1 = g.w1;
  analytic.b1 = g.b1;
  analytic.w2 = g.w2;
  analytic.b2 = g.b2;
  Rng rng(seed);
  AutoencoderParams probe = params;
  double worst = 0.0;
  for (int i = 0; i < n_weights; ++i) {
    const std::size_t k = rng.index(params.parameter_count());
    const double orig = probe.parameter(k);
    probe.parameter(k) = orig + h;
    const double lp = detail::loss(probe, sample);
    probe.parameter(k) = orig - h;
    const double lm = detail::loss(probe, sample);
    probe.parameter(k) = orig;
    const double numeric = (lp - lm) / (2.0 * h);
    const double a = analytic.parameter(k);
    const double denom = std::max(std::abs(a), std::abs(numeric));
    if (denom > 1e-10) worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

inline double ae_gradient_check(const AutoencoderParams& params, const MaskGrid& grid, double h = 1e-5,
                                int n_weights = 100, std::uint64_t seed = 3) {
  return ae_gradient_check(params, grid_training_set({grid}), h, n_weights, seed);
}

// ---- encoder interface ---------------------------------------------------

class MaskEncoder {
 public:
  virtual ~MaskEncoder() = default;
  virtual int dim() const = 0;
  virtual int grid_size() const = 0;
  virtual Embedding encode(const MaskGrid& grid) const = 0;

  Embedding encode(const Bitmap& mask) const { return encode(rasterize_mask(mask, grid_size())); }
};

class MomentEncoder final : public MaskEncoder {
 public:
  explicit MomentEncoder(int dim, double gain = 1.0, std::uint64_t projection_seed = 7, int grid_size = 64)
      : dim_(dim), grid_(grid_size), gain_(gain), projection_(orthonormal_projection(dim, kMomentFeatures, projection_seed)) {}

  using MaskEncoder::encode;
  int dim() const override { return dim_; }
  int grid_size() const override { return grid_; }
  Embedding encode(const MaskGrid& grid) const override {
    const auto f = moment_features(grid);
    const Eigen::VectorXd e = gain_ * (projection_ * Eigen::Map<const Eigen::Matrix<double, kMomentFeatures, 1>>(f.data()));
    return {e.data(), e.data() + e.size()};
  }

 private:
  int dim_;
  int grid_;
  double gain_;
  Eigen::MatrixXd projection_;
};

class AutoencoderMaskEncoder final : public MaskEncoder {
 public:
  AutoencoderMaskEncoder(AutoencoderParams params, int grid_size, double gain = 1.0)
      : params_(std::move(params)), grid_(grid_size), gain_(gain) {
    if (params_.input_dim != grid_size * grid_size) throw ValidationError("grid size does not match", "grid_size");
  }
  using MaskEncoder::encode;
  int dim() const override { return params_.bottleneck_dim; }
  int grid_size() const override { return grid_; }
  Embedding encode(const MaskGrid& grid) const override {
    auto e = ae_encode(params_, grid);
    for (auto& x : e) x *= gain_;
    return e;
  }
  const AutoencoderParams& params() const { return params_; }

 private:
  AutoencoderParams params_;
  int grid_;
  double gain_;
};

inline Embedding encode_moments(const MaskGrid& grid, int target_dim, std::uint64_t projection_seed = 7,
                                double gain = 1.0) {
  return MomentEncoder(target_dim, gain, projection_seed, grid.size).encode(grid);
}

// ---- serialization -------------------------------------------------------

namespace detail {
inline nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}
inline Eigen::MatrixXd matrix_from(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>(), cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw ValidationError("matrix size mismatch", "data");
  return Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
}
}  // namespace detail

inline void to_json(nlohmann::json& j, const AutoencoderParams& p) {
  j = nlohmann::json{{"input_dim", p.input_dim},
                     {"bottleneck_dim", p.bottleneck_dim},
                     {"reserved", p.reserved},
                     {"activation", p.activation == Activation::Tanh ? "tanh" : "linear"},
                     {"hyperparams", {{"step_size", p.hyper.step_size}, {"epochs", p.hyper.epochs}, {"seed", p.hyper.seed}}},
                     {"w1", detail::matrix_json(p.w1)},
                     {"b1", detail::matrix_json(p.b1)},
                     {"w2", detail::matrix_json(p.w2)},
                     {"b2", detail::matrix_json(p.b2)},
                     {"loss_trace", p.loss_trace}};
}

inline void from_json(const nlohmann::json& j, AutoencoderParams& p) {
  p.input_dim = j.at("input_dim").get<int>();
  p.bottleneck_dim = j.at("bottleneck_dim").get<int>();
  p.reserved = j.at("reserved").get<int>();
  p.activation = j.at("activation").get<std::string>() == "linear" ? Activation::Linear : Activation::Tanh;
  const auto& h = j.at("hyperparams");
  p.hyper.step_size = h.at("step_size").get<double>();
  p.hyper.epochs = h.at("epochs").get<int>();
  p.hyper.seed = h.at("seed").get<std::uint64_t>();
  p.w1 = detail::matrix_from(j.at("w1"));
  p.b1 = detail::matrix_from(j.at("b1"));
  p.w2 = detail::matrix_from(j.at("w2"));
  p.b2 = detail::matrix_from(j.at("b2"));
  p.loss_trace = j.at("loss_trace").get<std::vector<double>>();
  if (p.w1.rows() != p.bottleneck_dim - p.reserved || p.w1.cols() != p.input_dim || p.w2.rows() != p.input_dim ||
      p.w2.cols() != p.bottleneck_dim)
    throw ValidationError("weight shapes inconsistent with dims", "weights");
}

}  // namespace ksi::maskenc
