#pragma once

#include <Eigen/Core>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ksi/enrich.hpp"
#include "ksi/error.hpp"

// Bipartite descriptor matching: each keypoint matched at most once,
// maximizing total similarity.
namespace ksi::match {

using enrich::Domain;

struct MatchPair {
  int a = 0;
  int b = 0;
  double score = 0.0;
  friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

struct MatchSet {
  std::vector<MatchPair> pairs;  // sorted by a
  std::vector<int> unmatched_a;
  std::vector<int> unmatched_b;

  // Sorts pairs and fills the unmatched lists.
  void finalize(int n_a, int n_b) {
    std::sort(pairs.begin(), pairs.end(), [](const MatchPair& x, const MatchPair& y) { return x.a < y.a; });
    std::vector<char> used_a(static_cast<std::size_t>(n_a), 0), used_b(static_cast<std::size_t>(n_b), 0);
    for (const auto& p : pairs) {
      used_a[static_cast<std::size_t>(p.a)] = 1;
      used_b[static_cast<std::size_t>(p.b)] = 1;
    }
    unmatched_a.clear();
    unmatched_b.clear();
    for (int i = 0; i < n_a; ++i)
      if (!used_a[static_cast<std::size_t>(i)]) unmatched_a.push_back(i);
    for (int j = 0; j < n_b; ++j)
      if (!used_b[static_cast<std::size_t>(j)]) unmatched_b.push_back(j);
  }

  std::vector<std::pair<int, int>> index_pairs() const {
    std::vector<std::pair<int, int>> v;
    for (const auto& p : pairs) v.emplace_back(p.a, p.b);
    return v;
  }

  // True when no index appears twice on either side.
  bool at_most_once() const {
    std::vector<int> as, bs;
    for (const auto& p : pairs) {
      as.push_back(p.a);
      bs.push_back(p.b);
    }
    std::sort(as.begin(), as.end());
    std::sort(bs.begin(), bs.end());
    return std::adjacent_find(as.begin(), as.end()) == as.end() && std::adjacent_find(bs.begin(), bs.end()) == bs.end();
  }
};

enum class Solver { MutualNN, ExactAssignment, Sinkhorn };

inline std::string to_string(Solver s) {
  switch (s) {
    case Solver::MutualNN: return "mnn";
    case Solver::ExactAssignment: return "exact";
    case Solver::Sinkhorn: return "sinkhorn";
  }
  return "exact";
}

inline Solver solver_from_string(const std::string& s) {
  if (s == "mnn" || s == "mutual_nn") return Solver::MutualNN;
  if (s == "exact") return Solver::ExactAssignment;
  if (s == "sinkhorn") return Solver::Sinkhorn;
  throw ValidationError("expected mnn|exact|sinkhorn, got '" + s + "'", "matcher");
}

struct SinkhornConfig {
  double epsilon = 0.1;
  int iterations = 100;
  double dustbin_score = 0.0;
};

struct MatcherConfig {
  Solver solver = Solver::ExactAssignment;
  double min_score = 0.2;
  SinkhornConfig sinkhorn;
  std::size_t max_cells = 2000 * 2000;  // |A| * |B| cap for the exact solver
  std::uint64_t seed = 0;               // unused: ties break by lowest index

  void validate() const {
    if (!std::isfinite(min_score)) throw ValidationError("must be finite", "min_score");
    if (!(sinkhorn.epsilon > 0.0)) throw ValidationError("must be positive", "epsilon");
    if (sinkhorn.iterations < 1) throw ValidationError("must be >= 1", "iterations");
  }
};

using ScoreMatrix = Eigen::MatrixXd;

inline double similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ValidationError("descriptor dimensions differ", "descriptor");
  const auto n = static_cast<Eigen::Index>(a.size());
  return Eigen::Map<const Eigen::VectorXd>(a.data(), n).dot(Eigen::Map<const Eigen::VectorXd>(b.data(), n));
}

inline ScoreMatrix score_matrix(const std::vector<const std::vector<double>*>& a,
                                const std::vector<const std::vector<double>*>& b) {
  ScoreMatrix s(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  if (a.empty() || b.empty()) return s;
  const std::size_t dim = a[0]->size();
  Eigen::MatrixXd ma(static_cast<Eigen::Index>(dim), s.rows()), mb(static_cast<Eigen::Index>(dim), s.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]->size() != dim) throw ValidationError("descriptor dimensions differ", "descriptor");
    ma.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXd>(a[i]->data(), static_cast<Eigen::Index>(dim));
  }
  for (std::size_t j = 0; j < b.size(); ++j) {
    if (b[j]->size() != dim) throw ValidationError("descriptor dimensions differ", "descriptor");
    mb.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const Eigen::VectorXd>(b[j]->data(), static_cast<Eigen::Index>(dim));
  }
  s.noalias() = ma.transpose() * mb;
  return s;
}

inline ScoreMatrix score_matrix(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  std::vector<const std::vector<double>*> pa, pb;
  for (const auto& d : a) pa.push_back(&d);
  for (const auto& d : b) pb.push_back(&d);
  return score_matrix(pa, pb);
}

// ---- mutual nearest neighbour ---------------------------------------------

inline MatchSet match_mutual_nn(const ScoreMatrix& s, const MatcherConfig& cfg) {
  MatchSet out;
  const auto na = s.rows(), nb = s.cols();
  if (na > 0 && nb > 0) {
    std::vector<Eigen::Index> best_b(static_cast<std::size_t>(na)), best_a(static_cast<std::size_t>(nb));
    for (Eigen::Index i = 0; i < na; ++i) s.row(i).maxCoeff(&best_b[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < nb; ++j) s.col(j).maxCoeff(&best_a[static_cast<std::size_t>(j)]);
    for (Eigen::Index i = 0; i < na; ++i) {
      const auto j = best_b[static_cast<std::size_t>(i)];
      if (best_a[static_cast<std::size_t>(j)] == i && s(i, j) >= cfg.min_score)
        out.pairs.push_back({static_cast<int>(i), static_cast<int>(j), s(i, j)});
    }
  }
  out.finalize(static_cast<int>(na), static_cast<int>(nb));
  return out;
}

// ---- exact assignment -------------------------------------------------------

namespace detail {

// Minimum-cost assignment of every row of an n x m cost matrix (n <= m) to a
// distinct column: shortest augmenting paths with dual potentials, O(n^2 m).
inline std::vector<int> min_cost_row_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows()), m = static_cast<int>(cost.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(m + 1), 0.0);
  std::vector<int> p(static_cast<std::size_t>(m + 1), 0), way(static_cast<std::size_t>(m + 1), 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(m + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j)
    if (p[static_cast<std::size_t>(j)] != 0) row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return row_to_col;
}

}  // namespace detail

// Maximum-weight partial injection over pairs with score >= min_score. Pairs
// that cannot raise the total (score <= 0) are never reported.
inline MatchSet match_exact(const ScoreMatrix& s, const MatcherConfig& cfg) {
  const auto na = s.rows(), nb = s.cols();
  if (static_cast<std::size_t>(na) * static_cast<std::size_t>(nb) > cfg.max_cells)
    throw SizeError("assignment problem of " + std::to_string(na) + "x" + std::to_string(nb) + " exceeds the cap");
  MatchSet out;
  if (na > 0 && nb > 0) {
    auto weight = [&](Eigen::Index i, Eigen::Index j) {
      const double w = s(i, j);
      return (w >= cfg.min_score && w > 0.0) ? w : 0.0;
    };
    const bool transpose = na > nb;
    const Eigen::Index rows = transpose ? nb : na, cols = transpose ? na : nb;
    Eigen::MatrixXd cost(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) cost(r, c) = -(transpose ? weight(c, r) : weight(r, c));
    const auto assign = detail::min_cost_row_assignment(cost);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const int c = assign[static_cast<std::size_t>(r)];
      const Eigen::Index i = transpose ? c : r, j = transpose ? r : c;
      if (weight(i, j) > 0.0) out.pairs.push_back({static_cast<int>(i), static_cast<int>(j), s(i, j)});
    }
  }
  out.finalize(static_cast<int>(na), static_cast<int>(nb));
  return out;
}

// ---- Sinkhorn ---------------------------------------------------------------

struct SinkhornResult {
  Eigen::MatrixXd transport;  // (|A|+1) x (|B|+1); real rows/columns sum to ~1
  MatchSet matches;
};

// Entropic assignment with a dustbin row and column. The augmented score
// matrix is divided by epsilon and alternately row/column normalized in the
// log domain against marginals (1,...,1,|B|) and (1,...,1,|A|).
inline SinkhornResult sinkhorn_transport(const ScoreMatrix& s, const MatcherConfig& cfg) {
  cfg.validate();
  if (!s.allFinite()) throw ValidationError("score matrix contains NaN or infinity", "scores");
  const auto na = s.rows(), nb = s.cols();
  SinkhornResult res;
  if (na == 0 || nb == 0) {
    res.matches.finalize(static_cast<int>(na), static_cast<int>(nb));
    return res;
  }
  const double eps = cfg.sinkhorn.epsilon;
  Eigen::MatrixXd z(na + 1, nb + 1);
  z.topLeftCorner(na, nb) = s / eps;
  z.col(nb).setConstant(cfg.sinkhorn.dustbin_score / eps);
  z.row(na).setConstant(cfg.sinkhorn.dustbin_score / eps);

  const double norm = -std::log(static_cast<double>(na + nb));
  Eigen::VectorXd log_mu = Eigen::VectorXd::Constant(na + 1, norm);
  Eigen::VectorXd log_nu = Eigen::VectorXd::Constant(nb + 1, norm);
  log_mu[na] = std::log(static_cast<double>(nb)) + norm;
  log_nu[nb] = std::log(static_cast<double>(na)) + norm;

  Eigen::VectorXd u = Eigen::VectorXd::Zero(na + 1), v = Eigen::VectorXd::Zero(nb + 1);
  auto lse = [](const auto& x) {
    const double m = x.maxCoeff();
    return m + std::log((x.array() - m).exp().sum());
  };
  for (int it = 0; it < cfg.sinkhorn.iterations; ++it) {
    for (Eigen::Index i = 0; i <= na; ++i) u[i] = log_mu[i] - lse((z.row(i).transpose() + v).eval());
    for (Eigen::Index j = 0; j <= nb; ++j) v[j] = log_nu[j] - lse((z.col(j) + u).eval());
  }
  res.transport.resize(na + 1, nb + 1);
  for (Eigen::Index i = 0; i <= na; ++i)
    for (Eigen::Index j = 0; j <= nb; ++j) res.transport(i, j) = std::exp(z(i, j) + u[i] + v[j] - norm);

  // Mutual argmax over the augmented plan (lowest index wins ties).
  for (Eigen::Index i = 0; i < na; ++i) {
    Eigen::Index j;
    res.transport.row(i).maxCoeff(&j);
    if (j == nb) continue;
    Eigen::Index i_back;
    res.transport.col(j).maxCoeff(&i_back);
    if (i_back == i && s(i, j) >= cfg.min_score)
      res.matches.pairs.push_back({static_cast<int>(i), static_cast<int>(j), s(i, j)});
  }
  res.matches.finalize(static_cast<int>(na), static_cast<int>(nb));
  return res;
}

inline MatchSet match_sinkhorn(const ScoreMatrix& s, const MatcherConfig& cfg) {
  return sinkhorn_transport(s, cfg).matches;
}

inline MatchSet solve(const ScoreMatrix& s, const MatcherConfig& cfg) {
  cfg.validate();
  switch (cfg.solver) {
    case Solver::MutualNN: return match_mutual_nn(s, cfg);
    case Solver::ExactAssignment: return match_exact(s, cfg);
    case Solver::Sinkhorn: return match_sinkhorn(s, cfg);
  }
  return {};
}

// Descriptor-set overloads.
inline MatchSet match_mutual_nn(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                                const MatcherConfig& cfg) {
  return match_mutual_nn(score_matrix(a, b), cfg);
}
inline MatchSet match_exact(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                            const MatcherConfig& cfg) {
  return match_exact(score_matrix(a, b), cfg);
}
inline MatchSet match_sinkhorn(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                               const MatcherConfig& cfg) {
  return match_sinkhorn(score_matrix(a, b), cfg);
}

// ---- frame-pair matching ------------------------------------------------------

enum class MatchMode { Heterogeneous, Homogeneous };

inline std::string to_string(MatchMode m) { return m == MatchMode::Heterogeneous ? "heterogeneous" : "homogeneous"; }

inline MatchMode match_mode_from_string(const std::string& s) {
  if (s == "heterogeneous") return MatchMode::Heterogeneous;
  if (s == "homogeneous") return MatchMode::Homogeneous;
  throw ValidationError("expected heterogeneous|homogeneous, got '" + s + "'", "match_mode");
}

// Indices in the result refer to the combined [background, semantic] ordering
// of each EnrichedKeypointSet.
inline MatchSet match_pair(const enrich::EnrichedKeypointSet& a, const enrich::EnrichedKeypointSet& b, MatchMode mode,
                           const MatcherConfig& cfg) {
  auto descriptors = [](const enrich::EnrichedKeypointSet& s, std::size_t from, std::size_t to) {
    std::vector<const std::vector<double>*> d;
    for (std::size_t i = from; i < to; ++i) d.push_back(&s.combined(i).keypoint.descriptor);
    return d;
  };
  const int na = static_cast<int>(a.size()), nb = static_cast<int>(b.size());
  MatchSet out;
  if (mode == MatchMode::Heterogeneous) {
    out = solve(score_matrix(descriptors(a, 0, a.size()), descriptors(b, 0, b.size())), cfg);
  } else {
    const MatchSet bg = solve(score_matrix(descriptors(a, 0, a.background.size()), descriptors(b, 0, b.background.size())), cfg);
    const MatchSet sem = solve(score_matrix(descriptors(a, a.background.size(), a.size()),
                                            descriptors(b, b.background.size(), b.size())),
                               cfg);
    out.pairs = bg.pairs;
    for (auto p : sem.pairs) {
      p.a += static_cast<int>(a.background.size());
      p.b += static_cast<int>(b.background.size());
      out.pairs.push_back(p);
    }
  }
  out.finalize(na, nb);
  return out;
}

struct DomainStats {
  double ss = 0.0;  // semantic(A) <-> semantic(B)
  double sb = 0.0;  // semantic(A) <-> background(B)
  double bb = 0.0;
  double bs = 0.0;
  std::size_t total = 0;
  bool empty = true;
};

inline DomainStats match_domain_stats(const MatchSet& m, const std::vector<Domain>& domains_a,
                                      const std::vector<Domain>& domains_b) {
  DomainStats st;
  std::size_t ss = 0, sb = 0, bb = 0, bs = 0;
  for (const auto& p : m.pairs) {
    if (p.a < 0 || p.b < 0 || static_cast<std::size_t>(p.a) >= domains_a.size() ||
        static_cast<std::size_t>(p.b) >= domains_b.size())
      throw ValidationError("match index without a domain label", "domains");
    const bool sa = domains_a[static_cast<std::size_t>(p.a)] == Domain::Semantic;
    const bool sbb = domains_b[static_cast<std::size_t>(p.b)] == Domain::Semantic;
    (sa ? (sbb ? ss : sb) : (sbb ? bs : bb)) += 1;
  }
  st.total = m.pairs.size();
  st.empty = st.total == 0;
  if (!st.empty) {
    const double n = static_cast<double>(st.total);
    st.ss = ss / n;
    st.sb = sb / n;
    st.bb = bb / n;
    st.bs = bs / n;
  }
  return st;
}

inline const char* domain_label(Domain d) { return d == Domain::Semantic ? "S" : "B"; }

inline nlohmann::json to_json(const MatchSet& m, const enrich::EnrichedKeypointSet& a, const enrich::EnrichedKeypointSet& b) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : m.pairs) {
    const auto ua = static_cast<std::size_t>(p.a), ub = static_cast<std::size_t>(p.b);
    pairs.push_back({{"a", p.a},
                     {"b", p.b},
                     {"score", p.score},
                     {"keypoint_a", a.combined(ua).original_index},
                     {"keypoint_b", b.combined(ub).original_index},
                     {"domain_a", domain_label(a.domain(ua))},
                     {"domain_b", domain_label(b.domain(ub))}});
  }
  return {{"frame_a", a.frame_index},
          {"frame_b", b.frame_index},
          {"pairs", pairs},
          {"unmatched_a", m.unmatched_a},
          {"unmatched_b", m.unmatched_b}};
}

}  // namespace ksi::match
