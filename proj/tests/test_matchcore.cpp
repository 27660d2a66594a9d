#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <set>

#include "ksi/matchcore.hpp"

using namespace ksi;
using namespace ksi::match;

namespace {

std::vector<double> e(int i, int dim = 4) {
  std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
  v[static_cast<std::size_t>(i)] = 1.0;
  return v;
}

MatcherConfig with(Solver s) {
  MatcherConfig c;
  c.solver = s;
  return c;
}

// Best total over every partial injection, by exhaustive search.
double brute_force_best(const ScoreMatrix& s, double min_score, std::set<std::pair<int, int>>* best_pairs) {
  const int na = static_cast<int>(s.rows()), nb = static_cast<int>(s.cols());
  double best = 0.0;
  std::vector<int> assign(static_cast<std::size_t>(na), -1);
  std::vector<char> used(static_cast<std::size_t>(nb), 0);
  std::function<void(int, double)> rec = [&](int i, double total) {
    if (i == na) {
      if (total > best + 1e-12) {
        best = total;
        best_pairs->clear();
        for (int r = 0; r < na; ++r)
          if (assign[static_cast<std::size_t>(r)] >= 0) best_pairs->insert({r, assign[static_cast<std::size_t>(r)]});
      }
      return;
    }
    assign[static_cast<std::size_t>(i)] = -1;
    rec(i + 1, total);
    for (int j = 0; j < nb; ++j) {
      if (used[static_cast<std::size_t>(j)] || s(i, j) < min_score || s(i, j) <= 0.0) continue;
      used[static_cast<std::size_t>(j)] = 1;
      assign[static_cast<std::size_t>(i)] = j;
      rec(i + 1, total + s(i, j));
      used[static_cast<std::size_t>(j)] = 0;
      assign[static_cast<std::size_t>(i)] = -1;
    }
  };
  rec(0, 0.0);
  return best;
}

std::set<std::pair<int, int>> pair_set(const MatchSet& m) {
  std::set<std::pair<int, int>> s;
  for (const auto& p : m.pairs) s.insert({p.a, p.b});
  return s;
}

ScoreMatrix random_scores(Rng& rng, int na, int nb, double lo = -0.5, double hi = 1.0) {
  ScoreMatrix s(na, nb);
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j) s(i, j) = rng.uniform(lo, hi);
  return s;
}

enrich::EnrichedKeypointSet keypoint_set(int frame, const std::vector<std::vector<double>>& background,
                                         const std::vector<std::vector<double>>& semantic) {
  enrich::EnrichedKeypointSet s;
  s.frame_index = frame;
  std::size_t k = 0;
  for (const auto& d : background) s.background.push_back({k++, {geom::Vec2::Zero(), d}});
  for (const auto& d : semantic)
    s.semantic.push_back({k++, {geom::Vec2::Zero(), d}, 1, sim::SemanticClass::Trunk});
  return s;
}

}  // namespace

TEST(Similarity, Basics) {
  EXPECT_EQ(similarity(e(0), e(0)), 1.0);
  EXPECT_EQ(similarity(e(0), e(1)), 0.0);
  EXPECT_EQ(similarity(e(2), {0, 0, -1, 0}), -1.0);
  EXPECT_THROW(similarity(e(0), e(0, 3)), ValidationError);
}

TEST(MutualNN, IdentityAndSwap) {
  const std::vector<std::vector<double>> a{e(0), e(1), e(2)};
  EXPECT_EQ(match_mutual_nn(a, a, {}).index_pairs(), (std::vector<std::pair<int, int>>{{0, 0}, {1, 1}, {2, 2}}));
  EXPECT_EQ(match_mutual_nn({e(0), e(1)}, {e(1), e(0)}, {}).index_pairs(),
            (std::vector<std::pair<int, int>>{{0, 1}, {1, 0}}));
}

TEST(MutualNN, BelowThresholdIsEmpty) {
  const auto m = match_mutual_nn({e(0), e(1)}, {e(2), e(3)}, {});
  EXPECT_TRUE(m.pairs.empty());
  EXPECT_EQ(m.unmatched_a, (std::vector<int>{0, 1}));
  EXPECT_EQ(m.unmatched_b, (std::vector<int>{0, 1}));
}

TEST(MutualNN, TiesGoToLowestIndex) {
  ScoreMatrix s(1, 2);
  s << 0.5, 0.5;
  EXPECT_EQ(match_mutual_nn(s, {}).index_pairs(), (std::vector<std::pair<int, int>>{{0, 0}}));
}

TEST(Exact, SingleAndEmpty) {
  ScoreMatrix one(1, 1);
  one << 0.7;
  EXPECT_EQ(match_exact(one, {}).pairs.size(), 1u);
  one << 0.1;
  EXPECT_TRUE(match_exact(one, {}).pairs.empty());
  EXPECT_TRUE(match_exact(ScoreMatrix(0, 3), {}).pairs.empty());
}

TEST(Exact, PrefersTotalOverGreedy) {
  // Greedy would take (0,0)=0.9 and strand row 1; the optimum is the off-diagonal.
  ScoreMatrix s(2, 2);
  s << 0.9, 0.8, 0.85, 0.1;
  EXPECT_EQ(pair_set(match_exact(s, {})), (std::set<std::pair<int, int>>{{0, 1}, {1, 0}}));
}

TEST(Exact, MatchesBruteForce) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const int na = 1 + static_cast<int>(rng.index(6)), nb = 1 + static_cast<int>(rng.index(6));
    const auto s = random_scores(rng, na, nb);
    std::set<std::pair<int, int>> want;
    const double best = brute_force_best(s, 0.2, &want);
    const auto got = match_exact(s, {});
    double total = 0;
    for (const auto& p : got.pairs) total += p.score;
    ASSERT_NEAR(total, best, 1e-9) << "trial " << trial;
    ASSERT_EQ(pair_set(got), want) << "trial " << trial;
    ASSERT_TRUE(got.at_most_once());
  }
}

TEST(Exact, SizeCap) {
  MatcherConfig c;
  c.max_cells = 10;
  EXPECT_THROW(match_exact(ScoreMatrix::Zero(4, 4), c), SizeError);
}

TEST(Solvers, PositiveScaleInvariance) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_scores(rng, 5, 6);
    MatcherConfig c, c3;
    c3.min_score = 3.0 * c.min_score;
    EXPECT_EQ(pair_set(match_exact(s, c)), pair_set(match_exact(3.0 * s, c3)));
    EXPECT_EQ(pair_set(match_mutual_nn(s, c)), pair_set(match_mutual_nn(3.0 * s, c3)));
  }
}

TEST(Solvers, AtMostOnceOnRandomInputs) {
  Rng rng(5);
  for (Solver solver : {Solver::MutualNN, Solver::ExactAssignment, Solver::Sinkhorn})
    for (int trial = 0; trial < 50; ++trial) {
      const auto m = solve(random_scores(rng, 12, 9, -1.0, 1.0), with(solver));
      ASSERT_TRUE(m.at_most_once());
      ASSERT_EQ(m.pairs.size() + m.unmatched_a.size(), 12u);
      ASSERT_EQ(m.pairs.size() + m.unmatched_b.size(), 9u);
    }
}

TEST(Sinkhorn, IdentityOnOrthonormalSets) {
  MatcherConfig c = with(Solver::Sinkhorn);
  c.sinkhorn.epsilon = 0.01;
  const std::vector<std::vector<double>> a{e(0), e(1), e(2), e(3)};
  EXPECT_EQ(match_sinkhorn(a, a, c).index_pairs(),
            (std::vector<std::pair<int, int>>{{0, 0}, {1, 1}, {2, 2}, {3, 3}}));
}

TEST(Sinkhorn, AgreesWithExactAtLowTemperature) {
  Rng rng(31);
  MatcherConfig c = with(Solver::Sinkhorn);
  // at this temperature 200 iterations leave about half the instances unconverged
  c.sinkhorn.epsilon = 1e-3;
  c.sinkhorn.iterations = 1000;
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_scores(rng, 4, 4, 0.25, 1.0);
    EXPECT_EQ(pair_set(match_sinkhorn(s, c)), pair_set(match_exact(s, {}))) << "trial " << trial;
  }
}

TEST(Sinkhorn, UnrelatedDescriptorGoesToDustbin) {
  MatcherConfig c = with(Solver::Sinkhorn);
  ScoreMatrix s(2, 2);
  s << 0.9, 0.1, -0.3, -0.2;
  const auto m = match_sinkhorn(s, c);
  EXPECT_EQ(m.index_pairs(), (std::vector<std::pair<int, int>>{{0, 0}}));
  EXPECT_EQ(m.unmatched_a, (std::vector<int>{1}));
}

TEST(Sinkhorn, MarginalsConverge) {
  Rng rng(3);
  const auto s = random_scores(rng, 7, 5, -1.0, 1.0);
  MatcherConfig c = with(Solver::Sinkhorn);
  c.sinkhorn.iterations = 500;
  const auto t = sinkhorn_transport(s, c).transport;
  for (int i = 0; i < 7; ++i) EXPECT_NEAR(t.row(i).sum(), 1.0, 1e-6);
  for (int j = 0; j < 5; ++j) EXPECT_NEAR(t.col(j).sum(), 1.0, 1e-6);
}

TEST(Sinkhorn, RejectsNaNAndBadConfig) {
  ScoreMatrix s = ScoreMatrix::Zero(2, 2);
  s(0, 1) = std::nan("");
  EXPECT_THROW(match_sinkhorn(s, with(Solver::Sinkhorn)), ValidationError);
  MatcherConfig c = with(Solver::Sinkhorn);
  c.sinkhorn.epsilon = 0.0;
  EXPECT_THROW(match_sinkhorn(ScoreMatrix::Zero(2, 2), c), ValidationError);
}

TEST(MatchPair, ModesAgreeOnSingleDomain) {
  const auto bg_a = keypoint_set(0, {e(0), e(1), e(2)}, {}), bg_b = keypoint_set(1, {e(2), e(0)}, {});
  EXPECT_EQ(match_pair(bg_a, bg_b, MatchMode::Heterogeneous, {}).pairs,
            match_pair(bg_a, bg_b, MatchMode::Homogeneous, {}).pairs);
  const auto s_a = keypoint_set(0, {}, {e(0), e(1)}), s_b = keypoint_set(1, {}, {e(1), e(3), e(0)});
  EXPECT_EQ(match_pair(s_a, s_b, MatchMode::Heterogeneous, {}).pairs,
            match_pair(s_a, s_b, MatchMode::Homogeneous, {}).pairs);
}

TEST(MatchPair, OnlyHeterogeneousCrossesDomains) {
  // A's semantic keypoint looks exactly like B's background keypoint.
  const auto a = keypoint_set(0, {e(1)}, {e(0)}), b = keypoint_set(1, {e(0)}, {e(2)});
  const auto het = match_pair(a, b, MatchMode::Heterogeneous, {});
  const auto hom = match_pair(a, b, MatchMode::Homogeneous, {});
  EXPECT_EQ(het.index_pairs(), (std::vector<std::pair<int, int>>{{1, 0}}));
  EXPECT_TRUE(hom.pairs.empty());
  const auto st = match_domain_stats(het, a.domains(), b.domains());
  EXPECT_EQ(st.sb, 1.0);
}

TEST(MatchPair, ExactIsSymmetric) {
  Rng rng(77);
  auto rnd = [&](int n) {
    std::vector<std::vector<double>> v;
    for (int i = 0; i < n; ++i) {
      std::vector<double> d(8);
      for (auto& x : d) x = rng.normal();
      v.push_back(enrich::l2_normalized(d));
    }
    return v;
  };
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = keypoint_set(0, rnd(5), rnd(3)), b = keypoint_set(1, rnd(4), rnd(4));
    MatcherConfig c;
    c.min_score = 0.0;
    for (MatchMode mode : {MatchMode::Heterogeneous, MatchMode::Homogeneous}) {
      std::set<std::pair<int, int>> fwd = pair_set(match_pair(a, b, mode, c)), back;
      for (const auto& p : match_pair(b, a, mode, c).pairs) back.insert({p.b, p.a});
      EXPECT_EQ(fwd, back);
    }
  }
}

TEST(DomainStats, HandCount) {
  // A = [B, B, S, S], B = [B, B, S, S]
  const std::vector<Domain> da{Domain::Background, Domain::Background, Domain::Semantic, Domain::Semantic};
  MatchSet m;
  m.pairs = {{0, 0, 1}, {1, 2, 1}, {2, 3, 1}, {3, 1, 1}};
  const auto st = match_domain_stats(m, da, da);
  EXPECT_EQ(st.bb, 0.25);
  EXPECT_EQ(st.bs, 0.25);
  EXPECT_EQ(st.ss, 0.25);
  EXPECT_EQ(st.sb, 0.25);
  EXPECT_EQ(st.ss + st.sb + st.bb + st.bs, 1.0);

  m.pairs = {{0, 0, 1}, {1, 1, 1}};
  EXPECT_EQ(match_domain_stats(m, da, da).bb, 1.0);
}

TEST(DomainStats, EmptyIsFlagged) {
  const auto st = match_domain_stats({}, {}, {});
  EXPECT_TRUE(st.empty);
  EXPECT_EQ(st.ss + st.sb + st.bb + st.bs, 0.0);
}

TEST(MatchSet, JsonCarriesDomains) {
  const auto a = keypoint_set(4, {e(1)}, {e(0)}), b = keypoint_set(5, {e(0)}, {e(2)});
  const auto j = to_json(match_pair(a, b, MatchMode::Heterogeneous, {}), a, b);
  EXPECT_EQ(j.at("frame_a"), 4);
  EXPECT_EQ(j.at("pairs")[0].at("domain_a"), "S");
  EXPECT_EQ(j.at("pairs")[0].at("domain_b"), "B");
}
