#include <gtest/gtest.h>

#include <sstream>

#include "posdec/forest.hpp"

using namespace posdec;

namespace {

struct Dataset {
  Matrix<double> x;
  std::vector<int> y;
};

// Label k shifts feature 0 by k; other features are pure noise.
Dataset planted(std::size_t n, std::size_t p, int classes, std::uint64_t seed, double noise = 0.3) {
  Dataset d{Matrix<double>(n, p), std::vector<int>(n)};
  Rng rng = seeded_rng(seed, 0);
  for (std::size_t r = 0; r < n; ++r) {
    d.y[r] = static_cast<int>(r % static_cast<std::size_t>(classes)) + 1;
    for (std::size_t c = 0; c < p; ++c) d.x(r, c) = rng.normal();
    d.x(r, 0) = d.y[r] + noise * rng.normal();
  }
  return d;
}

double weighted_gini(const std::vector<int>& labels, int classes) {
  if (labels.empty()) return 0;
  std::vector<double> c(classes + 1, 0);
  for (int y : labels) c[y] += 1;
  double g = 1;
  for (double v : c) g -= (v / labels.size()) * (v / labels.size());
  return g;
}

struct OracleSplit {
  bool found = false;
  std::size_t feature = 0;
  double threshold = 0;
};

// Every feature, every midpoint between distinct sorted values, impurity drop
// n*G(parent) - nl*G(left) - nr*G(right); earliest (feature, threshold) wins.
OracleSplit oracle_split(const Matrix<double>& x, const std::vector<int>& y, const std::vector<std::size_t>& rows,
                         int classes) {
  std::vector<int> all;
  for (auto r : rows) all.push_back(y[r]);
  const double parent = weighted_gini(all, classes) * rows.size();
  OracleSplit best;
  double best_gain = 1e-9;
  for (std::size_t f = 0; f < x.cols(); ++f) {
    std::vector<double> vals;
    for (auto r : rows) vals.push_back(x(r, f));
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
      const double t = 0.5 * (vals[i] + vals[i + 1]);
      std::vector<int> l, r;
      for (auto row : rows) (x(row, f) <= t ? l : r).push_back(y[row]);
      const double gain = parent - weighted_gini(l, classes) * l.size() - weighted_gini(r, classes) * r.size();
      if (gain > best_gain * (1 + 1e-9) + 1e-12) best = {true, f, t}, best_gain = gain;
    }
  }
  return best;
}

int oracle_predict(const Matrix<double>& x, const std::vector<int>& y, std::vector<std::size_t> rows, int classes,
                   std::span<const double> q) {
  for (;;) {
    const auto s = oracle_split(x, y, rows, classes);
    if (!s.found) return y[rows.front()];
    std::vector<std::size_t> next;
    const bool left = q[s.feature] <= s.threshold;
    for (auto r : rows)
      if ((x(r, s.feature) <= s.threshold) == left) next.push_back(r);
    rows = next;
  }
}

}  // namespace

TEST(Forest, MtryDefault) {
  EXPECT_EQ(mtry_default(1), 1u);
  EXPECT_EQ(mtry_default(84), 9u);
  EXPECT_EQ(mtry_default(8904), 94u);
  EXPECT_EQ(mtry_default(100), 10u);
  EXPECT_THROW(mtry_default(0), ConfigError);
}

TEST(Forest, BootstrapShape) {
  Rng rng = seeded_rng(1, 1);
  double oob_frac = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const auto s = bootstrap_sample(500, rng);
    ASSERT_EQ(s.bag.size(), 500u);
    for (auto r : s.oob) ASSERT_EQ(std::count(s.bag.begin(), s.bag.end(), r), 0);
    oob_frac += s.oob.size() / 500.0;
  }
  EXPECT_NEAR(oob_frac / 200, std::pow(1 - 1.0 / 500, 500), 0.005);
}

TEST(Forest, FeatureSamplingIsDistinctAndUniform) {
  Rng rng = seeded_rng(2, 2);
  std::vector<int> hits(20, 0);
  for (int i = 0; i < 20000; ++i) {
    const auto s = detail::sample_features(20, 4, rng);
    ASSERT_EQ(s.size(), 4u);
    ASSERT_TRUE(std::adjacent_find(s.begin(), s.end()) == s.end());
    for (auto f : s) ++hits[f];
  }
  for (int h : hits) EXPECT_NEAR(h / 20000.0, 0.2, 0.015);
}

TEST(Forest, TieBreakIsUniform) {
  Rng rng = seeded_rng(3, 3);
  const std::vector<std::uint32_t> counts = {4, 0, 4, 1, 4, 0, 0, 0, 0};
  std::map<int, int> freq;
  for (int i = 0; i < 30000; ++i) ++freq[detail::majority_label(counts, rng)];
  ASSERT_EQ(freq.size(), 3u);
  for (int k : {1, 3, 5}) EXPECT_NEAR(freq[k] / 30000.0, 1.0 / 3, 0.015);
}

TEST(Forest, GiniDecreaseMatchesWeightedImpurity) {
  const std::vector<std::uint32_t> l = {3, 1, 0}, r = {0, 2, 4};
  const double n = 10;
  auto g = [](std::vector<double> c) {
    double t = 0, s = 0;
    for (double v : c) t += v;
    for (double v : c) s += (v / t) * (v / t);
    return 1 - s;
  };
  const double expect = g({3, 3, 4}) - 0.4 * g({3, 1, 0}) - 0.6 * g({0, 2, 4});
  EXPECT_NEAR(gini_decrease(l, r), expect, 1e-12);
  (void)n;
}

TEST(Forest, SeparableDataGrowsPureTree) {
  const auto d = planted(90, 3, 9, 4, 0.01);
  std::vector<std::size_t> rows(90);
  std::iota(rows.begin(), rows.end(), 0);
  Rng rng = seeded_rng(4, 4);
  const auto tree = grow_tree(ColumnData(d.x), d.y, rows, {3, 1, 0, 9}, rng);
  for (std::size_t r = 0; r < 90; ++r) EXPECT_EQ(tree.predict(d.x.row(r)), d.y[r]);
}

TEST(Forest, RootSplitMatchesExhaustiveSearch) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng gen = seeded_rng(100 + seed, 0);
    const std::size_t n = 8 + gen.uniform_index(20), p = 1 + gen.uniform_index(4);
    Matrix<double> x(n, p);
    std::vector<int> y(n);
    for (std::size_t r = 0; r < n; ++r) {
      y[r] = 1 + static_cast<int>(gen.uniform_index(3));
      for (std::size_t c = 0; c < p; ++c) x(r, c) = std::round(gen.uniform(0, 6));  // many duplicate values
    }
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    Rng rng = seeded_rng(5, seed);
    const auto tree = grow_tree(ColumnData(x), y, rows, {p, 1, 1, 3}, rng);
    const auto o = oracle_split(x, y, rows, 3);
    ASSERT_EQ(!tree.nodes()[0].is_leaf(), o.found) << seed;
    if (o.found) {
      EXPECT_EQ(static_cast<std::size_t>(tree.nodes()[0].feature), o.feature) << seed;
      EXPECT_DOUBLE_EQ(tree.nodes()[0].threshold, o.threshold) << seed;
    }
  }
}

TEST(Forest, FullTreeMatchesRecursiveOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng gen = seeded_rng(200 + seed, 0);
    const std::size_t n = 40, p = 3;
    Matrix<double> x(n, p);
    std::vector<int> y(n);
    for (std::size_t r = 0; r < n; ++r) {
      y[r] = 1 + static_cast<int>(gen.uniform_index(4));
      for (std::size_t c = 0; c < p; ++c) x(r, c) = gen.normal();  // distinct rows, so leaves are pure
    }
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    Rng rng = seeded_rng(6, seed);
    const auto tree = grow_tree(ColumnData(x), y, rows, {p, 1, 0, 4}, rng);
    for (int q = 0; q < 200; ++q) {
      const std::vector<double> row = {gen.normal(), gen.normal(), gen.normal()};
      ASSERT_EQ(tree.predict(row), oracle_predict(x, y, rows, 4, row)) << seed << ' ' << q;
    }
  }
}

TEST(Forest, VotesSumToTreeCount) {
  const auto d = planted(180, 6, 9, 7);
  ForestParams p;
  p.n_trees = 37;
  const auto f = train_forest(d.x, d.y, p);
  for (std::size_t r = 0; r < 20; ++r) {
    const auto v = f.votes(d.x.row(r));
    EXPECT_EQ(std::accumulate(v.begin(), v.end(), 0u), 37u);
  }
  EXPECT_THROW(f.votes(std::vector<double>(5, 0.0)), DataError);
}

TEST(Forest, ThreadCountDoesNotChangeModel) {
  const auto d = planted(270, 10, 9, 8);
  ForestParams p;
  p.n_trees = 40;
  p.threads = 1;
  const auto a = train_forest(d.x, d.y, p);
  p.threads = 4;
  const auto b = train_forest(d.x, d.y, p);
  EXPECT_EQ(a.trees(), b.trees());
  const auto ia = permutation_importance(a, d.x, d.y, PermutationMode::random, 1);
  const auto ib = permutation_importance(b, d.x, d.y, PermutationMode::random, 3);
  EXPECT_EQ(ia.score, ib.score);
}

TEST(Forest, ShuffledLabelsGiveChanceOobError) {
  auto d = planted(450, 12, 9, 9);
  Rng rng = seeded_rng(9, 9);
  rng.shuffle(std::span(d.y));
  ForestParams p;
  p.n_trees = 150;
  const auto f = train_forest(d.x, d.y, p);
  EXPECT_NEAR(oob_error(f, d.x, d.y).error, 8.0 / 9.0, 0.05);
}

TEST(Forest, OobErrorTracksHoldoutError) {
  const auto train = planted(450, 8, 9, 10, 0.8);
  const auto test = planted(900, 8, 9, 11, 0.8);
  ForestParams p;
  p.n_trees = 200;
  const auto f = train_forest(train.x, train.y, p);
  const double oob = oob_error(f, train.x, train.y).error;
  Rng rng = seeded_rng(1, 1);
  std::size_t wrong = 0;
  for (std::size_t r = 0; r < test.x.rows(); ++r) wrong += f.predict(test.x.row(r), rng) != test.y[r];
  EXPECT_NEAR(oob, static_cast<double>(wrong) / 900.0, 0.06);
}

TEST(Forest, PlantedFeatureDominatesImportance) {
  const auto d = planted(360, 10, 9, 12, 0.4);
  ForestParams p;
  p.n_trees = 150;
  const auto f = train_forest(d.x, d.y, p);
  const auto imp = permutation_importance(f, d.x, d.y);
  ASSERT_TRUE(imp.percent_defined);
  double other = 0;
  for (std::size_t c = 1; c < 10; ++c) other = std::max(other, std::abs(imp.score[c]));
  EXPECT_GE(imp.score[0], 5.0 * other);
  EXPECT_NEAR(imp.score[0], 100.0 * imp.raw_increase[0] / imp.baseline_oob, 1e-9);
}

TEST(Forest, IdentityPermutationGivesZeroImportance) {
  const auto d = planted(180, 5, 9, 13);
  ForestParams p;
  p.n_trees = 30;
  const auto f = train_forest(d.x, d.y, p);
  const auto imp = permutation_importance(f, d.x, d.y, PermutationMode::identity);
  for (double v : imp.raw_increase) EXPECT_EQ(v, 0.0);
}

TEST(Forest, SerializationRoundTrip) {
  const auto d = planted(180, 7, 9, 14);
  ForestParams p;
  p.n_trees = 25;
  p.seed = 99;
  const auto f = train_forest(d.x, d.y, p);
  std::stringstream buf;
  write_forest(buf, f);
  const auto g = read_forest(buf);
  EXPECT_EQ(g.trees(), f.trees());
  EXPECT_EQ(g.mtry(), f.mtry());
  for (std::size_t t = 0; t < 25; ++t) EXPECT_EQ(g.oob_rows(t), f.oob_rows(t));
  EXPECT_EQ(oob_error(g, d.x, d.y).error, oob_error(f, d.x, d.y).error);
  std::stringstream again;
  write_forest(again, g);
  std::stringstream first;
  write_forest(first, f);
  EXPECT_EQ(again.str(), first.str());
}

TEST(Forest, CorruptFileIsRejected) {
  std::stringstream bad("PDRX....");
  EXPECT_THROW(read_forest(bad), DataError);
  const auto d = planted(90, 3, 9, 15);
  ForestParams p;
  p.n_trees = 3;
  std::stringstream buf;
  write_forest(buf, train_forest(d.x, d.y, p));
  std::string s = buf.str();
  std::stringstream truncated(s.substr(0, s.size() - 5));
  EXPECT_THROW(read_forest(truncated), DataError);
}

TEST(Forest, InvalidParameters) {
  const auto d = planted(18, 3, 9, 16);
  ForestParams p;
  p.n_trees = 0;
  EXPECT_THROW(train_forest(d.x, d.y, p), ConfigError);
  p.n_trees = 2;
  std::vector<int> short_y(3, 1);
  EXPECT_THROW(train_forest(d.x, short_y, p), DataError);
}
