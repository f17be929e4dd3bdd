#pragma once

// Random forest classifier: bagging, mtry random split candidates per node,
// Gini impurity splits grown to purity, majority vote with random tie-break,
// out-of-bag error, and per-tree out-of-bag permutation importance.
//
// Every random draw is tied to (forest seed, stream): tree t bootstraps from
// stream (bootstrap, t), grows from (grow, t) and permutes from
// (importance, t), so results are independent of the thread count.

#include <numeric>

#include "posdec/binary_io.hpp"

namespace posdec {

/// floor(sqrt(p)), at least 1.
inline std::size_t mtry_default(std::size_t p) {
  if (p == 0) throw ConfigError("mtry_default: feature count must be >= 1");
  auto r = static_cast<std::size_t>(std::sqrt(static_cast<double>(p)));
  while (r * r > p) --r;
  while ((r + 1) * (r + 1) <= p) ++r;
  return std::max<std::size_t>(1, r);
}

struct ForestParams {
  std::size_t n_trees = 900;
  std::size_t mtry = 0;       ///< 0 selects mtry_default(p)
  std::size_t min_leaf = 1;   ///< minimum rows (bag multiplicity counted) per child
  std::size_t max_depth = 0;  ///< 0 = unlimited
  std::uint64_t seed = 1;
  int n_classes = kNumKeys;   ///< labels are 1..n_classes
  unsigned threads = 1;       ///< does not affect results
};

struct TreeNode {
  std::int32_t feature = -1;  ///< -1 marks a leaf
  double threshold = 0.0;     ///< rows with value <= threshold go left
  std::uint32_t right = 0;    ///< left child is always this node + 1 (preorder)
  std::int32_t label = 0;     ///< leaf class

  bool is_leaf() const noexcept { return feature < 0; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

class DecisionTree {
 public:
  DecisionTree() = default;
  explicit DecisionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Leaf label for a row given through `value(feature)`.
  template <class ValueFn>
  int predict_with(ValueFn&& value) const {
    std::size_t i = 0;
    while (!nodes_[i].is_leaf()) {
      const auto& n = nodes_[i];
      i = value(static_cast<std::size_t>(n.feature)) <= n.threshold ? i + 1 : n.right;
    }
    return nodes_[i].label;
  }

  int predict(std::span<const double> row) const {
    return predict_with([&](std::size_t f) { return row[f]; });
  }

  /// Sorted distinct split features.
  std::vector<std::size_t> used_features() const {
    std::vector<std::size_t> out;
    for (const auto& n : nodes_) {
      if (!n.is_leaf()) out.push_back(static_cast<std::size_t>(n.feature));
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  std::size_t depth() const {
    std::size_t best = 0;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
    while (!stack.empty()) {
      auto [i, d] = stack.back();
      stack.pop_back();
      best = std::max(best, d);
      if (!nodes_[i].is_leaf()) {
        stack.emplace_back(i + 1, d + 1);
        stack.emplace_back(nodes_[i].right, d + 1);
      }
    }
    return best;
  }

  friend bool operator==(const DecisionTree&, const DecisionTree&) = default;

 private:
  std::vector<TreeNode> nodes_;
};

// ---------------------------------------------------------------------------

struct BootstrapSample {
  std::vector<std::size_t> bag;  ///< n_rows draws with replacement, in draw order
  std::vector<std::size_t> oob;  ///< rows never drawn, ascending
};

inline BootstrapSample bootstrap_sample(std::size_t n_rows, Rng& rng) {
  if (n_rows == 0) throw DataError("bootstrap_sample: no rows");
  BootstrapSample s;
  s.bag.resize(n_rows);
  std::vector<std::uint8_t> drawn(n_rows, 0);
  for (auto& r : s.bag) {
    r = rng.uniform_index(n_rows);
    drawn[r] = 1;
  }
  for (std::size_t r = 0; r < n_rows; ++r) {
    if (!drawn[r]) s.oob.push_back(r);
  }
  return s;
}

/// Column-major copy of a training matrix; split search reads columns.
class ColumnData {
 public:
  ColumnData() = default;
  explicit ColumnData(const Matrix<double>& rows) : n_rows_(rows.rows()), n_cols_(rows.cols()) {
    data_.resize(n_rows_ * n_cols_);
    for (std::size_t r = 0; r < n_rows_; ++r) {
      for (std::size_t c = 0; c < n_cols_; ++c) data_[c * n_rows_ + r] = rows(r, c);
    }
  }
  std::size_t rows() const noexcept { return n_rows_; }
  std::size_t cols() const noexcept { return n_cols_; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[c * n_rows_ + r]; }

 private:
  std::size_t n_rows_ = 0;
  std::size_t n_cols_ = 0;
  std::vector<double> data_;
};

struct GrowOptions {
  std::size_t mtry = 1;
  std::size_t min_leaf = 1;
  std::size_t max_depth = 0;
  int n_classes = kNumKeys;
};

namespace detail {

// Distinct uniform sample of k indices from [0, n), returned ascending
// (Floyd's algorithm).
inline std::vector<std::size_t> sample_features(std::size_t n, std::size_t k, Rng& rng) {
  if (k >= n) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  std::vector<std::size_t> chosen;
  chosen.reserve(k);
  for (std::size_t j = n - k; j < n; ++j) {
    const std::size_t t = rng.uniform_index(j + 1);
    if (std::find(chosen.begin(), chosen.end(), t) == chosen.end()) {
      chosen.push_back(t);
    } else {
      chosen.push_back(j);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

inline int majority_label(std::span<const std::uint32_t> counts, Rng& rng) {
  std::uint32_t best = 0;
  for (auto c : counts) best = std::max(best, c);
  std::vector<int> tied;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == best) tied.push_back(static_cast<int>(k) + 1);
  }
  return tied.size() == 1 ? tied.front() : tied[rng.uniform_index(tied.size())];
}

/// Split decreases closer than this are ties.
inline constexpr double kSplitTolerance = 1e-12;

}  // namespace detail

/// Gini decrease of a split, per row: (sum l_k^2/n_l + sum r_k^2/n_r - sum p_k^2/n) / n.
inline double gini_decrease(std::span<const std::uint32_t> left, std::span<const std::uint32_t> right) {
  double nl = 0, nr = 0, sl = 0, sr = 0, sp = 0;
  for (std::size_t k = 0; k < left.size(); ++k) {
    const double l = left[k], r = right[k];
    nl += l;
    nr += r;
    sl += l * l;
    sr += r * r;
    sp += (l + r) * (l + r);
  }
  if (nl == 0 || nr == 0) return 0.0;
  const double n = nl + nr;
  return (sl / nl + sr / nr - sp / n) / n;
}

/// Grows one unpruned tree on the multiset `rows` (bag order is irrelevant).
/// Candidate features are scanned in ascending index order and thresholds in
/// ascending order; the first best split wins ties.
inline DecisionTree grow_tree(const ColumnData& x, std::span<const int> labels,
                              std::vector<std::size_t> rows, const GrowOptions& opt, Rng& rng) {
  if (rows.empty()) throw DataError("grow_tree: no rows");
  if (opt.mtry < 1) throw ConfigError("grow_tree: mtry must be >= 1");
  const auto k_classes = static_cast<std::size_t>(opt.n_classes);
  const std::size_t min_leaf = std::max<std::size_t>(1, opt.min_leaf);

  struct Pending {
    std::size_t begin, end, depth, parent;
    bool is_right;
  };
  constexpr std::size_t kNoParent = static_cast<std::size_t>(-1);
  std::vector<TreeNode> nodes;
  std::vector<Pending> stack{{0, rows.size(), 0, kNoParent, false}};
  std::vector<std::pair<double, std::uint32_t>> buf;
  std::vector<std::uint32_t> counts(k_classes), left(k_classes), right(k_classes);

  while (!stack.empty()) {
    const Pending item = stack.back();
    stack.pop_back();
    const std::size_t index = nodes.size();
    if (item.parent != kNoParent && item.is_right) {
      nodes[item.parent].right = static_cast<std::uint32_t>(index);
    }
    nodes.emplace_back();

    std::fill(counts.begin(), counts.end(), 0u);
    for (std::size_t i = item.begin; i < item.end; ++i) {
      const int y = labels[rows[i]];
      if (y < 1 || y > opt.n_classes) throw DataError("grow_tree: label outside class range");
      ++counts[static_cast<std::size_t>(y - 1)];
    }
    const std::size_t n = item.end - item.begin;
    const bool pure = std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }) <= 1;
    const bool depth_capped = opt.max_depth != 0 && item.depth >= opt.max_depth;

    bool split = false;
    std::size_t best_feature = 0;
    double best_threshold = 0.0;
    double best_gain = detail::kSplitTolerance;
    if (!pure && !depth_capped && n >= 2 * min_leaf) {
      std::uint64_t parent_sq = 0;
      for (auto c : counts) parent_sq += static_cast<std::uint64_t>(c) * c;
      const double dn = static_cast<double>(n);
      for (std::size_t f : detail::sample_features(x.cols(), opt.mtry, rng)) {
        buf.clear();
        for (std::size_t i = item.begin; i < item.end; ++i) {
          buf.emplace_back(x(rows[i], f), static_cast<std::uint32_t>(labels[rows[i]] - 1));
        }
        std::sort(buf.begin(), buf.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        if (buf.front().first == buf.back().first) continue;
        std::fill(left.begin(), left.end(), 0u);
        std::copy(counts.begin(), counts.end(), right.begin());
        std::uint64_t sq_left = 0, sq_right = parent_sq;
        for (std::size_t i = 0; i + 1 < n; ++i) {
          const auto k = buf[i].second;
          sq_left += 2ull * left[k] + 1;
          sq_right -= 2ull * right[k] - 1;
          ++left[k];
          --right[k];
          if (buf[i].first == buf[i + 1].first) continue;
          const std::size_t nl = i + 1, nr = n - nl;
          if (nl < min_leaf || nr < min_leaf) continue;
          const double gain = (static_cast<double>(sq_left) / static_cast<double>(nl) +
                               static_cast<double>(sq_right) / static_cast<double>(nr) -
                               static_cast<double>(parent_sq) / dn) /
                              dn;
          if (gain > best_gain + (split ? detail::kSplitTolerance : 0.0)) {
            const double a = buf[i].first, b = buf[i + 1].first;
            double t = a + (b - a) / 2.0;
            if (!(t < b)) t = a;
            split = true;
            best_gain = gain;
            best_feature = f;
            best_threshold = t;
          }
        }
      }
    }

    if (!split) {
      nodes[index].label = detail::majority_label(counts, rng);
      continue;
    }
    const auto mid = std::partition(
        rows.begin() + static_cast<std::ptrdiff_t>(item.begin),
        rows.begin() + static_cast<std::ptrdiff_t>(item.end),
        [&](std::size_t r) { return x(r, best_feature) <= best_threshold; });
    const auto m = static_cast<std::size_t>(mid - rows.begin());
    nodes[index].feature = static_cast<std::int32_t>(best_feature);
    nodes[index].threshold = best_threshold;
    stack.push_back({m, item.end, item.depth + 1, index, true});
    stack.push_back({item.begin, m, item.depth + 1, index, false});
  }
  return DecisionTree(std::move(nodes));
}

// ---------------------------------------------------------------------------

class Forest {
 public:
  Forest() = default;

  const ForestParams& params() const noexcept { return params_; }
  std::size_t n_features() const noexcept { return n_features_; }
  std::size_t n_train_rows() const noexcept { return n_rows_; }
  std::size_t mtry() const noexcept { return mtry_; }
  const std::vector<DecisionTree>& trees() const noexcept { return trees_; }

  /// Bootstrap multiplicity of training row r in tree t (saturates at 255).
  std::uint8_t bag_count(std::size_t t, std::size_t r) const { return bag_counts_[t][r]; }
  bool is_oob(std::size_t t, std::size_t r) const { return bag_counts_[t][r] == 0; }

  std::vector<std::size_t> oob_rows(std::size_t t) const {
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < n_rows_; ++r) {
      if (bag_counts_[t][r] == 0) out.push_back(r);
    }
    return out;
  }

  std::vector<std::uint32_t> votes(std::span<const double> row) const {
    check_width(row.size());
    std::vector<std::uint32_t> v(static_cast<std::size_t>(params_.n_classes), 0);
    for (const auto& tree : trees_) ++v[static_cast<std::size_t>(tree.predict(row) - 1)];
    return v;
  }

  /// Majority vote; a tie is resolved uniformly at random from `rng`.
  int predict(std::span<const double> row, Rng& rng) const {
    const auto v = votes(row);
    return detail::majority_label(v, rng);
  }

  void check_width(std::size_t width) const {
    if (width != n_features_) {
      throw DataError("forest: row has " + std::to_string(width) + " features, model expects " +
                      std::to_string(n_features_));
    }
  }

  /// Regenerates the bootstrap bags from the seed (bags are not stored on disk).
  void rebuild_bags() {
    bag_counts_.assign(trees_.size(), std::vector<std::uint8_t>(n_rows_, 0));
    for (std::size_t t = 0; t < trees_.size(); ++t) {
      Rng rng(params_.seed, stream_id(StreamDomain::bootstrap, t));
      const auto s = bootstrap_sample(n_rows_, rng);
      for (std::size_t r : s.bag) {
        if (bag_counts_[t][r] < 255) ++bag_counts_[t][r];
      }
    }
  }

  friend Forest train_forest(const Matrix<double>&, std::span<const int>, const ForestParams&);
  friend Forest read_forest(std::istream&, const std::string&);

 private:
  ForestParams params_;
  std::size_t n_features_ = 0;
  std::size_t n_rows_ = 0;
  std::size_t mtry_ = 1;
  std::vector<DecisionTree> trees_;
  std::vector<std::vector<std::uint8_t>> bag_counts_;
};

inline Forest train_forest(const Matrix<double>& x, std::span<const int> labels, const ForestParams& params) {
  if (x.rows() == 0 || x.cols() == 0) throw DataError("train_forest: empty training matrix");
  if (labels.size() != x.rows()) throw DataError("train_forest: label count differs from row count");
  if (params.n_trees == 0) throw ConfigError("train_forest: n_trees must be >= 1");
  if (params.n_classes < 2) throw ConfigError("train_forest: need at least 2 classes");
  Forest forest;
  forest.params_ = params;
  forest.n_features_ = x.cols();
  forest.n_rows_ = x.rows();
  forest.mtry_ = params.mtry == 0 ? mtry_default(x.cols()) : std::min(params.mtry, x.cols());
  forest.trees_.resize(params.n_trees);
  forest.rebuild_bags();

  const ColumnData columns(x);
  const GrowOptions opt{forest.mtry_, params.min_leaf, params.max_depth, params.n_classes};
  parallel_for(params.n_trees, params.threads, [&](std::size_t t) {
    Rng bag_rng(params.seed, stream_id(StreamDomain::bootstrap, t));
    auto sample = bootstrap_sample(x.rows(), bag_rng);
    Rng grow_rng(params.seed, stream_id(StreamDomain::grow, t));
    forest.trees_[t] = grow_tree(columns, labels, std::move(sample.bag), opt, grow_rng);
  });
  return forest;
}

struct OobResult {
  double error = 0.0;
  std::size_t counted = 0;  ///< rows with at least one OOB vote
  std::size_t misclassified = 0;
};

/// Each row is voted on only by the trees that did not draw it. Rows without
/// any such tree are left out of the denominator.
inline OobResult oob_error(const Forest& forest, const Matrix<double>& x, std::span<const int> labels) {
  if (x.rows() != forest.n_train_rows() || labels.size() != x.rows()) {
    throw DataError("oob_error: data does not match the forest's training rows");
  }
  forest.check_width(x.cols());
  OobResult res;
  std::vector<std::uint32_t> v(static_cast<std::size_t>(forest.params().n_classes));
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::fill(v.begin(), v.end(), 0u);
    bool any = false;
    for (std::size_t t = 0; t < forest.trees().size(); ++t) {
      if (!forest.is_oob(t, r)) continue;
      any = true;
      ++v[static_cast<std::size_t>(forest.trees()[t].predict(x.row(r)) - 1)];
    }
    if (!any) continue;
    Rng rng(forest.params().seed, stream_id(StreamDomain::oob, r));
    ++res.counted;
    if (detail::majority_label(v, rng) != labels[r]) ++res.misclassified;
  }
  if (res.counted == 0) throw NumericError("oob_error: no row has an out-of-bag vote");
  res.error = static_cast<double>(res.misclassified) / static_cast<double>(res.counted);
  return res;
}

enum class PermutationMode {
  random,
  identity,  ///< test hook: leaves the OOB order unchanged
};

struct PermutationImportance {
  std::vector<double> score;         ///< percent of the baseline OOB error (raw when undefined)
  std::vector<double> raw_increase;  ///< mean over trees of the per-tree OOB error increase
  double baseline_oob = 0.0;         ///< forest OOB error
  bool percent_defined = true;       ///< false when baseline_oob == 0
};

/// Breiman's per-tree importance: for every tree and every feature the tree
/// splits on, shuffle that feature among the tree's OOB rows and record the
/// increase of the tree's OOB error. Per-feature score is the mean increase
/// over all trees (unused features contribute 0), divided by the forest OOB
/// error and expressed in percent.
inline PermutationImportance permutation_importance(const Forest& forest, const Matrix<double>& x,
                                                    std::span<const int> labels,
                                                    PermutationMode mode = PermutationMode::random,
                                                    unsigned threads = 1) {
  PermutationImportance res;
  res.baseline_oob = oob_error(forest, x, labels).error;
  const std::size_t n_trees = forest.trees().size();
  std::vector<std::vector<std::pair<std::size_t, double>>> per_tree(n_trees);
  parallel_for(n_trees, threads, [&](std::size_t t) {
    const auto& tree = forest.trees()[t];
    const auto oob = forest.oob_rows(t);
    if (oob.empty()) return;
    std::size_t base_wrong = 0;
    for (std::size_t r : oob) base_wrong += tree.predict(x.row(r)) != labels[r];
    const double n = static_cast<double>(oob.size());
    Rng rng(forest.params().seed, stream_id(StreamDomain::importance, t));
    std::vector<std::size_t> perm;
    for (std::size_t f : tree.used_features()) {
      perm = oob;
      if (mode == PermutationMode::random) rng.shuffle(std::span(perm));
      std::size_t wrong = 0;
      for (std::size_t i = 0; i < oob.size(); ++i) {
        const auto row = x.row(oob[i]);
        const double swapped = x(perm[i], f);
        const int pred = tree.predict_with([&](std::size_t g) { return g == f ? swapped : row[g]; });
        wrong += pred != labels[oob[i]];
      }
      per_tree[t].emplace_back(f, (static_cast<double>(wrong) - static_cast<double>(base_wrong)) / n);
    }
  });
  res.raw_increase.assign(x.cols(), 0.0);
  for (const auto& entries : per_tree) {
    for (auto [f, inc] : entries) res.raw_increase[f] += inc;
  }
  for (double& v : res.raw_increase) v /= static_cast<double>(n_trees);
  res.percent_defined = res.baseline_oob > 0.0;
  res.score.resize(x.cols());
  for (std::size_t f = 0; f < x.cols(); ++f) {
    res.score[f] = 100.0 * (res.percent_defined ? res.raw_increase[f] / res.baseline_oob
                                                : res.raw_increase[f]);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Model file (".pdrf"), little-endian:
//
//   char[4] "PDRF", u32 version (1)
//   u64 seed, u64 n_trees, u64 mtry, u64 min_leaf, u64 max_depth
//   u64 n_features, u32 n_classes, i32 labels[n_classes], u64 n_train_rows
//   per tree: u32 node count, nodes in preorder:
//     u8 0 (leaf) + i32 label | u8 1 (split) + u32 feature + f64 threshold
//
// Bootstrap bags are regenerated from the seed on load.

inline constexpr std::uint32_t kForestVersion = 1;

inline void write_forest(std::ostream& out, const Forest& forest) {
  io::Writer w(out);
  const auto& p = forest.params();
  w.bytes("PDRF");
  w.u32(kForestVersion);
  w.u64(p.seed);
  w.u64(forest.trees().size());
  w.u64(forest.mtry());
  w.u64(p.min_leaf);
  w.u64(p.max_depth);
  w.u64(forest.n_features());
  w.u32(static_cast<std::uint32_t>(p.n_classes));
  for (int k = 1; k <= p.n_classes; ++k) w.i32(k);
  w.u64(forest.n_train_rows());
  for (const auto& tree : forest.trees()) {
    w.u32(static_cast<std::uint32_t>(tree.size()));
    for (const auto& n : tree.nodes()) {
      if (n.is_leaf()) {
        w.u8(0);
        w.i32(n.label);
      } else {
        w.u8(1);
        w.u32(static_cast<std::uint32_t>(n.feature));
        w.f64(n.threshold);
      }
    }
  }
}

inline Forest read_forest(std::istream& in, const std::string& what = "forest") {
  io::Reader r(in, what);
  r.expect_magic("PDRF");
  if (const auto v = r.u32(); v != kForestVersion) throw DataError(what + ": unsupported version " + std::to_string(v));
  Forest f;
  f.params_.seed = r.u64();
  f.params_.n_trees = r.u64();
  f.mtry_ = r.u64();
  f.params_.mtry = f.mtry_;
  f.params_.min_leaf = r.u64();
  f.params_.max_depth = r.u64();
  f.n_features_ = r.u64();
  f.params_.n_classes = static_cast<int>(r.u32());
  for (int k = 1; k <= f.params_.n_classes; ++k) {
    if (r.i32() != k) throw DataError(what + ": unexpected class label set");
  }
  f.n_rows_ = r.u64();
  f.trees_.reserve(f.params_.n_trees);
  for (std::size_t t = 0; t < f.params_.n_trees; ++t) {
    const auto count = r.u32();
    std::vector<TreeNode> nodes(count);
    std::vector<std::size_t> open;  // split nodes still missing a right child
    for (std::uint32_t i = 0; i < count; ++i) {
      if (i > 0 && nodes[i - 1].is_leaf()) {
        if (open.empty()) throw DataError(what + ": malformed tree");
        nodes[open.back()].right = i;
        open.pop_back();
      }
      if (r.u8() == 0) {
        nodes[i].label = r.i32();
        if (nodes[i].label < 1 || nodes[i].label > f.params_.n_classes) throw DataError(what + ": leaf label out of range");
      } else {
        nodes[i].feature = static_cast<std::int32_t>(r.u32());
        nodes[i].threshold = r.f64();
        if (static_cast<std::size_t>(nodes[i].feature) >= f.n_features_ || !std::isfinite(nodes[i].threshold)) {
          throw DataError(what + ": invalid split node");
        }
        open.push_back(i);
      }
    }
    if (count == 0 || !open.empty() || !nodes.back().is_leaf()) throw DataError(what + ": malformed tree");
    f.trees_.emplace_back(std::move(nodes));
  }
  f.rebuild_bags();
  return f;
}

inline void save_forest(const std::filesystem::path& path, const Forest& forest) {
  io::write_atomic(path, [&](std::ostream& out) { write_forest(out, forest); });
}

inline Forest load_forest(const std::filesystem::path& path) {
  auto in = io::open_input(path);
  return read_forest(in, path.string());
}

}  // namespace posdec
