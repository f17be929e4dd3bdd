#pragma once

// Leave-one-subject-out cross-validation, the exact binomial test, the
// confusion matrix and per-key true-positive / true-negative rates.

#include <functional>
#include <map>

#include "posdec/forest.hpp"
#include "posdec/robust.hpp"

namespace posdec {

inline constexpr double kChanceLevel = 1.0 / kNumKeys;

// ---------------------------------------------------------------------------
// Binomial test.

struct BinomialTest {
  double p_value = 1.0;  ///< exp(log_p), floored at the smallest normal double
  double log_p = 0.0;    ///< natural log of the exact tail
  bool underflow = false;

  double log10_p() const noexcept { return log_p / std::log(10.0); }
};

/// One-sided exact upper tail P[X >= hits] for X ~ Binomial(n, p0), summed in
/// log space. Terms are generated from the first one by the pmf ratio
/// recurrence and accumulated with a running log-sum-exp.
inline BinomialTest binomial_test(std::uint64_t hits, std::uint64_t n, double p0 = kChanceLevel) {
  if (hits > n) throw DataError("binomial_test: hits exceed trials");
  if (!(p0 > 0.0 && p0 < 1.0)) throw ConfigError("binomial_test: p0 must lie in (0, 1)");
  BinomialTest res;
  if (hits == 0) return res;
  const double dn = static_cast<double>(n);
  const double lp = std::log(p0), lq = std::log1p(-p0);
  const double log_odds = lp - lq;
  double term = std::lgamma(dn + 1.0) - std::lgamma(static_cast<double>(hits) + 1.0) -
                std::lgamma(dn - static_cast<double>(hits) + 1.0) + static_cast<double>(hits) * lp +
                (dn - static_cast<double>(hits)) * lq;
  double acc_max = term;  // log-sum-exp state: total = exp(acc_max) * acc_sum
  double acc_sum = 1.0;
  for (std::uint64_t k = hits; k < n; ++k) {
    term += std::log(static_cast<double>(n - k)) - std::log(static_cast<double>(k + 1)) + log_odds;
    if (term > acc_max) {
      acc_sum = acc_sum * std::exp(acc_max - term) + 1.0;
      acc_max = term;
    } else {
      const double rel = term - acc_max;
      // Past the mode the terms only shrink; n terms below e^-60 cannot matter.
      if (rel < -60.0 && static_cast<double>(k + 1) > dn * p0) break;
      acc_sum += std::exp(rel);
    }
  }
  res.log_p = std::min(0.0, acc_max + std::log(acc_sum));
  const double floor = std::numeric_limits<double>::min();
  res.p_value = std::exp(res.log_p);
  if (res.p_value < floor) {
    res.p_value = floor;
    res.underflow = true;
  }
  return res;
}

/// Central interval [lo, hi] of hit counts holding at least `coverage` of
/// Binomial(n, p0) mass, with at most (1 - coverage)/2 in each tail.
inline std::pair<std::uint64_t, std::uint64_t> binomial_central_interval(std::uint64_t n, double p0,
                                                                         double coverage) {
  const double tail = (1.0 - coverage) / 2.0;
  std::vector<double> pmf(n + 1);
  for (std::uint64_t k = 0; k <= n; ++k) {
    const double dk = static_cast<double>(k), dn = static_cast<double>(n);
    pmf[k] = std::exp(std::lgamma(dn + 1) - std::lgamma(dk + 1) - std::lgamma(dn - dk + 1) +
                      dk * std::log(p0) + (dn - dk) * std::log1p(-p0));
  }
  std::uint64_t lo = 0;
  double acc = 0.0;
  while (lo < n && acc + pmf[lo] <= tail) acc += pmf[lo++];
  std::uint64_t hi = n;
  acc = 0.0;
  while (hi > 0 && acc + pmf[hi] <= tail) acc += pmf[hi--];
  return {lo, hi};
}

// ---------------------------------------------------------------------------
// Confusion and rates. Row index = true key - 1, column = predicted key - 1.

struct LabelPair {
  int truth = 1;
  int predicted = 1;
  friend bool operator==(const LabelPair&, const LabelPair&) = default;
};

using KeyMatrix = std::array<std::array<double, kNumKeys>, kNumKeys>;

inline std::array<std::array<std::uint64_t, kNumKeys>, kNumKeys> confusion_counts(
    std::span<const LabelPair> pairs) {
  std::array<std::array<std::uint64_t, kNumKeys>, kNumKeys> c{};
  for (const auto& p : pairs) {
    check_label(p.truth);
    check_label(p.predicted);
    ++c[static_cast<std::size_t>(p.truth - 1)][static_cast<std::size_t>(p.predicted - 1)];
  }
  return c;
}

/// Row k is the distribution of predictions for true key k+1 in percent.
/// A key without trials yields a row of NaN.
inline KeyMatrix confusion_matrix(std::span<const LabelPair> pairs) {
  const auto counts = confusion_counts(pairs);
  KeyMatrix m{};
  for (std::size_t t = 0; t < kNumKeys; ++t) {
    std::uint64_t total = 0;
    for (auto c : counts[t]) total += c;
    for (std::size_t p = 0; p < kNumKeys; ++p) {
      m[t][p] = total == 0 ? std::numeric_limits<double>::quiet_NaN()
                           : 100.0 * static_cast<double>(counts[t][p]) / static_cast<double>(total);
    }
  }
  return m;
}

struct KeyRates {
  std::array<double, kNumKeys> tp{};  ///< percent, P[pred = k | true = k]
  std::array<double, kNumKeys> tn{};  ///< percent, P[pred != k | true != k]
  std::array<std::uint64_t, kNumKeys> trials{};
};

inline KeyRates tp_tn_rates(std::span<const LabelPair> pairs) {
  const auto counts = confusion_counts(pairs);
  KeyRates r;
  std::uint64_t total = 0;
  for (std::size_t t = 0; t < kNumKeys; ++t) {
    for (auto c : counts[t]) r.trials[t] += c;
    total += r.trials[t];
  }
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t k = 0; k < kNumKeys; ++k) {
    r.tp[k] = r.trials[k] == 0 ? nan : 100.0 * static_cast<double>(counts[k][k]) / static_cast<double>(r.trials[k]);
    const std::uint64_t negatives = total - r.trials[k];
    std::uint64_t rejected = 0;
    for (std::size_t t = 0; t < kNumKeys; ++t) {
      if (t != k) rejected += r.trials[t] - counts[t][k];
    }
    r.tn[k] = negatives == 0 ? nan : 100.0 * static_cast<double>(rejected) / static_cast<double>(negatives);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Cross-validation.

struct Fold {
  std::vector<std::string> train;
  std::string test;
};

inline std::vector<Fold> loso_folds(const std::vector<std::string>& subjects) {
  if (subjects.size() < 2) throw DataError("loso_folds: need at least two subjects");
  std::vector<Fold> folds;
  for (const auto& test : subjects) {
    Fold f;
    f.test = test;
    for (const auto& s : subjects) {
      if (s != test) f.train.push_back(s);
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

inline std::vector<Fold> loso_folds(const FeatureMatrix& fm) { return loso_folds(fm.subjects()); }

struct FoldResult {
  std::string held_out_subject;
  std::vector<LabelPair> predictions;
  std::uint64_t hits = 0;
  double accuracy = 0.0;  ///< fraction
  double oob_error = 0.0; ///< of the fold's forest on its training rows
};

struct CrossvalReport {
  std::vector<FoldResult> folds;
  std::uint64_t hits = 0;
  std::uint64_t n = 0;
  double accuracy = 0.0;
  BinomialTest binomial;
  KeyMatrix confusion{};
  KeyRates rates;
};

struct CrossvalOptions {
  ForestParams forest;
  ImputeMode impute = ImputeMode::training_mean;
  /// Called with (fold index, forest) after each fold; the forest is then
  /// released, so at most one fold forest is resident at a time.
  std::function<void(std::size_t, const Forest&)> on_forest;
};

/// Fold training data: imputed rows of the training subjects.
struct FoldData {
  Matrix<double> train_x;
  std::vector<int> train_y;
  Matrix<double> test_x;
  std::vector<int> test_y;
};

inline FoldData fold_data(const FeatureMatrix& fm, const Fold& fold, ImputeMode mode) {
  const auto imputed = impute_outliers(fm, fold.train, mode);
  FoldData d;
  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t r = 0; r < fm.rows(); ++r) {
    const auto& s = fm.meta[r].subject_id;
    if (s == fold.test) {
      test_rows.push_back(r);
    } else if (std::find(fold.train.begin(), fold.train.end(), s) != fold.train.end()) {
      train_rows.push_back(r);
    }
  }
  auto take = [&](const std::vector<std::size_t>& rows, Matrix<double>& x, std::vector<int>& y) {
    x = Matrix<double>(rows.size(), fm.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto src = imputed.values.row(rows[i]);
      std::copy(src.begin(), src.end(), x.row(i).begin());
      y.push_back(fm.meta[rows[i]].label);
    }
  };
  take(train_rows, d.train_x, d.train_y);
  take(test_rows, d.test_x, d.test_y);
  return d;
}

/// Seed of the forest trained in fold `fold`.
inline std::uint64_t fold_seed(std::uint64_t master_seed, std::size_t fold) {
  return derive_seed(master_seed, stream_id(StreamDomain::fold, fold));
}

inline void finalize_report(CrossvalReport& rep) {
  rep.hits = 0;
  rep.n = 0;
  std::vector<LabelPair> all;
  for (const auto& f : rep.folds) {
    rep.hits += f.hits;
    rep.n += f.predictions.size();
    all.insert(all.end(), f.predictions.begin(), f.predictions.end());
  }
  rep.accuracy = rep.n == 0 ? 0.0 : static_cast<double>(rep.hits) / static_cast<double>(rep.n);
  rep.binomial = binomial_test(rep.hits, rep.n, kChanceLevel);
  rep.confusion = confusion_matrix(all);
  rep.rates = tp_tn_rates(all);
}

/// Trains one forest per held-out subject on the (re-imputed) rows of the
/// other subjects and predicts the held-out trials in row order. Vote ties
/// draw from the fold's prediction stream.
inline CrossvalReport run_crossval(const FeatureMatrix& fm, const CrossvalOptions& opt) {
  if (!fm.normalization) throw DataError("run_crossval: features are not normalized");
  const auto folds = loso_folds(fm);
  CrossvalReport rep;
  for (std::size_t i = 0; i < folds.size(); ++i) {
    const auto data = fold_data(fm, folds[i], opt.impute);
    ForestParams params = opt.forest;
    params.seed = fold_seed(opt.forest.seed, i);
    const Forest forest = train_forest(data.train_x, data.train_y, params);
    FoldResult fr;
    fr.held_out_subject = folds[i].test;
    fr.oob_error = oob_error(forest, data.train_x, data.train_y).error;
    Rng rng(params.seed, stream_id(StreamDomain::predict, i));
    for (std::size_t r = 0; r < data.test_x.rows(); ++r) {
      const int pred = forest.predict(data.test_x.row(r), rng);
      fr.predictions.push_back({data.test_y[r], pred});
      fr.hits += pred == data.test_y[r];
    }
    fr.accuracy = fr.predictions.empty() ? 0.0
                                         : static_cast<double>(fr.hits) / static_cast<double>(fr.predictions.size());
    rep.folds.push_back(std::move(fr));
    if (opt.on_forest) opt.on_forest(i, forest);
  }
  finalize_report(rep);
  return rep;
}

// ---------------------------------------------------------------------------
// Report files.

/// Machine-readable key = value document; parse_crossval_report reads it back.
inline std::string format_crossval_report(const CrossvalReport& rep) {
  std::ostringstream out;
  out << "# posdec crossval report v1\n";
  out << "folds = " << rep.folds.size() << '\n';
  for (std::size_t i = 0; i < rep.folds.size(); ++i) {
    const auto& f = rep.folds[i];
    const std::string k = "fold." + std::to_string(i) + '.';
    out << k << "subject = " << f.held_out_subject << '\n';
    out << k << "trials = " << f.predictions.size() << '\n';
    out << k << "hits = " << f.hits << '\n';
    out << k << "pa = " << io::fmt_double(f.accuracy) << '\n';
    out << k << "oob_error = " << io::fmt_double(f.oob_error) << '\n';
    out << k << "pairs =";
    for (const auto& p : f.predictions) out << ' ' << p.truth << ':' << p.predicted;
    out << '\n';
  }
  out << "overall.hits = " << rep.hits << '\n';
  out << "overall.n = " << rep.n << '\n';
  out << "overall.pa = " << io::fmt_double(rep.accuracy) << '\n';
  out << "chance = " << io::fmt_double(kChanceLevel) << '\n';
  out << "binomial.p = " << io::fmt_double(rep.binomial.p_value) << '\n';
  out << "binomial.log10_p = " << io::fmt_double(rep.binomial.log10_p()) << '\n';
  out << "binomial.underflow = " << (rep.binomial.underflow ? 1 : 0) << '\n';
  for (std::size_t t = 0; t < kNumKeys; ++t) {
    out << "confusion." << t + 1 << " =";
    for (double v : rep.confusion[t]) out << ' ' << io::fmt_double(v);
    out << '\n';
  }
  out << "tp =";
  for (double v : rep.rates.tp) out << ' ' << io::fmt_double(v);
  out << "\ntn =";
  for (double v : rep.rates.tn) out << ' ' << io::fmt_double(v);
  out << '\n';
  return out.str();
}

inline std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string line = detail::trim(text.substr(pos, end - pos));
    pos = end + 1;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("report: malformed line '" + line + "'");
    kv[detail::trim(std::string_view(line).substr(0, eq))] =
        detail::trim(std::string_view(line).substr(eq + 1));
  }
  return kv;
}

/// Rebuilds a report from its key-value form (per-trial pairs are the source
/// of truth; aggregates are recomputed).
inline CrossvalReport parse_crossval_report(std::string_view text) {
  const auto kv = parse_key_values(text);
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError("crossval report: missing key '" + key + "'");
    return it->second;
  };
  CrossvalReport rep;
  const auto n_folds = std::stoul(get("folds"));
  for (std::size_t i = 0; i < n_folds; ++i) {
    const std::string k = "fold." + std::to_string(i) + '.';
    FoldResult f;
    f.held_out_subject = get(k + "subject");
    f.oob_error = std::stod(get(k + "oob_error"));
    std::istringstream pairs(get(k + "pairs"));
    std::string tok;
    while (pairs >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) throw DataError("crossval report: bad pair '" + tok + "'");
      LabelPair p{std::stoi(tok.substr(0, colon)), std::stoi(tok.substr(colon + 1))};
      f.hits += p.truth == p.predicted;
      f.predictions.push_back(p);
    }
    f.accuracy = f.predictions.empty() ? 0.0
                                       : static_cast<double>(f.hits) / static_cast<double>(f.predictions.size());
    rep.folds.push_back(std::move(f));
  }
  finalize_report(rep);
  return rep;
}

/// Human-readable tables: per-subject accuracy, per-key tp/tn, confusion.
inline std::string format_crossval_tables(const CrossvalReport& rep) {
  std::ostringstream out;
  out << "Prediction accuracy (PA) per held-out subject\n";
  out << "subject\ttrials\thits\tPA %\n";
  for (const auto& f : rep.folds) {
    out << f.held_out_subject << '\t' << f.predictions.size() << '\t' << f.hits << '\t'
        << io::fmt_fixed(100.0 * f.accuracy, 2) << '\n';
  }
  out << "overall\t" << rep.n << '\t' << rep.hits << '\t' << io::fmt_fixed(100.0 * rep.accuracy, 2) << '\n';
  out << "chance level " << io::fmt_fixed(100.0 * kChanceLevel, 2) << " %, one-sided exact binomial p = "
      << io::fmt_double(rep.binomial.p_value, 4) << " (log10 p = " << io::fmt_fixed(rep.binomial.log10_p(), 3)
      << ")\n\n";
  out << "True positive (tp) and true negative (tn) rate per key\n";
  out << "key";
  for (int k = 1; k <= kNumKeys; ++k) out << '\t' << k;
  out << "\ntp %";
  for (double v : rep.rates.tp) out << '\t' << io::fmt_fixed(v, 2);
  out << "\ntn %";
  for (double v : rep.rates.tn) out << '\t' << io::fmt_fixed(v, 2);
  out << "\n\nConfusion matrix (rows: true key, columns: predicted key, percent)\n";
  out << "true\\pred";
  for (int k = 1; k <= kNumKeys; ++k) out << '\t' << k;
  out << '\n';
  for (std::size_t t = 0; t < kNumKeys; ++t) {
    out << t + 1;
    for (double v : rep.confusion[t]) out << '\t' << io::fmt_fixed(v, 2);
    out << '\n';
  }
  return out.str();
}

/// Confusion percentages as delimited text for plotting.
inline std::string format_confusion_tsv(const KeyMatrix& m) {
  std::ostringstream out;
  out << "true";
  for (int k = 1; k <= kNumKeys; ++k) out << "\tpred_" << k;
  out << '\n';
  for (std::size_t t = 0; t < kNumKeys; ++t) {
    out << t + 1;
    for (double v : m[t]) out << '\t' << io::fmt_double(v);
    out << '\n';
  }
  return out.str();
}

}  // namespace posdec
