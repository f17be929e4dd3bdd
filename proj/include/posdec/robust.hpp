#pragma once

// Outlier marking, per-subject z-normalization and training-mean imputation.
// Standard deviations use the population convention (divide by n).

#include "posdec/feature_matrix.hpp"

namespace posdec {

struct OutlierResult {
  std::vector<std::uint8_t> mask;
  std::size_t iterations = 0;  ///< passes run, including the final no-change pass
};

/// Repeatedly marks every unmasked value with |v - mean| > sigma * std, where
/// mean and std are taken over the values still unmasked, until a pass marks
/// nothing. Each pass looks at the whole column at once.
inline OutlierResult mark_outliers_iterative(std::span<const double> column, double sigma = 3.0) {
  const std::size_t n = column.size();
  if (n < 2) throw DataError("mark_outliers_iterative: need at least 2 values");
  OutlierResult res;
  res.mask.assign(n, 0);
  std::size_t remaining = n;
  for (;;) {
    ++res.iterations;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!res.mask[i]) sum += column[i];
    }
    const double mean = sum / static_cast<double>(remaining);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!res.mask[i]) ss += (column[i] - mean) * (column[i] - mean);
    }
    const double limit = sigma * std::sqrt(ss / static_cast<double>(remaining));
    std::vector<std::size_t> fresh;
    for (std::size_t i = 0; i < n; ++i) {
      if (!res.mask[i] && std::abs(column[i] - mean) > limit) fresh.push_back(i);
    }
    if (fresh.empty()) break;
    for (std::size_t i : fresh) res.mask[i] = 1;
    remaining -= fresh.size();
    if (remaining == 0) throw NumericError("mark_outliers_iterative: every value was marked (degenerate feature)");
  }
  return res;
}

/// Marks outliers per subject and feature over that subject's trials.
/// Returns the number of marked cells.
inline std::size_t mark_outliers(FeatureMatrix& fm, double sigma = 3.0, unsigned threads = 1) {
  fm.outlier_mask = Matrix<std::uint8_t>(fm.rows(), fm.cols(), 0);
  const auto subjects = fm.subjects();
  std::vector<std::vector<std::size_t>> rows;
  for (const auto& s : subjects) rows.push_back(fm.rows_of(s));
  std::vector<std::size_t> counts(fm.cols(), 0);
  parallel_for(fm.cols(), threads, [&](std::size_t f) {
    std::vector<double> col;
    for (const auto& subject_rows : rows) {
      if (subject_rows.size() < 2) continue;
      col.clear();
      for (std::size_t r : subject_rows) col.push_back(fm.values(r, f));
      const auto res = mark_outliers_iterative(col, sigma);
      for (std::size_t i = 0; i < subject_rows.size(); ++i) {
        fm.outlier_mask(subject_rows[i], f) = res.mask[i];
        counts[f] += res.mask[i];
      }
    }
  });
  std::size_t total = 0;
  for (auto c : counts) total += c;
  return total;
}

/// Standardizes the unmasked cells of each (subject, feature) column to mean
/// 0 and population std 1. Masked cells keep their raw values. Columns with
/// zero spread become 0 and are flagged constant.
inline NormalizationParams normalize_per_subject(FeatureMatrix& fm, unsigned threads = 1) {
  NormalizationParams p;
  p.subjects = fm.subjects();
  const std::size_t ns = p.subjects.size();
  p.mean = Matrix<double>(ns, fm.cols());
  p.stddev = Matrix<double>(ns, fm.cols());
  p.constant = Matrix<std::uint8_t>(ns, fm.cols(), 0);
  std::vector<std::vector<std::size_t>> rows;
  for (const auto& s : p.subjects) rows.push_back(fm.rows_of(s));
  parallel_for(fm.cols(), threads, [&](std::size_t f) {
    for (std::size_t s = 0; s < ns; ++s) {
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t r : rows[s]) {
        if (!fm.outlier_mask(r, f)) {
          sum += fm.values(r, f);
          ++n;
        }
      }
      if (n == 0) {
        p.constant(s, f) = 1;
        continue;
      }
      const double mean = sum / static_cast<double>(n);
      double ss = 0.0;
      for (std::size_t r : rows[s]) {
        if (!fm.outlier_mask(r, f)) ss += (fm.values(r, f) - mean) * (fm.values(r, f) - mean);
      }
      const double sd = std::sqrt(ss / static_cast<double>(n));
      p.mean(s, f) = mean;
      p.stddev(s, f) = sd;
      if (!(sd > 0.0)) p.constant(s, f) = 1;
      for (std::size_t r : rows[s]) {
        if (fm.outlier_mask(r, f)) continue;
        fm.values(r, f) = sd > 0.0 ? (fm.values(r, f) - mean) / sd : 0.0;
      }
    }
  });
  fm.normalization = p;
  return p;
}

enum class ImputeMode {
  training_mean,  ///< masked cells of training and held-out rows get the training mean
  training_only,  ///< held-out rows keep their (normalized) outlier values
};

inline std::string_view impute_mode_name(ImputeMode m) noexcept {
  return m == ImputeMode::training_mean ? "training_mean" : "training_only";
}

inline ImputeMode parse_impute_mode(std::string_view s) {
  if (s == "training_mean") return ImputeMode::training_mean;
  if (s == "training_only" || s == "none") return ImputeMode::training_only;
  throw ConfigError("unknown imputation mode '" + std::string(s) + "'");
}

struct ImputeResult {
  Matrix<double> values;
  std::vector<double> training_mean;     ///< per feature
  std::vector<std::uint8_t> no_training; ///< 1 where no unmasked training value existed
};

/// Replaces masked cells with the per-feature mean over unmasked rows of the
/// training subjects. Unmasked cells are never changed.
inline ImputeResult impute_outliers(const FeatureMatrix& fm, const std::vector<std::string>& training,
                                    ImputeMode mode = ImputeMode::training_mean) {
  std::vector<std::uint8_t> is_train(fm.rows(), 0);
  for (std::size_t r = 0; r < fm.rows(); ++r) {
    is_train[r] = std::find(training.begin(), training.end(), fm.meta[r].subject_id) != training.end();
  }
  ImputeResult out;
  out.values = fm.values;
  out.training_mean.assign(fm.cols(), 0.0);
  out.no_training.assign(fm.cols(), 0);
  std::vector<double> sum(fm.cols(), 0.0);
  std::vector<std::size_t> count(fm.cols(), 0);
  for (std::size_t r = 0; r < fm.rows(); ++r) {
    if (!is_train[r]) continue;
    for (std::size_t f = 0; f < fm.cols(); ++f) {
      if (!fm.outlier_mask(r, f)) {
        sum[f] += fm.values(r, f);
        ++count[f];
      }
    }
  }
  for (std::size_t f = 0; f < fm.cols(); ++f) {
    if (count[f] == 0) {
      out.no_training[f] = 1;
    } else {
      out.training_mean[f] = sum[f] / static_cast<double>(count[f]);
    }
  }
  for (std::size_t r = 0; r < fm.rows(); ++r) {
    if (!is_train[r] && mode == ImputeMode::training_only) continue;
    for (std::size_t f = 0; f < fm.cols(); ++f) {
      if (fm.outlier_mask(r, f)) out.values(r, f) = out.training_mean[f];
    }
  }
  return out;
}

/// Per-feature outlier counts as delimited text.
inline void export_outlier_report(std::ostream& out, const FeatureMatrix& fm) {
  out << "feature\tchannel\tband\twindow\toutliers\n";
  for (std::size_t f = 0; f < fm.cols(); ++f) {
    std::size_t n = 0;
    for (std::size_t r = 0; r < fm.rows(); ++r) n += fm.outlier_mask(r, f);
    const auto c = fm.layout.feature_coords(f);
    out << f << '\t' << fm.channels[c.channel] << '\t' << band_name(c.band) << '\t';
    if (c.window == fm.layout.whole_window()) {
      out << "whole";
    } else {
      out << c.window;
    }
    out << '\t' << n << '\n';
  }
}

}  // namespace posdec
