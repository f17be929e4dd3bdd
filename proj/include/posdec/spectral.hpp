#pragma once

// Hann-windowed periodogram bandpower, mu-band identification and the
// per-trial feature vector.
//
// Periodogram convention: for a segment x of N samples and Hann weights
// w[n] = 0.5 - 0.5 cos(2 pi n / N), P[k] = |sum_n w[n] x[n] e^{-2 pi i k n / N}|^2 / N
// for k = 0..N/2, bin k centered at k * fs / N. No amplitude correction, no
// one-sided doubling, no zero padding. A band [lo, hi] sums every bin whose
// center lies in the closed interval.

#include <fftw3.h>

#include <array>
#include <map>
#include <memory>
#include <numbers>

#include "posdec/core.hpp"

namespace posdec {

/// Frequency band in Hz.
struct Band {
  double low = 0.0;
  double high = 0.0;

  void validate(double sample_rate) const {
    if (!(low > 0) || !(high > low) || high > sample_rate / 2.0 + 1e-12) {
      throw ConfigError("invalid band " + std::to_string(low) + "-" + std::to_string(high) +
                        " Hz for sample rate " + std::to_string(sample_rate));
    }
  }
  double width() const noexcept { return high - low; }
  friend bool operator==(const Band&, const Band&) = default;
};

inline constexpr Band kBetaBand{20.0, 30.0};

struct SubjectBands {
  std::string subject_id;
  Band mu{8.0, 9.0};
  Band beta = kBetaBand;

  const Band& band(BandId id) const noexcept { return id == BandId::mu ? mu : beta; }
};

/// Floor used for log-bandpower of an all-zero segment.
inline constexpr double kLogPowerFloorArg = 1e-20;

// ---------------------------------------------------------------------------
// FFT backend.

namespace detail {

class FftPlanCache {
 public:
  static FftPlanCache& instance() {
    static FftPlanCache cache;
    return cache;
  }

  // FFTW's planner is not thread-safe; fftw_execute_dft_r2c on an existing
  // plan is. FFTW_UNALIGNED pins one codelet path so results do not depend
  // on buffer alignment.
  fftw_plan plan(std::size_t n) { return get(n, false); }

  /// Complex-to-real inverse plan (unnormalized), used by the noise generator.
  fftw_plan inverse_plan(std::size_t n) { return get(n, true); }

  ~FftPlanCache() {
    for (auto& [n, p] : plans_) fftw_destroy_plan(p);
  }

 private:
  FftPlanCache() = default;
  fftw_plan get(std::size_t n, bool inverse) {
    std::lock_guard lock(mutex_);
    auto it = plans_.find({n, inverse});
    if (it != plans_.end()) return it->second;
    std::vector<double> real(n);
    std::vector<std::array<double, 2>> spec(n / 2 + 1);
    auto* cplx = reinterpret_cast<fftw_complex*>(spec.data());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED | FFTW_DESTROY_INPUT;
    fftw_plan p = inverse ? fftw_plan_dft_c2r_1d(static_cast<int>(n), cplx, real.data(), flags)
                          : fftw_plan_dft_r2c_1d(static_cast<int>(n), real.data(), cplx, flags);
    if (!p) throw std::runtime_error("FFTW planning failed for n=" + std::to_string(n));
    plans_.emplace(std::pair{n, inverse}, p);
    return p;
  }

  std::mutex mutex_;
  std::map<std::pair<std::size_t, bool>, fftw_plan> plans_;
};

inline const std::vector<double>& hann_window(std::size_t n) {
  thread_local std::map<std::size_t, std::vector<double>> cache;
  auto& w = cache[n];
  if (w.size() != n) {
    w.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(n));
    }
  }
  return w;
}

}  // namespace detail

/// One-sided Hann periodogram, bins 0..N/2.
inline std::vector<double> hann_periodogram(std::span<const double> segment) {
  const std::size_t n = segment.size();
  if (n < 2) throw DataError("periodogram: segment needs at least 2 samples");
  const auto& w = detail::hann_window(n);
  thread_local std::vector<double> in;
  thread_local std::vector<std::array<double, 2>> out;
  in.resize(n);
  out.resize(n / 2 + 1);
  for (std::size_t i = 0; i < n; ++i) in[i] = w[i] * segment[i];
  fftw_execute_dft_r2c(detail::FftPlanCache::instance().plan(n), in.data(),
                       reinterpret_cast<fftw_complex*>(out.data()));
  std::vector<double> p(n / 2 + 1);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t k = 0; k < p.size(); ++k) {
    p[k] = (out[k][0] * out[k][0] + out[k][1] * out[k][1]) * inv_n;
  }
  return p;
}

/// Bin range [first, last] whose centers fall inside the band; empty when first > last.
inline std::pair<std::size_t, std::size_t> band_bins(const Band& band, std::size_t n_samples,
                                                     double sample_rate) {
  const double df = sample_rate / static_cast<double>(n_samples);
  const std::size_t max_bin = n_samples / 2;
  constexpr double eps = 1e-9;
  const double lo = std::ceil(band.low / df - eps);
  const double hi = std::floor(band.high / df + eps);
  const auto first = static_cast<std::size_t>(std::max(0.0, lo));
  const auto last = static_cast<std::size_t>(std::min(static_cast<double>(max_bin), hi));
  return {first, last};
}

inline double band_sum(std::span<const double> periodogram, const Band& band, std::size_t n_samples,
                       double sample_rate) {
  const auto [first, last] = band_bins(band, n_samples, sample_rate);
  double s = 0.0;
  for (std::size_t k = first; k <= last && k < periodogram.size(); ++k) s += periodogram[k];
  return s;
}

struct LogBandpower {
  double value = 0.0;
  bool floored = false;  ///< band power was zero; value is log(1e-20)
};

inline LogBandpower log_of_power(double power) {
  if (!(power > 0.0)) return {std::log(kLogPowerFloorArg), true};
  return {std::log(power), false};
}

/// Several bands from one shared FFT.
inline std::vector<LogBandpower> log_bandpowers(std::span<const double> segment,
                                                std::span<const Band> bands, double sample_rate) {
  if (segment.size() < 2) throw DataError("log_bandpower: segment needs at least 2 samples");
  for (const auto& b : bands) b.validate(sample_rate);
  std::vector<LogBandpower> out(bands.size());
  if (std::all_of(segment.begin(), segment.end(), [](double v) { return v == 0.0; })) {
    for (auto& o : out) o = {std::log(kLogPowerFloorArg), true};
    return out;
  }
  const auto p = hann_periodogram(segment);
  for (std::size_t i = 0; i < bands.size(); ++i) {
    out[i] = log_of_power(band_sum(p, bands[i], segment.size(), sample_rate));
  }
  return out;
}

inline LogBandpower log_bandpower(std::span<const double> segment, const Band& band,
                                  double sample_rate) {
  return log_bandpowers(segment, std::span<const Band>(&band, 1), sample_rate).front();
}

// ---------------------------------------------------------------------------
// mu-band identification.

struct MuSearch {
  double low_hz = 8.0;
  double high_hz = 15.0;
  std::vector<int> widths_hz = {1, 2, 3};
  double min_duration_s = 60.0;
};

/// Integer-edge candidates inside the search range, scored by mean periodogram
/// power per bin over the given channels (a width-independent density, so
/// wider candidates are not favored merely for covering more bins). Ties,
/// within 1e-9 relative, go to the lower edge and then the smaller width.
inline Band identify_mu_band(const Recording& resting, const std::vector<std::string>& channels,
                             const MuSearch& search = {}) {
  if (resting.duration_s() + 1e-9 < search.min_duration_s) {
    throw DataError("identify_mu_band: resting segment of subject '" + resting.subject_id +
                    "' is shorter than " + std::to_string(search.min_duration_s) + " s");
  }
  if (channels.empty()) throw ConfigError("identify_mu_band: no sensorimotor channels given");
  std::vector<double> mean_p;
  for (const auto& name : channels) {
    auto idx = resting.channel_index(name);
    if (!idx) {
      throw DataError("identify_mu_band: channel '" + name + "' missing from resting data of '" +
                      resting.subject_id + "'");
    }
    const auto p = hann_periodogram(resting.samples.row(*idx));
    if (mean_p.empty()) mean_p.assign(p.size(), 0.0);
    for (std::size_t k = 0; k < p.size(); ++k) mean_p[k] += p[k];
  }
  for (double& v : mean_p) v /= static_cast<double>(channels.size());

  const std::size_t n = resting.n_samples();
  std::optional<Band> best;
  double best_score = -1.0;
  const int lo_min = static_cast<int>(std::ceil(search.low_hz));
  const int hi_max = static_cast<int>(std::floor(search.high_hz));
  std::vector<int> widths = search.widths_hz;
  std::sort(widths.begin(), widths.end());
  for (int lo = lo_min; lo < hi_max; ++lo) {
    for (int w : widths) {
      if (lo + w > hi_max) continue;
      const Band cand{static_cast<double>(lo), static_cast<double>(lo + w)};
      const auto [first, last] = band_bins(cand, n, resting.sample_rate);
      if (first > last) continue;
      double s = 0.0;
      for (std::size_t k = first; k <= last; ++k) s += mean_p[k];
      const double score = s / static_cast<double>(last - first + 1);
      if (!best || score > best_score * (1.0 + 1e-9) + 1e-300) {
        best = cand;
        best_score = score;
      }
    }
  }
  if (!best) throw ConfigError("identify_mu_band: empty candidate set");
  return *best;
}

// ---------------------------------------------------------------------------
// Features.

/// Feature vector of one trial (channels x samples) laid out by `layout`.
/// Returns the number of floored log-bandpowers through `floored` when given.
inline std::vector<double> extract_features(const Matrix<double>& trial, const SubjectBands& bands,
                                            const FeatureLayout& layout, double sample_rate,
                                            std::size_t* floored = nullptr) {
  if (trial.rows() != layout.n_channels()) {
    throw DataError("extract_features: trial has " + std::to_string(trial.rows()) +
                    " channels, layout expects " + std::to_string(layout.n_channels()));
  }
  const WindowSpec& ws = layout.windows();
  if (trial.cols() != ws.trial_samples(sample_rate)) {
    throw DataError("extract_features: trial length " + std::to_string(trial.cols()) +
                    " samples differs from " + std::to_string(ws.trial_samples(sample_rate)));
  }
  const std::array<Band, 2> band_pair = {bands.mu, bands.beta};
  const std::size_t win = ws.window_samples(sample_rate);
  std::vector<double> out(layout.total_features());
  std::size_t n_floored = 0;
  for (std::size_t c = 0; c < trial.rows(); ++c) {
    const auto row = trial.row(c);
    for (std::size_t w = 0; w <= layout.n_sliding(); ++w) {
      const bool whole = w == layout.whole_window();
      const auto seg = whole ? row : row.subspan(ws.window_start(w, sample_rate), win);
      const auto lp = log_bandpowers(seg, band_pair, sample_rate);
      for (BandId b : kBands) {
        const auto& v = lp[static_cast<std::size_t>(b)];
        out[layout.feature_index(c, b, w)] = v.value;
        n_floored += v.floored ? 1 : 0;
      }
    }
  }
  if (floored) *floored = n_floored;
  return out;
}

}  // namespace posdec
