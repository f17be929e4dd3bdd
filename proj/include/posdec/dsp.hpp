#pragma once

// Time-domain preprocessing. The pipeline applies these in a fixed order:
// Laplacian, channel intersection, zero-phase highpass, common average
// reference, trial cropping.

#include <complex>
#include <numbers>
#include <set>

#include "posdec/core.hpp"

namespace posdec {

// ---------------------------------------------------------------------------
// Spatial filters.

/// Small Laplacian: each channel minus the mean of its montage neighbors that
/// are present in the recording.
inline Recording laplacian(const Recording& recording, const Montage& montage) {
  const std::size_t nc = recording.n_channels();
  const std::size_t ns = recording.n_samples();
  std::vector<std::size_t> montage_index(nc);
  std::vector<std::size_t> rec_index(montage.size(), static_cast<std::size_t>(-1));
  for (std::size_t c = 0; c < nc; ++c) {
    montage_index[c] = montage.require(recording.channels[c]);
    rec_index[montage_index[c]] = c;
  }

  Recording out = recording;
  for (std::size_t c = 0; c < nc; ++c) {
    std::vector<std::size_t> present;
    for (std::size_t m : montage.neighbors(montage_index[c])) {
      if (rec_index[m] != static_cast<std::size_t>(-1)) present.push_back(rec_index[m]);
    }
    if (present.empty()) {
      throw ConfigError("laplacian: channel '" + recording.channels[c] +
                        "' has no neighbor present in the recording");
    }
    const double w = 1.0 / static_cast<double>(present.size());
    auto dst = out.samples.row(c);
    for (std::size_t n : present) {
      const auto src = recording.samples.row(n);
      for (std::size_t t = 0; t < ns; ++t) dst[t] -= w * src[t];
    }
  }
  return out;
}

/// Subtracts the instantaneous mean over channels.
inline Recording common_average_reference(const Recording& recording) {
  const std::size_t nc = recording.n_channels();
  if (nc < 2) throw DataError("common average reference needs at least two channels");
  const std::size_t ns = recording.n_samples();
  std::vector<double> mean(ns, 0.0);
  for (std::size_t c = 0; c < nc; ++c) {
    const auto row = recording.samples.row(c);
    for (std::size_t t = 0; t < ns; ++t) mean[t] += row[t];
  }
  const double inv = 1.0 / static_cast<double>(nc);
  for (double& m : mean) m *= inv;
  Recording out = recording;
  for (std::size_t c = 0; c < nc; ++c) {
    auto row = out.samples.row(c);
    for (std::size_t t = 0; t < ns; ++t) row[t] -= mean[t];
  }
  return out;
}

struct ChannelIntersection {
  std::vector<std::string> channels;  ///< montage order
  std::vector<Recording> recordings;
};

/// Channels named in every list, in montage order.
inline std::vector<std::string> common_channels(const std::vector<std::vector<std::string>>& lists,
                                                const Montage& montage) {
  if (lists.empty()) throw DataError("intersect_channels: no recordings");
  std::vector<std::size_t> count(montage.size(), 0);
  for (const auto& list : lists) {
    std::set<std::size_t> seen;
    for (const auto& name : list) seen.insert(montage.require(name));
    for (std::size_t m : seen) ++count[m];
  }
  std::vector<std::string> out;
  for (std::size_t m = 0; m < montage.size(); ++m) {
    if (count[m] == lists.size()) out.push_back(montage.channels()[m]);
  }
  if (out.empty()) throw DataError("intersect_channels: no channel common to all recordings");
  return out;
}

/// Copy of `rec` holding exactly `channels`, in that order.
inline Recording select_channels(const Recording& rec, const std::vector<std::string>& channels) {
  Recording r;
  r.subject_id = rec.subject_id;
  r.sample_rate = rec.sample_rate;
  r.channels = channels;
  r.samples = Matrix<double>(channels.size(), rec.n_samples());
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto idx = rec.channel_index(channels[c]);
    if (!idx) throw DataError("recording '" + rec.subject_id + "' lacks channel '" + channels[c] + "'");
    const auto src = rec.samples.row(*idx);
    std::copy(src.begin(), src.end(), r.samples.row(c).begin());
  }
  return r;
}

/// Reduces every recording to the channels present in all of them.
inline ChannelIntersection intersect_channels(const std::vector<Recording>& recordings,
                                              const Montage& montage) {
  std::vector<std::vector<std::string>> lists;
  for (const auto& rec : recordings) lists.push_back(rec.channels);
  ChannelIntersection out;
  out.channels = common_channels(lists, montage);
  for (const auto& rec : recordings) out.recordings.push_back(select_channels(rec, out.channels));
  return out;
}

// ---------------------------------------------------------------------------
// IIR filtering.

/// One biquad, a0 normalized to 1: (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2).
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
};

struct IirFilter {
  std::vector<Biquad> sections;
  int order = 0;
  double cutoff_hz = 0.0;
  double sample_rate = 0.0;

  std::complex<double> response(double freq_hz) const {
    const double w = 2.0 * std::numbers::pi * freq_hz / sample_rate;
    const std::complex<double> z1 = std::polar(1.0, -w);
    const std::complex<double> z2 = z1 * z1;
    std::complex<double> h = 1.0;
    for (const auto& s : sections) {
      h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
    }
    return h;
  }

  double magnitude(double freq_hz) const { return std::abs(response(freq_hz)); }

  /// Largest pole modulus over all sections.
  double max_pole_radius() const {
    double r = 0.0;
    for (const auto& s : sections) {
      const std::complex<double> disc = std::sqrt(std::complex<double>(s.a1 * s.a1 - 4.0 * s.a2));
      r = std::max({r, std::abs((-s.a1 + disc) / 2.0), std::abs((-s.a1 - disc) / 2.0)});
    }
    return r;
  }

  /// Edge padding used by filtfilt.
  std::size_t pad_length() const { return 3 * static_cast<std::size_t>(order + 1); }
};

/// Butterworth highpass via bilinear transform with prewarped cutoff,
/// normalized to unit gain at Nyquist.
inline IirFilter design_highpass_butterworth(int order, double cutoff_hz, double sample_rate) {
  if (order < 1) throw ConfigError("butterworth: order must be >= 1");
  if (!(sample_rate > 0)) throw ConfigError("butterworth: sample rate must be positive");
  if (!(cutoff_hz > 0) || cutoff_hz >= sample_rate / 2.0) {
    throw ConfigError("butterworth: cutoff must lie in (0, Nyquist)");
  }
  using cd = std::complex<double>;
  const double fs2 = 2.0 * sample_rate;
  const double wc = fs2 * std::tan(std::numbers::pi * cutoff_hz / sample_rate);

  IirFilter f;
  f.order = order;
  f.cutoff_hz = cutoff_hz;
  f.sample_rate = sample_rate;
  // Lowpass prototype poles in the upper half plane plus the real pole;
  // lowpass -> highpass maps s to wc / s, zeros go to s = 0 (z = 1).
  for (int k = 0; k < order / 2; ++k) {
    const double theta = std::numbers::pi * (2.0 * k + 1.0 + order) / (2.0 * order);
    const cd proto = std::polar(1.0, theta);
    const cd s = wc / proto;
    const cd z = (fs2 + s) / (fs2 - s);
    f.sections.push_back({1.0, -2.0, 1.0, -2.0 * z.real(), std::norm(z)});
  }
  if (order % 2 == 1) {
    const double s = -wc;
    const double z = (fs2 + s) / (fs2 - s);
    f.sections.push_back({1.0, -1.0, 0.0, -z, 0.0});
  }
  const double gain = f.magnitude(sample_rate / 2.0);
  auto& first = f.sections.front();
  first.b0 /= gain;
  first.b1 /= gain;
  first.b2 /= gain;
  return f;
}

namespace detail {

// Transposed direct form II, in place, starting from state zi (2 per section).
inline void sos_filter(const std::vector<Biquad>& sections, std::span<double> x,
                       std::vector<double> state) {
  for (std::size_t k = 0; k < sections.size(); ++k) {
    const Biquad& s = sections[k];
    double z0 = state[2 * k], z1 = state[2 * k + 1];
    for (double& v : x) {
      const double in = v;
      const double y = s.b0 * in + z0;
      z0 = s.b1 * in - s.a1 * y + z1;
      z1 = s.b2 * in - s.a2 * y;
      v = y;
    }
  }
}

// Steady-state initial conditions for a unit step, per section, scaled by the
// DC gain of the preceding sections.
inline std::vector<double> sos_step_state(const std::vector<Biquad>& sections) {
  std::vector<double> zi(2 * sections.size());
  double scale = 1.0;
  for (std::size_t k = 0; k < sections.size(); ++k) {
    const Biquad& s = sections[k];
    const double g = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    const double z1 = s.b2 - s.a2 * g;
    const double z0 = s.b1 - s.a1 * g + z1;
    zi[2 * k] = scale * z0;
    zi[2 * k + 1] = scale * z1;
    scale *= g;
  }
  return zi;
}

}  // namespace detail

/// Zero-phase forward-backward filtering with odd (reflect-and-negate) edge
/// padding of filter.pad_length() samples and step-response initial state.
inline std::vector<double> filtfilt(const IirFilter& filter, std::span<const double> signal) {
  const std::size_t pad = filter.pad_length();
  const std::size_t n = signal.size();
  if (n <= pad) {
    throw DataError("filtfilt: signal of " + std::to_string(n) + " samples is too short for " +
                    std::to_string(pad) + " samples of edge padding");
  }
  std::vector<double> ext(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) {
    ext[i] = 2.0 * signal[0] - signal[pad - i];
    ext[pad + n + i] = 2.0 * signal[n - 1] - signal[n - 2 - i];
  }
  std::copy(signal.begin(), signal.end(), ext.begin() + static_cast<std::ptrdiff_t>(pad));

  const std::vector<double> zi = detail::sos_step_state(filter.sections);
  auto scaled = [&](double x0) {
    std::vector<double> s = zi;
    for (double& v : s) v *= x0;
    return s;
  };
  detail::sos_filter(filter.sections, ext, scaled(ext.front()));
  std::reverse(ext.begin(), ext.end());
  detail::sos_filter(filter.sections, ext, scaled(ext.front()));
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad),
          ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

/// filtfilt applied to every channel.
inline Recording filtfilt(const IirFilter& filter, const Recording& recording, unsigned threads = 1) {
  Recording out = recording;
  parallel_for(recording.n_channels(), threads, [&](std::size_t c) {
    const auto y = filtfilt(filter, recording.samples.row(c));
    std::copy(y.begin(), y.end(), out.samples.row(c).begin());
  });
  return out;
}

// ---------------------------------------------------------------------------

/// channels x round(trial_s * sample_rate) samples starting at `onset`.
inline Matrix<double> crop_trial(const Recording& recording, std::size_t onset,
                                 double trial_s = 3.0) {
  const auto len = static_cast<std::size_t>(std::llround(trial_s * recording.sample_rate));
  if (onset > recording.n_samples() || len > recording.n_samples() - onset) {
    throw DataError("crop_trial: onset " + std::to_string(onset) + " + " + std::to_string(len) +
                    " samples exceeds recording of " + std::to_string(recording.n_samples()) +
                    " samples");
  }
  Matrix<double> out(recording.n_channels(), len);
  for (std::size_t c = 0; c < recording.n_channels(); ++c) {
    const auto src = recording.samples.row(c).subspan(onset, len);
    std::copy(src.begin(), src.end(), out.row(c).begin());
  }
  return out;
}

struct PreprocessOptions {
  int filter_order = 3;
  double cutoff_hz = 3.0;
  unsigned threads = 1;
};

/// Highpass filtfilt then CAR, for a recording already reduced to the common channels.
inline Recording filter_and_reference(const Recording& rec, const PreprocessOptions& opt) {
  const auto filter = design_highpass_butterworth(opt.filter_order, opt.cutoff_hz, rec.sample_rate);
  return common_average_reference(filtfilt(filter, rec, opt.threads));
}

/// Laplacian -> channel intersection -> highpass filtfilt -> CAR for a group
/// of subjects sharing one montage.
inline std::vector<Recording> preprocess(const std::vector<Recording>& recordings,
                                         const Montage& montage, const PreprocessOptions& opt) {
  std::vector<Recording> spatial;
  spatial.reserve(recordings.size());
  for (const auto& rec : recordings) spatial.push_back(laplacian(rec, montage));
  auto common = intersect_channels(spatial, montage);
  std::vector<Recording> out;
  out.reserve(common.recordings.size());
  for (auto& rec : common.recordings) out.push_back(filter_and_reference(rec, opt));
  return out;
}

}  // namespace posdec
