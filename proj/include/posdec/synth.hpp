#pragma once

// Synthetic EEG with the key-press paradigm's trial structure and a planted,
// class-dependent beta burst.
//
// Signal model per subject:
//   background   independent 1/f^a noise per channel
//   burst        Hann-enveloped beta sinusoid at the effect channel inside the
//                effect window of every trial, amplitude = burst * gain(label)
//   tonic        optional beta sinusoid over the whole hold, tonic * tonic_gain(label)
//   mu           sinusoid at the mu channels (strong at rest, weak during the task)
// and the whole recording scaled by a per-subject gain.

#include <array>
#include <fftw3.h>
#include <numbers>

#include "posdec/montage.hpp"
#include "posdec/recording_io.hpp"
#include "posdec/spectral.hpp"

namespace posdec {

struct EffectSpec {
  std::string effect_channel = "C3";
  Band effect_band = kBetaBand;
  double window_start_s = 0.0;
  double window_end_s = 1.0;
  std::array<double, kNumKeys> class_gains = ladder_gains(1.15);
  double burst_amplitude = 3.0;
  double burst_jitter = 0.0;  ///< sd of a per-trial log-normal amplitude factor

  double tonic_amplitude = 0.0;
  std::array<double, kNumKeys> tonic_gains = ladder_gains(1.0);

  std::vector<std::string> mu_channels = {"C3", "C4"};
  double mu_rest_amplitude = 4.0;
  double mu_task_amplitude = 1.0;
  std::array<double, kNumKeys> mu_gains = ladder_gains(1.0);

  double noise_exponent = 1.0;
  double noise_amplitude = 10.0;
  double subject_gain_jitter = 0.2;  ///< per-subject gain drawn from U[1-j, 1+j]

  static constexpr std::array<double, kNumKeys> ladder_gains(double ratio) {
    std::array<double, kNumKeys> g{};
    double v = 1.0;
    for (auto& x : g) {
      x = v;
      v *= ratio;
    }
    return g;
  }

  double gain(int label) const { return class_gains.at(static_cast<std::size_t>(label - 1)); }

  void validate(double sample_rate) const {
    effect_band.validate(sample_rate);
    if (!(window_end_s > window_start_s) || window_start_s < 0) {
      throw ConfigError("synth: effect window must satisfy 0 <= start < end");
    }
    auto positive = [](const auto& gains, const char* what) {
      for (double g : gains) {
        if (!(g > 0) || !std::isfinite(g)) throw ConfigError(std::string("synth: ") + what + " must be positive");
      }
    };
    positive(class_gains, "class gains");
    positive(tonic_gains, "tonic gains");
    positive(mu_gains, "mu gains");
    for (double a : {burst_amplitude, burst_jitter, tonic_amplitude, mu_rest_amplitude, mu_task_amplitude,
                     noise_amplitude, noise_exponent}) {
      if (!(a >= 0) || !std::isfinite(a)) throw ConfigError("synth: amplitudes and exponents must be >= 0");
    }
    if (!(subject_gain_jitter >= 0 && subject_gain_jitter < 1)) {
      throw ConfigError("synth: subject gain jitter must lie in [0, 1)");
    }
  }
};

struct ScheduledTrial {
  int label = 1;
  int session = 1;
  friend bool operator==(const ScheduledTrial&, const ScheduledTrial&) = default;
};

namespace detail {

// A sequence of `remaining` trials with the given per-key counts exists
// without immediate repeats and without starting on `prev` iff no key other
// than prev exceeds ceil(remaining/2) and prev itself fits in floor(remaining/2).
inline bool schedule_feasible(const std::array<int, kNumKeys>& counts, int prev) {
  int remaining = 0;
  for (int c : counts) remaining += c;
  for (int k = 0; k < kNumKeys; ++k) {
    const int limit = (k + 1 == prev) ? remaining / 2 : (remaining + 1) / 2;
    if (counts[static_cast<std::size_t>(k)] > limit) return false;
  }
  return true;
}

}  // namespace detail

/// Per session every key appears trials_per_session/9 times; no key follows
/// itself, also across session boundaries.
inline std::vector<ScheduledTrial> generate_schedule(int sessions, int trials_per_session, Rng& rng) {
  if (sessions < 1) throw ConfigError("schedule: need at least one session");
  if (trials_per_session < kNumKeys || trials_per_session % kNumKeys != 0) {
    throw ConfigError("schedule: trials per session must be a positive multiple of 9");
  }
  constexpr int kMaxAttempts = 100;
  std::vector<ScheduledTrial> out;
  out.reserve(static_cast<std::size_t>(sessions * trials_per_session));
  int prev = 0;
  for (int s = 1; s <= sessions; ++s) {
    bool done = false;
    for (int attempt = 0; attempt < kMaxAttempts && !done; ++attempt) {
      std::array<int, kNumKeys> counts;
      counts.fill(trials_per_session / kNumKeys);
      std::vector<ScheduledTrial> session;
      int last = prev;
      bool stuck = false;
      for (int t = 0; t < trials_per_session && !stuck; ++t) {
        std::array<int, kNumKeys> options{};
        std::size_t n_options = 0;
        for (int k = 1; k <= kNumKeys; ++k) {
          auto& c = counts[static_cast<std::size_t>(k - 1)];
          if (k == last || c == 0) continue;
          --c;
          if (detail::schedule_feasible(counts, k)) options[n_options++] = k;
          ++c;
        }
        if (n_options == 0) {
          stuck = true;
          break;
        }
        const int pick = options[rng.uniform_index(n_options)];
        --counts[static_cast<std::size_t>(pick - 1)];
        session.push_back({pick, s});
        last = pick;
      }
      if (!stuck) {
        out.insert(out.end(), session.begin(), session.end());
        prev = last;
        done = true;
      }
    }
    if (!done) throw DataError("schedule: no valid ordering found for session " + std::to_string(s));
  }
  return out;
}

/// Key-hold duration in seconds, uniform on [3, 4].
inline double generate_hold_duration(Rng& rng) { return rng.uniform(3.0, 4.0); }

namespace detail {

inline std::size_t next_smooth_size(std::size_t n) {
  for (std::size_t m = std::max<std::size_t>(n, 2);; ++m) {
    std::size_t r = m;
    for (std::size_t p : {2, 3, 5}) {
      while (r % p == 0) r /= p;
    }
    if (r == 1) return m;
  }
}

}  // namespace detail

/// n samples of noise with power spectrum ~ 1/f^exponent, zero mean and
/// standard deviation `amplitude` (exactly, over the returned samples).
inline std::vector<double> colored_noise(std::size_t n, double exponent, double amplitude, double sample_rate,
                                         Rng& rng) {
  std::vector<double> out(n, 0.0);
  if (n < 2 || amplitude == 0.0) return out;
  const std::size_t m = detail::next_smooth_size(n);
  std::vector<std::array<double, 2>> spec(m / 2 + 1, {0.0, 0.0});
  for (std::size_t k = 1; k < spec.size(); ++k) {
    const double f = static_cast<double>(k) * sample_rate / static_cast<double>(m);
    const double scale = std::pow(f, -exponent / 2.0);
    spec[k][0] = scale * rng.normal();
    spec[k][1] = (2 * k == m) ? 0.0 : scale * rng.normal();
  }
  std::vector<double> full(m);
  fftw_execute_dft_c2r(detail::FftPlanCache::instance().inverse_plan(m),
                       reinterpret_cast<fftw_complex*>(spec.data()), full.data());
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += full[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += (full[i] - mean) * (full[i] - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) out[i] = sd > 0 ? (full[i] - mean) * amplitude / sd : 0.0;
  return out;
}

struct SubjectTruth {
  std::string subject_id;
  double gain = 1.0;
  double mu_frequency_hz = 10.5;
  std::vector<std::string> dropped_channels;
  std::size_t truncated_trials = 0;
};

struct SyntheticSubject {
  Recording task;
  Recording rest;
  std::vector<TrialEvent> events;
  SubjectTruth truth;
};

struct SubjectOptions {
  std::string subject_id = "S01";
  double rest_s = 60.0;
  std::vector<std::string> drop_channels;
  std::size_t truncate_trials = 0;  ///< trials removed from the end of the schedule
  unsigned threads = 1;
};

// Trial timing.
inline constexpr double kLeadInS = 2.0;
inline constexpr double kTransitionS = 0.5;
inline constexpr double kSessionBreakS = 5.0;
inline constexpr double kTailS = 2.0;

/// Generates one subject. All randomness comes from streams of `seed` keyed by
/// `subject_index`, so subjects can be produced in any order or in parallel.
inline SyntheticSubject generate_subject(const Montage& montage, std::vector<ScheduledTrial> schedule,
                                         const EffectSpec& effect, double sample_rate, std::uint64_t seed,
                                         std::size_t subject_index, const SubjectOptions& opt = {}) {
  effect.validate(sample_rate);
  if (opt.truncate_trials > schedule.size()) throw ConfigError("synth: truncation exceeds the schedule");
  schedule.resize(schedule.size() - opt.truncate_trials);
  const std::size_t effect_ch = montage.require(effect.effect_channel);
  std::vector<std::size_t> mu_ch;
  for (const auto& name : effect.mu_channels) mu_ch.push_back(montage.require(name));
  for (const auto& name : opt.drop_channels) montage.require(name);

  Rng rng = seeded_rng(seed, stream_id(StreamDomain::synth_subject, subject_index));
  SyntheticSubject out;
  out.truth.subject_id = opt.subject_id;
  out.truth.gain = rng.uniform(1.0 - effect.subject_gain_jitter, 1.0 + effect.subject_gain_jitter);
  out.truth.mu_frequency_hz = 9.5 + static_cast<double>(rng.uniform_index(3));
  out.truth.dropped_channels = opt.drop_channels;
  out.truth.truncated_trials = opt.truncate_trials;

  struct TrialPlan {
    double onset_s, hold_s, freq, phase, jitter, tonic_freq, tonic_phase;
  };
  std::vector<TrialPlan> plan;
  plan.reserve(schedule.size());
  double cursor = kLeadInS;
  for (std::size_t t = 0; t < schedule.size(); ++t) {
    if (t > 0 && schedule[t].session != schedule[t - 1].session) cursor += kSessionBreakS;
    TrialPlan p{};
    p.onset_s = cursor;
    p.hold_s = generate_hold_duration(rng);
    p.freq = rng.uniform(effect.effect_band.low + 1.0, effect.effect_band.high - 1.0);
    p.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    p.jitter = std::exp(effect.burst_jitter * rng.normal());
    p.tonic_freq = rng.uniform(effect.effect_band.low + 1.0, effect.effect_band.high - 1.0);
    p.tonic_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    plan.push_back(p);
    cursor += p.hold_s + kTransitionS;
  }
  const double mu_phase_task = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double mu_phase_rest = rng.uniform(0.0, 2.0 * std::numbers::pi);

  const auto n_task = static_cast<std::size_t>(std::ceil((cursor + kTailS) * sample_rate));
  const auto n_rest = static_cast<std::size_t>(std::ceil(opt.rest_s * sample_rate));
  for (std::size_t t = 0; t < schedule.size(); ++t) {
    out.events.push_back({static_cast<std::size_t>(std::llround(plan[t].onset_s * sample_rate)), schedule[t].label,
                          schedule[t].session});
  }

  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < montage.size(); ++c) {
    const auto& name = montage.channels()[c];
    if (std::find(opt.drop_channels.begin(), opt.drop_channels.end(), name) == opt.drop_channels.end()) {
      kept.push_back(c);
    }
  }
  for (Recording* rec : {&out.task, &out.rest}) {
    rec->subject_id = opt.subject_id;
    rec->sample_rate = sample_rate;
    for (std::size_t c : kept) rec->channels.push_back(montage.channels()[c]);
  }
  out.task.samples = Matrix<double>(kept.size(), n_task);
  out.rest.samples = Matrix<double>(kept.size(), n_rest);

  const double two_pi = 2.0 * std::numbers::pi;
  const double gain = out.truth.gain;
  const double mu_f = out.truth.mu_frequency_hz;
  parallel_for(kept.size(), opt.threads, [&](std::size_t i) {
    const std::size_t c = kept[i];
    Rng task_rng = seeded_rng(seed, stream_id(StreamDomain::synth_channel, subject_index, 2 * c));
    Rng rest_rng = seeded_rng(seed, stream_id(StreamDomain::synth_channel, subject_index, 2 * c + 1));
    auto task = colored_noise(n_task, effect.noise_exponent, effect.noise_amplitude, sample_rate, task_rng);
    auto rest = colored_noise(n_rest, effect.noise_exponent, effect.noise_amplitude, sample_rate, rest_rng);
    const bool is_mu = std::find(mu_ch.begin(), mu_ch.end(), c) != mu_ch.end();
    if (is_mu) {
      for (std::size_t s = 0; s < n_rest; ++s) {
        rest[s] += effect.mu_rest_amplitude * std::sin(two_pi * mu_f * static_cast<double>(s) / sample_rate +
                                                       mu_phase_rest);
      }
    }
    for (std::size_t t = 0; t < plan.size(); ++t) {
      const auto& p = plan[t];
      const int label = schedule[t].label;
      const auto first = static_cast<std::size_t>(std::llround(p.onset_s * sample_rate));
      const auto hold_n = static_cast<std::size_t>(std::llround(p.hold_s * sample_rate));
      if (is_mu && effect.mu_task_amplitude > 0) {
        const double a = effect.mu_task_amplitude * effect.mu_gains[static_cast<std::size_t>(label - 1)];
        for (std::size_t s = first; s < first + hold_n && s < n_task; ++s) {
          task[s] += a * std::sin(two_pi * mu_f * static_cast<double>(s) / sample_rate + mu_phase_task);
        }
      }
      if (c != effect_ch) continue;
      if (effect.tonic_amplitude > 0) {
        const double a = effect.tonic_amplitude * effect.tonic_gains[static_cast<std::size_t>(label - 1)];
        for (std::size_t s = 0; s < hold_n && first + s < n_task; ++s) {
          task[first + s] += a * std::sin(two_pi * p.tonic_freq * static_cast<double>(s) / sample_rate + p.tonic_phase);
        }
      }
      if (effect.burst_amplitude > 0) {
        const double a = effect.burst_amplitude * effect.gain(label) * p.jitter;
        const auto b0 = first + static_cast<std::size_t>(std::llround(effect.window_start_s * sample_rate));
        const auto bn = static_cast<std::size_t>(
            std::llround((effect.window_end_s - effect.window_start_s) * sample_rate));
        for (std::size_t s = 0; s < bn && b0 + s < n_task; ++s) {
          const double env = 0.5 - 0.5 * std::cos(two_pi * static_cast<double>(s) / static_cast<double>(bn));
          task[b0 + s] += a * env * std::sin(two_pi * p.freq * static_cast<double>(s) / sample_rate + p.phase);
        }
      }
    }
    for (std::size_t s = 0; s < n_task; ++s) out.task.samples(i, s) = gain * task[s];
    for (std::size_t s = 0; s < n_rest; ++s) out.rest.samples(i, s) = gain * rest[s];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Scale profiles.

struct SynthProfile {
  std::string name;
  int n_subjects = 4;
  int sessions = 2;
  int trials_per_session = 90;
  double sample_rate = 500.0;
  std::vector<std::string> channels;
  double rest_s = 60.0;
  std::vector<std::pair<int, std::string>> drop_channels;  ///< (subject index, channel)
  std::vector<std::pair<int, std::size_t>> truncations;    ///< (subject index, trials)
};

/// Labels of the full profile: the 106 default channels plus AF1 and AF2,
/// each missing from one subject.
inline std::vector<std::string> full_profile_labels() {
  auto labels = default_channel_labels();
  const auto at = std::find(labels.begin(), labels.end(), "AFz");
  labels.insert(at, "AF1");
  labels.insert(std::find(labels.begin(), labels.end(), "AF4"), "AF2");
  return labels;
}

inline SynthProfile synth_profile(std::string_view name) {
  SynthProfile p;
  p.name = std::string(name);
  if (name == "desk") {
    p.channels = desk_channel_labels();
  } else if (name == "full") {
    p.n_subjects = 20;
    p.sessions = 15;
    p.sample_rate = 250.0;
    p.rest_s = 300.0;
    p.channels = full_profile_labels();
    p.drop_channels = {{0, "AF1"}, {1, "AF2"}};
    p.truncations = {{2, 1}, {3, 300}};
  } else if (name == "tiny") {
    p.n_subjects = 3;
    p.sessions = 1;
    p.trials_per_session = 27;
    p.sample_rate = 200.0;
    p.channels = desk_channel_labels();
  } else {
    throw ConfigError("unknown synth profile '" + std::string(name) + "' (expected desk, full or tiny)");
  }
  return p;
}

inline std::string subject_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "S%02d", index + 1);
  return buf;
}

inline SubjectOptions subject_options(const SynthProfile& p, int index) {
  SubjectOptions o;
  o.subject_id = subject_name(index);
  o.rest_s = p.rest_s;
  for (const auto& [s, ch] : p.drop_channels) {
    if (s == index) o.drop_channels.push_back(ch);
  }
  for (const auto& [s, n] : p.truncations) {
    if (s == index) o.truncate_trials += n;
  }
  return o;
}

/// Generates subject `index` of a profile, schedule included.
inline SyntheticSubject generate_profile_subject(const SynthProfile& p, const Montage& montage,
                                                 const EffectSpec& effect, std::uint64_t seed, int index,
                                                 unsigned threads = 1) {
  Rng sched_rng = seeded_rng(seed, stream_id(StreamDomain::synth_schedule, static_cast<std::uint64_t>(index)));
  auto schedule = generate_schedule(p.sessions, p.trials_per_session, sched_rng);
  auto opt = subject_options(p, index);
  opt.threads = threads;
  return generate_subject(montage, std::move(schedule), effect, p.sample_rate, seed,
                          static_cast<std::size_t>(index), opt);
}

inline std::string format_truth(const SynthProfile& p, const EffectSpec& e, std::uint64_t seed,
                                const std::vector<SubjectTruth>& subjects) {
  std::ostringstream out;
  out << "seed=" << seed << '\n';
  out << "profile=" << p.name << '\n';
  out << "subjects=" << p.n_subjects << '\n';
  out << "sessions=" << p.sessions << '\n';
  out << "trials_per_session=" << p.trials_per_session << '\n';
  out << "sample_rate=" << io::fmt_double(p.sample_rate) << '\n';
  out << "channels=" << p.channels.size() << '\n';
  out << "effect.channel=" << e.effect_channel << '\n';
  out << "effect.band=" << io::fmt_double(e.effect_band.low) << '-' << io::fmt_double(e.effect_band.high) << '\n';
  out << "effect.window_s=" << io::fmt_double(e.window_start_s) << '-' << io::fmt_double(e.window_end_s) << '\n';
  out << "effect.class_gains=";
  for (std::size_t k = 0; k < e.class_gains.size(); ++k) out << (k ? "," : "") << io::fmt_double(e.class_gains[k]);
  out << '\n';
  out << "effect.burst_amplitude=" << io::fmt_double(e.burst_amplitude) << '\n';
  out << "effect.tonic_amplitude=" << io::fmt_double(e.tonic_amplitude) << '\n';
  out << "noise.exponent=" << io::fmt_double(e.noise_exponent) << '\n';
  out << "noise.amplitude=" << io::fmt_double(e.noise_amplitude) << '\n';
  for (const auto& s : subjects) {
    out << "subject." << s.subject_id << ".gain=" << io::fmt_double(s.gain) << '\n';
    out << "subject." << s.subject_id << ".mu_hz=" << io::fmt_double(s.mu_frequency_hz) << '\n';
    out << "subject." << s.subject_id << ".truncated_trials=" << s.truncated_trials << '\n';
    out << "subject." << s.subject_id << ".dropped=";
    for (std::size_t i = 0; i < s.dropped_channels.size(); ++i) out << (i ? "," : "") << s.dropped_channels[i];
    out << '\n';
  }
  return out.str();
}

}  // namespace posdec
