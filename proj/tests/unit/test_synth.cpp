#include <gtest/gtest.h>

#include "posdec/montage.hpp"
#include "posdec/spectral.hpp"
#include "posdec/synth.hpp"

using namespace posdec;

namespace {

void check_schedule(const std::vector<ScheduledTrial>& s, int sessions, int tps) {
  ASSERT_EQ(s.size(), static_cast<std::size_t>(sessions * tps));
  for (int sess = 1; sess <= sessions; ++sess) {
    std::array<int, kNumKeys> counts{};
    for (const auto& t : s)
      if (t.session == sess) ++counts[static_cast<std::size_t>(t.label - 1)];
    for (int c : counts) ASSERT_EQ(c, tps / kNumKeys);
  }
  for (std::size_t i = 1; i < s.size(); ++i) ASSERT_NE(s[i].label, s[i - 1].label) << i;
}

Montage small_montage() { return montage_from_labels({"Fz", "C3", "Cz", "C4", "Pz"}); }

double mean_band_power(const Recording& rec, std::size_t ch, const std::vector<TrialEvent>& ev, int label,
                       double from_s, double to_s) {
  double acc = 0;
  int n = 0;
  const auto a = static_cast<std::size_t>(from_s * rec.sample_rate);
  const auto len = static_cast<std::size_t>((to_s - from_s) * rec.sample_rate);
  for (const auto& e : ev) {
    if (e.label != label) continue;
    acc += std::exp(log_bandpower(rec.samples.row(ch).subspan(e.onset_sample + a, len), kBetaBand, rec.sample_rate).value);
    ++n;
  }
  return acc / n;
}

}  // namespace

TEST(Schedule, CountsAndNoRepeats) {
  Rng rng = seeded_rng(1, 1);
  check_schedule(generate_schedule(15, 90, rng), 15, 90);
  check_schedule(generate_schedule(2, 9, rng), 2, 9);
  check_schedule(generate_schedule(3, 27, rng), 3, 27);
}

TEST(Schedule, ManySmallSchedulesNeverRepeat) {
  Rng rng = seeded_rng(2, 2);
  for (int i = 0; i < 20000; ++i) {
    const auto s = generate_schedule(2, 9, rng);
    for (std::size_t j = 1; j < s.size(); ++j) ASSERT_NE(s[j].label, s[j - 1].label);
  }
}

TEST(Schedule, RejectsBadShape) {
  Rng rng = seeded_rng(3, 3);
  EXPECT_THROW(generate_schedule(1, 10, rng), ConfigError);
  EXPECT_THROW(generate_schedule(0, 9, rng), ConfigError);
}

TEST(Schedule, FeasibilityRule) {
  std::array<int, kNumKeys> c{};
  c[0] = 2;
  c[1] = 1;
  EXPECT_TRUE(detail::schedule_feasible(c, 2));   // 1 2 1
  EXPECT_FALSE(detail::schedule_feasible(c, 1));  // must start with 1 again
  c[0] = 3;
  EXPECT_FALSE(detail::schedule_feasible(c, 2));
}

TEST(Hold, UniformOnThreeToFour) {
  Rng rng = seeded_rng(4, 4);
  double sum = 0;
  for (int i = 0; i < 100000; ++i) {
    const double h = generate_hold_duration(rng);
    ASSERT_GE(h, 3.0);
    ASSERT_LE(h, 4.0);
    sum += h;
  }
  EXPECT_NEAR(sum / 100000, 3.5, 0.01);
  Rng a = seeded_rng(9, 9), b = seeded_rng(9, 9);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(generate_hold_duration(a), generate_hold_duration(b));
}

TEST(Noise, SmoothSizesAreMinimal) {
  auto smooth = [](std::size_t m) {
    for (std::size_t p : {2, 3, 5})
      while (m % p == 0) m /= p;
    return m == 1;
  };
  for (std::size_t n = 2; n < 3000; n += 7) {
    const auto m = detail::next_smooth_size(n);
    ASSERT_TRUE(smooth(m));
    for (std::size_t k = n; k < m; ++k) ASSERT_FALSE(smooth(k));
  }
}

TEST(Noise, ExactScaleAndFallingSpectrum) {
  Rng rng = seeded_rng(5, 5);
  const auto x = colored_noise(20000, 1.0, 10.0, 200.0, rng);
  double m = 0, v = 0;
  for (double s : x) m += s;
  m /= x.size();
  for (double s : x) v += (s - m) * (s - m);
  EXPECT_NEAR(m, 0.0, 1e-9);
  EXPECT_NEAR(std::sqrt(v / x.size()), 10.0, 1e-9);
  const double low = log_bandpower(x, {2, 6}, 200.0).value, high = log_bandpower(x, {40, 44}, 200.0).value;
  EXPECT_NEAR(low - high, std::log(10.0), 1.0);  // 1/f power: about a factor 10 between 4 and 42 Hz
}

TEST(Subject, EventsRecordingsAndTruth) {
  const auto mont = small_montage();
  Rng rng = seeded_rng(6, 6);
  auto sched = generate_schedule(2, 18, rng);
  SubjectOptions opt;
  opt.subject_id = "S07";
  opt.drop_channels = {"Fz"};
  opt.truncate_trials = 4;
  const auto s = generate_subject(mont, sched, EffectSpec{}, 200.0, 11, 0, opt);
  ASSERT_EQ(s.events.size(), 32u);
  EXPECT_EQ(s.task.channels, (std::vector<std::string>{"C3", "Cz", "C4", "Pz"}));
  EXPECT_EQ(s.rest.channels, s.task.channels);
  EXPECT_GE(s.rest.duration_s(), 60.0);
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    EXPECT_EQ(s.events[i].label, sched[i].label);
    EXPECT_EQ(s.events[i].session, sched[i].session);
    if (i > 0) EXPECT_GE(s.events[i].onset_sample - s.events[i - 1].onset_sample, 700u);
  }
  EXPECT_GE(s.task.n_samples(), s.events.back().onset_sample + 600);
  EXPECT_EQ(s.truth.truncated_trials, 4u);
  EXPECT_GE(s.truth.gain, 0.8);
  EXPECT_LE(s.truth.gain, 1.2);
}

TEST(Subject, DeterministicAndThreadIndependent) {
  const auto mont = small_montage();
  Rng r1 = seeded_rng(7, 7);
  const auto sched = generate_schedule(1, 18, r1);
  SubjectOptions one, four;
  four.threads = 4;
  const auto a = generate_subject(mont, sched, EffectSpec{}, 200.0, 3, 2, one);
  const auto b = generate_subject(mont, sched, EffectSpec{}, 200.0, 3, 2, four);
  EXPECT_EQ(a.task.samples.data(), b.task.samples.data());
  EXPECT_EQ(a.rest.samples.data(), b.rest.samples.data());
  const auto c = generate_subject(mont, sched, EffectSpec{}, 200.0, 4, 2, one);
  EXPECT_NE(a.task.samples.data(), c.task.samples.data());
}

TEST(Subject, BetaBurstIsEarlyAndOnEffectChannel) {
  const auto mont = small_montage();
  Rng rng = seeded_rng(8, 8);
  const auto sched = generate_schedule(3, 27, rng);
  const auto s = generate_subject(mont, sched, EffectSpec{}, 200.0, 21, 0);
  const auto c3 = *s.task.channel_index("C3"), pz = *s.task.channel_index("Pz");
  const double early = mean_band_power(s.task, c3, s.events, 9, 0, 1), late = mean_band_power(s.task, c3, s.events, 9, 2, 3);
  EXPECT_GT(early, 2 * late);
  const double pz_early = mean_band_power(s.task, pz, s.events, 9, 0, 1), pz_late = mean_band_power(s.task, pz, s.events, 9, 2, 3);
  EXPECT_LT(pz_early, 1.5 * pz_late);
  EXPECT_GT(mean_band_power(s.task, c3, s.events, 9, 0, 1), mean_band_power(s.task, c3, s.events, 1, 0, 1));
}

TEST(Subject, RestingMuPeakIsFound) {
  const auto mont = small_montage();
  Rng rng = seeded_rng(9, 9);
  const auto sched = generate_schedule(1, 9, rng);
  for (std::size_t idx = 0; idx < 3; ++idx) {
    const auto s = generate_subject(mont, sched, EffectSpec{}, 200.0, 5, idx);
    const Band b = identify_mu_band(s.rest, {"C3", "C4"});
    EXPECT_LE(b.low, s.truth.mu_frequency_hz) << idx;
    EXPECT_GE(b.high, s.truth.mu_frequency_hz) << idx;
  }
}

TEST(Subject, InvalidSpecIsRejected) {
  const auto mont = small_montage();
  Rng rng = seeded_rng(10, 10);
  const auto sched = generate_schedule(1, 9, rng);
  EffectSpec e;
  e.class_gains[3] = 0.0;
  EXPECT_THROW(generate_subject(mont, sched, e, 200.0, 1, 0), ConfigError);
  e = EffectSpec{};
  e.effect_channel = "T7";
  EXPECT_THROW(generate_subject(mont, sched, e, 200.0, 1, 0), ConfigError);
  SubjectOptions opt;
  opt.truncate_trials = 10;
  EXPECT_THROW(generate_subject(mont, sched, EffectSpec{}, 200.0, 1, 0, opt), ConfigError);
}

TEST(Profiles, ShapesAndTrialArithmetic) {
  const auto desk = synth_profile("desk");
  EXPECT_EQ(desk.n_subjects, 4);
  EXPECT_EQ(desk.sessions * desk.trials_per_session, 180);
  EXPECT_EQ(desk.channels.size(), 32u);
  EXPECT_EQ(desk.sample_rate, 500.0);

  const auto full = synth_profile("full");
  EXPECT_EQ(full.channels.size(), 108u);
  std::size_t total = 0;
  std::vector<std::string> common = full.channels;
  for (int i = 0; i < full.n_subjects; ++i) {
    const auto o = subject_options(full, i);
    total += static_cast<std::size_t>(full.sessions * full.trials_per_session) - o.truncate_trials;
    for (const auto& d : o.drop_channels) common.erase(std::find(common.begin(), common.end(), d));
  }
  EXPECT_EQ(total, 20u * 1350u - 1u - 300u);
  EXPECT_EQ(common.size(), 106u);
  EXPECT_EQ(common, default_channel_labels());
  EXPECT_THROW(synth_profile("huge"), ConfigError);
  EXPECT_EQ(subject_name(0), "S01");
  EXPECT_EQ(subject_name(19), "S20");
}
