#include <gtest/gtest.h>

#include <numbers>

#include "posdec/dsp.hpp"
#include "posdec/montage.hpp"

using namespace posdec;

namespace {

Recording make_recording(const std::vector<std::string>& channels, std::size_t n, double fs = 500.0) {
  Recording r;
  r.subject_id = "T";
  r.sample_rate = fs;
  r.channels = channels;
  r.samples = Matrix<double>(channels.size(), n, 0.0);
  return r;
}

Recording random_recording(const Montage& m, std::size_t n, std::uint64_t stream) {
  Recording r = make_recording(m.channels(), n);
  Rng rng = seeded_rng(77, stream);
  for (double& v : r.samples.data()) v = rng.normal();
  return r;
}

// Four channels on a ring: A-B, A-C, B-D, C-D.
Montage ring_montage() {
  return Montage({"A", "B", "C", "D"}, {{0, 0}, {1, 0}, {0, 1}, {1, 1}}, {{1, 2}, {0, 3}, {0, 3}, {1, 2}});
}

std::vector<double> sine(double f, double fs, std::size_t n, double amp = 1.0, double phase = 0.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2 * std::numbers::pi * f * static_cast<double>(i) / fs + phase);
  return x;
}

// Magnitude of an order-N Butterworth highpass after the bilinear transform
// with the cutoff prewarped: 1 / sqrt(1 + (tan(pi fc/fs) / tan(pi f/fs))^(2N)).
double butterworth_oracle(int order, double fc, double fs, double f) {
  if (f == 0.0) return 0.0;
  const double r = std::tan(std::numbers::pi * fc / fs) / std::tan(std::numbers::pi * f / fs);
  return 1.0 / std::sqrt(1.0 + std::pow(r, 2 * order));
}

}  // namespace

TEST(Laplacian, CommonModeIsRemoved) {
  const Montage m = desk_montage();
  Recording r = make_recording(m.channels(), 200);
  const auto s = sine(7.0, 500.0, 200);
  for (std::size_t c = 0; c < m.size(); ++c) std::copy(s.begin(), s.end(), r.samples.row(c).begin());
  const auto out = laplacian(r, m);
  for (double v : out.samples.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Laplacian, ToyMontageImpulse) {
  const Montage m = ring_montage();
  Recording r = make_recording(m.channels(), 1);
  r.samples(0, 0) = 1.0;
  const auto out = laplacian(r, m);
  EXPECT_DOUBLE_EQ(out.samples(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(out.samples(1, 0), -0.5);  // B's neighbors are A and D
  EXPECT_DOUBLE_EQ(out.samples(2, 0), -0.5);
  EXPECT_DOUBLE_EQ(out.samples(3, 0), 0.0);
}

TEST(Laplacian, UsesOnlyPresentNeighbors) {
  const Montage m = ring_montage();
  Recording r = make_recording({"A", "B", "D"}, 1);
  r.samples(0, 0) = 4.0;  // A, whose present neighbor is only B
  r.samples(1, 0) = 2.0;
  const auto out = laplacian(r, m);
  EXPECT_DOUBLE_EQ(out.samples(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(out.samples(1, 0), 2.0 - 2.0);  // B: mean of A (4) and D (0)
}

TEST(Laplacian, IsolatedChannelIsConfigError) {
  const Montage m = ring_montage();
  Recording r = make_recording({"A", "D"}, 4);
  try {
    laplacian(r, m);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("'A'"), std::string::npos);
  }
}

TEST(Laplacian, IsLinear) {
  const Montage m = desk_montage();
  const auto x = random_recording(m, 300, 1), y = random_recording(m, 300, 2);
  const double a = 1.7, b = -0.4;
  Recording comb = x;
  for (std::size_t i = 0; i < comb.samples.data().size(); ++i) {
    comb.samples.data()[i] = a * x.samples.data()[i] + b * y.samples.data()[i];
  }
  const auto lx = laplacian(x, m), ly = laplacian(y, m), lc = laplacian(comb, m);
  for (std::size_t i = 0; i < lc.samples.data().size(); ++i) {
    EXPECT_NEAR(lc.samples.data()[i], a * lx.samples.data()[i] + b * ly.samples.data()[i], 1e-9);
  }
}

TEST(Car, TwoChannelExample) {
  Recording r = make_recording({"A", "B"}, 1);
  r.samples(0, 0) = 3;
  r.samples(1, 0) = 1;
  const auto out = common_average_reference(r);
  EXPECT_DOUBLE_EQ(out.samples(0, 0), 1);
  EXPECT_DOUBLE_EQ(out.samples(1, 0), -1);
}

TEST(Car, ZeroSumInputIsUnchanged) {
  Recording r = make_recording({"A", "B", "C"}, 3);
  const double v[3][3] = {{1, -2, 0.5}, {-3, 1, 0.25}, {2, 1, -0.75}};
  for (int c = 0; c < 3; ++c) {
    for (int t = 0; t < 3; ++t) r.samples(c, t) = v[c][t];
  }
  const auto out = common_average_reference(r);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(out.samples.data()[i], r.samples.data()[i], 1e-15);
}

TEST(Car, IdempotentLinearAndZeroColumns) {
  const Montage m = desk_montage();
  const auto x = random_recording(m, 250, 3), y = random_recording(m, 250, 4);
  const auto once = common_average_reference(x);
  const auto twice = common_average_reference(once);
  for (std::size_t i = 0; i < once.samples.data().size(); ++i) {
    EXPECT_NEAR(once.samples.data()[i], twice.samples.data()[i], 1e-9);
  }
  for (std::size_t t = 0; t < once.n_samples(); ++t) {
    double s = 0;
    for (std::size_t c = 0; c < once.n_channels(); ++c) s += once.samples(c, t);
    EXPECT_NEAR(s, 0.0, 1e-9);
  }
  Recording comb = x;
  for (std::size_t i = 0; i < comb.samples.data().size(); ++i) {
    comb.samples.data()[i] = 2.5 * x.samples.data()[i] - 0.3 * y.samples.data()[i];
  }
  const auto cy = common_average_reference(y), cc = common_average_reference(comb);
  for (std::size_t i = 0; i < cc.samples.data().size(); ++i) {
    EXPECT_NEAR(cc.samples.data()[i], 2.5 * once.samples.data()[i] - 0.3 * cy.samples.data()[i], 1e-9);
  }
}

TEST(Car, NeedsTwoChannels) { EXPECT_THROW(common_average_reference(make_recording({"A"}, 5)), DataError); }

TEST(Intersect, IdentityAndOverlap) {
  const Montage m = ring_montage();
  auto same = intersect_channels({make_recording({"A", "B"}, 3), make_recording({"B", "A"}, 3)}, m);
  EXPECT_EQ(same.channels, (std::vector<std::string>{"A", "B"}));
  auto overlap = intersect_channels({make_recording({"A", "B", "C"}, 3), make_recording({"B", "C", "D"}, 3)}, m);
  EXPECT_EQ(overlap.channels, (std::vector<std::string>{"B", "C"}));
  for (const auto& r : overlap.recordings) EXPECT_EQ(r.channels, overlap.channels);
}

TEST(Intersect, KeepsSamplesOfSelectedChannels) {
  const Montage m = ring_montage();
  Recording r = make_recording({"D", "B"}, 2);
  r.samples(0, 1) = 5.0;
  r.samples(1, 0) = 7.0;
  const auto out = intersect_channels({r}, m);
  ASSERT_EQ(out.channels, (std::vector<std::string>{"B", "D"}));
  EXPECT_EQ(out.recordings[0].samples(0, 0), 7.0);
  EXPECT_EQ(out.recordings[0].samples(1, 1), 5.0);
}

TEST(Intersect, EmptyIntersectionIsError) {
  const Montage m = ring_montage();
  EXPECT_THROW(intersect_channels({make_recording({"A"}, 3), make_recording({"D"}, 3)}, m), DataError);
}

TEST(Butterworth, MatchesAnalyticMagnitude) {
  for (double fs : {250.0, 500.0, 2000.0}) {
    for (int order : {1, 2, 3, 4, 5}) {
      const auto f = design_highpass_butterworth(order, 3.0, fs);
      EXPECT_LT(f.max_pole_radius(), 1.0);
      for (double hz : {0.5, 1.0, 3.0, 6.0, 10.0, 25.0, 60.0, fs / 2 - 1}) {
        EXPECT_NEAR(f.magnitude(hz), butterworth_oracle(order, 3.0, fs, hz), 1e-9) << fs << ' ' << order << ' ' << hz;
      }
    }
  }
}

TEST(Butterworth, PaperDesignPoints) {
  const auto f = design_highpass_butterworth(3, 3.0, 2000.0);
  EXPECT_EQ(f.sections.size(), 2u);
  EXPECT_NEAR(f.magnitude(3.0), 1.0 / std::sqrt(2.0), 0.01 / std::sqrt(2.0));
  EXPECT_LE(f.magnitude(0.0), 1e-10);
  EXPECT_NEAR(f.magnitude(100.0), 1.0, 0.01);
  double prev = 0.0;
  for (double hz = 0.1; hz < 999.0; hz += 0.7) {
    const double m = f.magnitude(hz);
    EXPECT_GE(m, prev - 1e-12);
    prev = m;
  }
}

TEST(Butterworth, RejectsBadCutoff) {
  EXPECT_THROW(design_highpass_butterworth(3, 250.0, 500.0), ConfigError);
  EXPECT_THROW(design_highpass_butterworth(3, 0.0, 500.0), ConfigError);
  EXPECT_THROW(design_highpass_butterworth(0, 3.0, 500.0), ConfigError);
}

TEST(Filtfilt, RejectsDc) {
  const auto f = design_highpass_butterworth(3, 3.0, 500.0);
  std::vector<double> x(5000, 2.0);
  const auto y = filtfilt(f, x);
  ASSERT_EQ(y.size(), x.size());
  for (std::size_t i = 500; i < 4500; ++i) ASSERT_LT(std::abs(y[i]), 1e-6 * 2.0);
}

TEST(Filtfilt, PassbandAmplitudeMatchesSquaredResponse) {
  const double fs = 2000.0;
  const auto f = design_highpass_butterworth(3, 3.0, fs);
  for (double hz : {10.0, 25.0, 40.0}) {
    const auto x = sine(hz, fs, 6000);
    const auto y = filtfilt(f, x);
    double peak = 0;
    for (std::size_t i = 1000; i < 5000; ++i) peak = std::max(peak, std::abs(y[i]));
    const double expected = std::pow(butterworth_oracle(3, 3.0, fs, hz), 2);
    EXPECT_NEAR(peak, expected, 0.01) << hz;
    if (hz == 25.0) EXPECT_NEAR(peak, 1.0, 0.01);
  }
}

TEST(Filtfilt, ZeroLag) {
  const double fs = 2000.0;
  const auto f = design_highpass_butterworth(3, 3.0, fs);
  for (double hz : {10.0, 25.0, 40.0}) {
    const auto x = sine(hz, fs, 6000, 1.0, 0.3);
    const auto y = filtfilt(f, x);
    int best_lag = 99;
    double best = -1e300;
    for (int lag = -40; lag <= 40; ++lag) {
      double s = 0;
      for (int i = 1000; i < 5000; ++i) s += x[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i + lag)];
      if (s > best) best = s, best_lag = lag;
    }
    EXPECT_EQ(best_lag, 0) << hz;
  }
}

TEST(Filtfilt, TimeReversalSymmetry) {
  const auto f = design_highpass_butterworth(3, 3.0, 500.0);
  Rng rng = seeded_rng(1, 2);
  std::vector<double> x(8000);
  for (double& v : x) v = rng.normal();
  auto rev = x;
  std::reverse(rev.begin(), rev.end());
  const auto a = filtfilt(f, x);
  auto b = filtfilt(f, rev);
  std::reverse(b.begin(), b.end());
  // edge transients differ; away from both ends the two orders agree
  for (std::size_t i = 2500; i < 5500; ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}

TEST(Filtfilt, ShortSignalIsError) {
  const auto f = design_highpass_butterworth(3, 3.0, 500.0);
  EXPECT_EQ(f.pad_length(), 12u);
  EXPECT_THROW(filtfilt(f, std::vector<double>(12, 1.0)), DataError);
  EXPECT_NO_THROW(filtfilt(f, std::vector<double>(13, 1.0)));
}

TEST(Filtfilt, RecordingResultIndependentOfThreads) {
  const Montage m = desk_montage();
  const auto r = random_recording(m, 2000, 9);
  const auto f = design_highpass_butterworth(3, 3.0, 500.0);
  EXPECT_EQ(filtfilt(f, r, 1).samples, filtfilt(f, r, 4).samples);
}

TEST(Crop, LengthsAndRange) {
  Recording r = make_recording({"A", "B"}, 7000, 2000.0);
  r.samples(1, 100) = 3.0;
  const auto t = crop_trial(r, 100, 3.0);
  EXPECT_EQ(t.cols(), 6000u);
  EXPECT_EQ(t(1, 0), 3.0);
  Recording d = make_recording({"A", "B"}, 2000, 500.0);
  EXPECT_EQ(crop_trial(d, 0, 3.0).cols(), 1500u);
  EXPECT_THROW(crop_trial(d, 600, 3.0), DataError);
  EXPECT_THROW(crop_trial(d, 5000, 3.0), DataError);
}

TEST(Preprocess, OrderedChainMatchesManualComposition) {
  const Montage m = desk_montage();
  auto a = random_recording(m, 1500, 11);
  auto b = random_recording(m, 1500, 12);
  b = select_channels(b, [&] {
    auto ch = m.channels();
    ch.erase(ch.begin() + 3);
    return ch;
  }());
  const auto out = preprocess({a, b}, m, PreprocessOptions{});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].n_channels(), 31u);
  const auto f = design_highpass_butterworth(3, 3.0, 500.0);
  const auto manual = common_average_reference(filtfilt(f, select_channels(laplacian(a, m), out[0].channels)));
  EXPECT_EQ(manual.samples, out[0].samples);
}
