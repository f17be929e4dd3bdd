#pragma once

// Shared domain types for the position-decoding pipeline: error classes,
// a dense row-major matrix, the feature layout, montage, recordings, and
// the deterministic random-number contract.

#include <algorithm>
#include <cctype>
#include <array>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

namespace posdec {

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto exit codes 2, 3 and 4.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a computation degenerates (all-masked feature, undefined OOB
/// error, ...). Carries no partial result.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Number of target keys on the 3x3 keypad. Labels are 1-based.
inline constexpr int kNumKeys = 9;

// ---------------------------------------------------------------------------

/// Dense row-major matrix with value semantics.
template <class T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept {
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// Random numbers.
//
// Every random decision in the pipeline draws from an Rng built from a master
// seed and a stream id. A task owns its stream; nothing is shared between
// threads, so any parallel schedule reproduces the sequential result.

/// Stream-id namespaces. The low 40 bits carry a task index.
enum class StreamDomain : std::uint64_t {
  bootstrap = 1,
  grow = 2,
  importance = 3,
  predict = 4,
  oob = 5,
  synth_subject = 6,
  synth_channel = 7,
  synth_schedule = 8,
  fold = 9,
  test = 15,
};

constexpr std::uint64_t stream_id(StreamDomain domain, std::uint64_t index,
                                  std::uint64_t sub = 0) noexcept {
  return (static_cast<std::uint64_t>(domain) << 56) | ((sub & 0xffffULL) << 40) |
         (index & 0xffffffffffULL);
}

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives a child master seed, e.g. one forest seed per cross-validation fold.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept {
  return splitmix64(splitmix64(master) ^ splitmix64(~stream));
}

/// xoshiro256** seeded through splitmix64 from (seed, stream). The output is
/// specified bit-for-bit, unlike the std distributions, so files written on
/// one platform regenerate identically on another.
class Rng {
 public:
  using result_type = std::uint64_t;

  Rng(std::uint64_t master_seed, std::uint64_t stream) noexcept {
    std::uint64_t x = splitmix64(master_seed) ^ splitmix64(stream ^ 0x5851f42d4c957f2dULL);
    for (auto& s : state_) {
      x += 0x9e3779b97f4a7c15ULL;
      s = splitmix64(x);
    }
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform integer in [0, n). Lemire's multiply-shift with rejection.
  std::size_t uniform_index(std::size_t n) noexcept {
    if (n <= 1) return 0;
    const auto bound = static_cast<std::uint64_t>(n);
    unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        m = static_cast<unsigned __int128>((*this)()) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::size_t>(m >> 64);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller; the spare value is cached.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <class T>
  void shuffle(std::span<T> values) noexcept {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[uniform_index(i)]);
    }
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline Rng seeded_rng(std::uint64_t master_seed, std::uint64_t stream) noexcept {
  return Rng(master_seed, stream);
}

// ---------------------------------------------------------------------------

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items must
/// write disjoint outputs. The first exception thrown is rethrown.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Feature layout.

enum class BandId : std::uint8_t { mu = 0, beta = 1 };

inline constexpr std::array<BandId, 2> kBands = {BandId::mu, BandId::beta};

inline std::string_view band_name(BandId band) noexcept {
  return band == BandId::mu ? "mu" : "beta";
}

/// Sliding-window geometry inside one trial. Windows start closed and end
/// open: window i covers [i*step, i*step + length) seconds.
struct WindowSpec {
  double trial_s = 3.0;
  double length_s = 1.0;
  double step_s = 0.05;

  std::size_t sliding_count() const {
    if (!(length_s > 0 && step_s > 0 && trial_s >= length_s)) {
      throw ConfigError("invalid window geometry");
    }
    return static_cast<std::size_t>(std::llround((trial_s - length_s) / step_s)) + 1;
  }
  double center_s(std::size_t i) const noexcept {
    return static_cast<double>(i) * step_s + 0.5 * length_s;
  }
  std::size_t trial_samples(double sample_rate) const {
    return static_cast<std::size_t>(std::llround(trial_s * sample_rate));
  }
  std::size_t window_samples(double sample_rate) const {
    return static_cast<std::size_t>(std::llround(length_s * sample_rate));
  }
  std::size_t window_start(std::size_t i, double sample_rate) const {
    return static_cast<std::size_t>(
        std::llround(static_cast<double>(i) * step_s * sample_rate));
  }

  friend bool operator==(const WindowSpec&, const WindowSpec&) = default;
};

struct FeatureCoords {
  std::size_t channel;
  BandId band;
  std::size_t window;  ///< sliding index, or FeatureLayout::whole_window()

  friend bool operator==(const FeatureCoords&, const FeatureCoords&) = default;
};

/// Flat order: channel-major, then band (mu before beta), then the sliding
/// windows followed by the whole-trial window.
class FeatureLayout {
 public:
  FeatureLayout() = default;
  explicit FeatureLayout(std::size_t n_channels, WindowSpec windows = {})
      : n_channels_(n_channels), windows_(windows), n_sliding_(windows.sliding_count()) {}

  std::size_t n_channels() const noexcept { return n_channels_; }
  std::size_t n_sliding() const noexcept { return n_sliding_; }
  std::size_t windows_per_band() const noexcept { return n_sliding_ + 1; }
  std::size_t whole_window() const noexcept { return n_sliding_; }
  std::size_t features_per_channel() const noexcept { return 2 * windows_per_band(); }
  std::size_t total_features() const noexcept { return n_channels_ * features_per_channel(); }
  const WindowSpec& windows() const noexcept { return windows_; }

  std::vector<double> window_centers() const {
    std::vector<double> out(n_sliding_);
    for (std::size_t i = 0; i < n_sliding_; ++i) out[i] = windows_.center_s(i);
    return out;
  }

  std::size_t feature_index(std::size_t channel, BandId band, std::size_t window) const {
    if (channel >= n_channels_) throw std::out_of_range("feature_index: channel out of range");
    if (window > n_sliding_) throw std::out_of_range("feature_index: window out of range");
    const auto b = static_cast<std::size_t>(band);
    if (b > 1) throw std::out_of_range("feature_index: band out of range");
    return channel * features_per_channel() + b * windows_per_band() + window;
  }

  FeatureCoords feature_coords(std::size_t index) const {
    if (index >= total_features()) throw std::out_of_range("feature_coords: index out of range");
    const std::size_t channel = index / features_per_channel();
    const std::size_t rem = index % features_per_channel();
    return {channel, static_cast<BandId>(rem / windows_per_band()), rem % windows_per_band()};
  }

  friend bool operator==(const FeatureLayout&, const FeatureLayout&) = default;

 private:
  std::size_t n_channels_ = 0;
  WindowSpec windows_{};
  std::size_t n_sliding_ = 41;
};

// ---------------------------------------------------------------------------
// Montage.

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

inline double distance(Point2 a, Point2 b) noexcept { return std::hypot(a.x - b.x, a.y - b.y); }

/// Named electrodes with projected scalp positions and a symmetric neighbor
/// relation used by the Laplacian.
class Montage {
 public:
  Montage() = default;

  /// Validates names, positions and neighbors.
  Montage(std::vector<std::string> channels, std::vector<Point2> positions,
          std::vector<std::vector<std::size_t>> neighbors)
      : channels_(std::move(channels)),
        positions_(std::move(positions)),
        neighbors_(std::move(neighbors)) {
    if (positions_.size() != channels_.size() || neighbors_.size() != channels_.size()) {
      throw ConfigError("montage: channel, position and neighbor counts differ");
    }
    for (std::size_t i = 0; i < channels_.size(); ++i) {
      if (channels_[i].empty()) throw ConfigError("montage: empty channel name");
      if (!index_.emplace(channels_[i], i).second) {
        throw ConfigError("montage: duplicate channel name '" + channels_[i] + "'");
      }
      if (!std::isfinite(positions_[i].x) || !std::isfinite(positions_[i].y)) {
        throw ConfigError("montage: non-finite position for '" + channels_[i] + "'");
      }
    }
    for (std::size_t i = 0; i < neighbors_.size(); ++i) {
      auto& list = neighbors_[i];
      std::sort(list.begin(), list.end());
      list.erase(std::unique(list.begin(), list.end()), list.end());
      for (std::size_t j : list) {
        if (j >= channels_.size()) throw ConfigError("montage: neighbor index out of range");
        if (j == i) throw ConfigError("montage: channel '" + channels_[i] + "' lists itself");
      }
    }
    for (std::size_t i = 0; i < neighbors_.size(); ++i) {
      for (std::size_t j : neighbors_[i]) {
        if (!std::binary_search(neighbors_[j].begin(), neighbors_[j].end(), i)) {
          throw ConfigError("montage: neighbor relation not symmetric between '" +
                            channels_[i] + "' and '" + channels_[j] + "'");
        }
      }
    }
  }

  std::size_t size() const noexcept { return channels_.size(); }
  const std::vector<std::string>& channels() const noexcept { return channels_; }
  const std::vector<Point2>& positions() const noexcept { return positions_; }
  const std::vector<std::size_t>& neighbors(std::size_t i) const { return neighbors_.at(i); }
  const std::vector<std::vector<std::size_t>>& neighbor_lists() const noexcept {
    return neighbors_;
  }

  std::optional<std::size_t> index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t require(std::string_view name) const {
    if (auto i = index_of(name)) return *i;
    throw ConfigError("montage: unknown channel '" + std::string(name) + "'");
  }

 private:
  std::vector<std::string> channels_;
  std::vector<Point2> positions_;
  std::vector<std::vector<std::size_t>> neighbors_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Recordings and trials.

/// Continuous multichannel signal of one subject, channels x samples.
struct Recording {
  std::string subject_id;
  double sample_rate = 0.0;
  std::vector<std::string> channels;
  Matrix<double> samples;

  std::size_t n_channels() const noexcept { return channels.size(); }
  std::size_t n_samples() const noexcept { return samples.cols(); }
  double duration_s() const noexcept {
    return sample_rate > 0 ? static_cast<double>(n_samples()) / sample_rate : 0.0;
  }

  std::optional<std::size_t> channel_index(std::string_view name) const {
    for (std::size_t i = 0; i < channels.size(); ++i) {
      if (channels[i] == name) return i;
    }
    return std::nullopt;
  }

  void validate() const {
    if (!(sample_rate > 0) || !std::isfinite(sample_rate)) {
      throw DataError("recording '" + subject_id + "': sample rate must be positive");
    }
    if (samples.rows() != channels.size()) {
      throw DataError("recording '" + subject_id + "': row count differs from channel count");
    }
    for (double v : samples.data()) {
      if (!std::isfinite(v)) throw DataError("recording '" + subject_id + "': non-finite sample");
    }
  }
};

struct Trial {
  std::string subject_id;
  int session = 1;
  int label = 1;
  Matrix<double> samples;  ///< channels x trial samples
};

inline void check_label(int label) {
  if (label < 1 || label > kNumKeys) {
    throw DataError("label " + std::to_string(label) + " outside 1.." + std::to_string(kNumKeys));
  }
}

}  // namespace posdec
