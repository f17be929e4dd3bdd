#pragma once

// Pipeline configuration: one flat "key = value" text file, dotted keys,
// '#' comments. Defaults reproduce the published parameter set.
//
//   paths.data_dir = data
//   forest.n_trees = 900
//   synth.class_gains = 1,1.15,1.3225,...

#include <cstdlib>
#include <map>

#include "posdec/binary_io.hpp"
#include "posdec/dsp.hpp"
#include "posdec/evaluate.hpp"
#include "posdec/synth.hpp"

namespace posdec {

struct PipelineConfig {
  // paths
  std::string data_dir = "data";
  std::string output_dir = "out";
  std::string montage_file;  ///< empty: bundled montage written by synth

  // dsp
  double cutoff_hz = 3.0;
  int filter_order = 3;
  std::size_t neighbor_count = 4;

  // spectral
  Band beta = kBetaBand;
  MuSearch mu_search;
  std::vector<std::string> mu_channels = {"C3", "C4"};
  std::optional<Band> mu_band_override;
  WindowSpec windows;

  // robust
  double sigma = 3.0;
  ImputeMode impute = ImputeMode::training_mean;

  // forest
  std::size_t n_trees = 900;
  std::size_t mtry = 0;
  std::size_t min_leaf = 1;
  std::uint64_t seed = 1;

  // synth
  std::string profile = "desk";
  std::uint64_t synth_seed = 1;
  EffectSpec effect;

  // report
  std::size_t topomap_resolution = 64;
  bool svg = true;

  // runtime
  unsigned threads = 1;
  bool export_outlier_report = false;

  ForestParams forest_params() const {
    ForestParams p;
    p.n_trees = n_trees;
    p.mtry = mtry;
    p.min_leaf = min_leaf;
    p.seed = seed;
    p.threads = threads;
    return p;
  }

  PreprocessOptions preprocess_options() const { return {filter_order, cutoff_hz, threads}; }
};

namespace detail {

inline std::vector<double> parse_double_list(const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split(v, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const double d = std::stod(item, &used);
    if (used != item.size()) throw std::invalid_argument(item);
    out.push_back(d);
  }
  return out;
}

inline Band parse_band(const std::string& v) {
  const auto dash = v.find('-', 1);
  if (dash == std::string::npos) throw std::invalid_argument("expected low-high");
  std::size_t u1 = 0, u2 = 0;
  const std::string a = trim(std::string_view(v).substr(0, dash)), b = trim(std::string_view(v).substr(dash + 1));
  Band band{std::stod(a, &u1), std::stod(b, &u2)};
  if (u1 != a.size() || u2 != b.size()) throw std::invalid_argument("expected low-high");
  return band;
}

inline std::array<double, kNumKeys> parse_gains(const std::string& v) {
  const auto list = parse_double_list(v);
  if (list.size() != kNumKeys) throw std::invalid_argument("expected 9 comma-separated values");
  std::array<double, kNumKeys> out{};
  std::copy(list.begin(), list.end(), out.begin());
  return out;
}

inline std::string join_gains(const std::array<double, kNumKeys>& g) {
  std::string s;
  for (std::size_t i = 0; i < g.size(); ++i) s += (i ? "," : "") + io::fmt_double(g[i]);
  return s;
}

}  // namespace detail

/// Key-value view of a config. Setting a key parses and stores the value;
/// listing keys returns the canonical text for each.
class ConfigKeys {
 public:
  using Setter = std::function<void(PipelineConfig&, const std::string&)>;
  using Getter = std::function<std::string(const PipelineConfig&)>;

  static const ConfigKeys& instance() {
    static const ConfigKeys keys;
    return keys;
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  void set(PipelineConfig& c, const std::string& key, const std::string& value) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw std::invalid_argument("unknown key");
    it->second.first(c, value);
  }

  std::string dump(const PipelineConfig& c) const {
    std::string out;
    for (const auto& [key, e] : entries_) out += key + " = " + e.second(c) + '\n';
    return out;
  }

 private:
  ConfigKeys() {
    auto str = [&](const char* key, std::string PipelineConfig::*m) {
      add(key, [m](PipelineConfig& c, const std::string& v) { c.*m = v; },
          [m](const PipelineConfig& c) { return c.*m; });
    };
    auto num = [&](const char* key, auto get_ref) {
      add(
          key,
          [get_ref](PipelineConfig& c, const std::string& v) {
            auto& ref = get_ref(c);
            using T = std::remove_reference_t<decltype(ref)>;
            std::size_t used = 0;
            if constexpr (std::is_floating_point_v<T>) {
              ref = std::stod(v, &used);
            } else if constexpr (std::is_signed_v<T>) {
              ref = static_cast<T>(std::stoll(v, &used));
            } else {
              if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
              ref = static_cast<T>(std::stoull(v, &used));
            }
            if (used != v.size()) throw std::invalid_argument("trailing characters");
          },
          [get_ref](const PipelineConfig& c) {
            auto& ref = get_ref(const_cast<PipelineConfig&>(c));
            using T = std::remove_reference_t<decltype(ref)>;
            if constexpr (std::is_floating_point_v<T>) {
              return io::fmt_double(ref);
            } else {
              return std::to_string(ref);
            }
          });
    };
    str("paths.data_dir", &PipelineConfig::data_dir);
    str("paths.output_dir", &PipelineConfig::output_dir);
    str("paths.montage", &PipelineConfig::montage_file);

    num("dsp.cutoff_hz", [](PipelineConfig& c) -> double& { return c.cutoff_hz; });
    num("dsp.filter_order", [](PipelineConfig& c) -> int& { return c.filter_order; });
    num("dsp.neighbors", [](PipelineConfig& c) -> std::size_t& { return c.neighbor_count; });

    add(
        "spectral.beta_band", [](PipelineConfig& c, const std::string& v) { c.beta = detail::parse_band(v); },
        [](const PipelineConfig& c) { return io::fmt_double(c.beta.low) + "-" + io::fmt_double(c.beta.high); });
    num("spectral.mu_search_low", [](PipelineConfig& c) -> double& { return c.mu_search.low_hz; });
    num("spectral.mu_search_high", [](PipelineConfig& c) -> double& { return c.mu_search.high_hz; });
    add(
        "spectral.mu_widths",
        [](PipelineConfig& c, const std::string& v) {
          c.mu_search.widths_hz.clear();
          for (double d : detail::parse_double_list(v)) {
            if (d != std::floor(d)) throw std::invalid_argument("widths must be whole Hz");
            c.mu_search.widths_hz.push_back(static_cast<int>(d));
          }
        },
        [](const PipelineConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.mu_search.widths_hz.size(); ++i) {
            s += (i ? "," : "") + std::to_string(c.mu_search.widths_hz[i]);
          }
          return s;
        });
    add(
        "spectral.mu_channels",
        [](PipelineConfig& c, const std::string& v) {
          c.mu_channels.clear();
          for (auto& s : detail::split(v, ',')) {
            if (!s.empty()) c.mu_channels.push_back(s);
          }
        },
        [](const PipelineConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.mu_channels.size(); ++i) s += (i ? "," : "") + c.mu_channels[i];
          return s;
        });
    add(
        "spectral.mu_band",
        [](PipelineConfig& c, const std::string& v) {
          if (v.empty() || v == "auto") {
            c.mu_band_override.reset();
          } else {
            c.mu_band_override = detail::parse_band(v);
          }
        },
        [](const PipelineConfig& c) {
          return c.mu_band_override
                     ? io::fmt_double(c.mu_band_override->low) + "-" + io::fmt_double(c.mu_band_override->high)
                     : std::string("auto");
        });
    num("spectral.trial_s", [](PipelineConfig& c) -> double& { return c.windows.trial_s; });
    num("spectral.window_s", [](PipelineConfig& c) -> double& { return c.windows.length_s; });
    num("spectral.step_s", [](PipelineConfig& c) -> double& { return c.windows.step_s; });

    num("robust.sigma", [](PipelineConfig& c) -> double& { return c.sigma; });
    add(
        "robust.impute", [](PipelineConfig& c, const std::string& v) { c.impute = parse_impute_mode(v); },
        [](const PipelineConfig& c) { return std::string(impute_mode_name(c.impute)); });

    num("forest.n_trees", [](PipelineConfig& c) -> std::size_t& { return c.n_trees; });
    num("forest.mtry", [](PipelineConfig& c) -> std::size_t& { return c.mtry; });
    num("forest.min_leaf", [](PipelineConfig& c) -> std::size_t& { return c.min_leaf; });
    num("forest.seed", [](PipelineConfig& c) -> std::uint64_t& { return c.seed; });

    str("synth.profile", &PipelineConfig::profile);
    num("synth.seed", [](PipelineConfig& c) -> std::uint64_t& { return c.synth_seed; });
    add(
        "synth.effect_channel", [](PipelineConfig& c, const std::string& v) { c.effect.effect_channel = v; },
        [](const PipelineConfig& c) { return c.effect.effect_channel; });
    add(
        "synth.effect_band", [](PipelineConfig& c, const std::string& v) { c.effect.effect_band = detail::parse_band(v); },
        [](const PipelineConfig& c) {
          return io::fmt_double(c.effect.effect_band.low) + "-" + io::fmt_double(c.effect.effect_band.high);
        });
    num("synth.window_start_s", [](PipelineConfig& c) -> double& { return c.effect.window_start_s; });
    num("synth.window_end_s", [](PipelineConfig& c) -> double& { return c.effect.window_end_s; });
    add(
        "synth.class_gains", [](PipelineConfig& c, const std::string& v) { c.effect.class_gains = detail::parse_gains(v); },
        [](const PipelineConfig& c) { return detail::join_gains(c.effect.class_gains); });
    add(
        "synth.tonic_gains", [](PipelineConfig& c, const std::string& v) { c.effect.tonic_gains = detail::parse_gains(v); },
        [](const PipelineConfig& c) { return detail::join_gains(c.effect.tonic_gains); });
    add(
        "synth.mu_gains", [](PipelineConfig& c, const std::string& v) { c.effect.mu_gains = detail::parse_gains(v); },
        [](const PipelineConfig& c) { return detail::join_gains(c.effect.mu_gains); });
    num("synth.burst_amplitude", [](PipelineConfig& c) -> double& { return c.effect.burst_amplitude; });
    num("synth.burst_jitter", [](PipelineConfig& c) -> double& { return c.effect.burst_jitter; });
    num("synth.tonic_amplitude", [](PipelineConfig& c) -> double& { return c.effect.tonic_amplitude; });
    num("synth.mu_rest_amplitude", [](PipelineConfig& c) -> double& { return c.effect.mu_rest_amplitude; });
    num("synth.mu_task_amplitude", [](PipelineConfig& c) -> double& { return c.effect.mu_task_amplitude; });
    num("synth.noise_exponent", [](PipelineConfig& c) -> double& { return c.effect.noise_exponent; });
    num("synth.noise_amplitude", [](PipelineConfig& c) -> double& { return c.effect.noise_amplitude; });
    num("synth.subject_gain_jitter", [](PipelineConfig& c) -> double& { return c.effect.subject_gain_jitter; });

    num("report.topomap_resolution", [](PipelineConfig& c) -> std::size_t& { return c.topomap_resolution; });
    add(
        "report.svg",
        [](PipelineConfig& c, const std::string& v) {
          if (v == "true" || v == "1") {
            c.svg = true;
          } else if (v == "false" || v == "0") {
            c.svg = false;
          } else {
            throw std::invalid_argument("expected true or false");
          }
        },
        [](const PipelineConfig& c) { return std::string(c.svg ? "true" : "false"); });
  }

  void add(const char* key, Setter set, Getter get) { entries_.emplace(key, std::pair{std::move(set), std::move(get)}); }

  std::map<std::string, std::pair<Setter, Getter>> entries_;
};

/// Parses "key = value" lines into `config`. Every bad line is reported; the
/// thrown ConfigError lists them all.
inline void apply_config_text(PipelineConfig& config, std::string_view text, const std::string& origin) {
  std::vector<std::string> errors;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string::npos) {
      errors.push_back(where + ": expected 'key = value'");
      continue;
    }
    const std::string key = detail::trim(std::string_view(line).substr(0, eq));
    const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
    try {
      ConfigKeys::instance().set(config, key, value);
    } catch (const std::exception& e) {
      errors.push_back(where + ": " + key + ": " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

/// Applies "key=value" overrides (from --set); all failures are reported together.
inline void apply_overrides(PipelineConfig& config, const std::vector<std::string>& overrides) {
  std::string text;
  for (const auto& o : overrides) text += o + '\n';
  apply_config_text(config, text, "--set");
}

/// Cross-field checks; returns every violated field.
inline std::vector<std::string> validate_config(const PipelineConfig& c) {
  std::vector<std::string> errors;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  };
  check(c.cutoff_hz > 0 && std::isfinite(c.cutoff_hz), "dsp.cutoff_hz must be positive");
  check(c.filter_order >= 1 && c.filter_order <= 12, "dsp.filter_order must lie in 1..12");
  check(c.neighbor_count >= 1, "dsp.neighbors must be >= 1");
  check(c.beta.low > 0 && c.beta.high > c.beta.low, "spectral.beta_band must satisfy 0 < low < high");
  check(c.mu_search.low_hz > 0 && c.mu_search.high_hz > c.mu_search.low_hz,
        "spectral.mu_search_low/high must satisfy 0 < low < high");
  check(!c.mu_search.widths_hz.empty() &&
            std::all_of(c.mu_search.widths_hz.begin(), c.mu_search.widths_hz.end(), [](int w) { return w > 0; }),
        "spectral.mu_widths must list positive widths");
  check(!c.mu_channels.empty(), "spectral.mu_channels must name at least one channel");
  if (c.mu_band_override) {
    check(c.mu_band_override->low > 0 && c.mu_band_override->high > c.mu_band_override->low,
          "spectral.mu_band must satisfy 0 < low < high");
  }
  check(c.windows.trial_s > 0, "spectral.trial_s must be positive");
  check(c.windows.length_s > 0 && c.windows.length_s <= c.windows.trial_s,
        "spectral.window_s must lie in (0, trial_s]");
  check(c.windows.step_s > 0, "spectral.step_s must be positive");
  check(c.sigma > 0, "robust.sigma must be positive");
  check(c.n_trees >= 1, "forest.n_trees must be >= 1");
  check(c.min_leaf >= 1, "forest.min_leaf must be >= 1");
  check(c.topomap_resolution >= 2, "report.topomap_resolution must be >= 2");
  try {
    synth_profile(c.profile);
  } catch (const ConfigError& e) {
    errors.push_back(std::string("synth.profile: ") + e.what());
  }
  try {
    c.effect.validate(1e9);
  } catch (const ConfigError& e) {
    errors.push_back(e.what());
  }
  return errors;
}

inline void require_valid(const PipelineConfig& c) {
  const auto errors = validate_config(c);
  if (errors.empty()) return;
  std::string msg = "invalid configuration:";
  for (const auto& e : errors) msg += "\n  " + e;
  throw ConfigError(msg);
}

/// Defaults, then the config file (explicit path, else $POSDEC_CONFIG), then
/// overrides.
inline PipelineConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  PipelineConfig c;
  std::string file = path;
  if (file.empty()) {
    if (const char* env = std::getenv("POSDEC_CONFIG"); env && *env) file = env;
  }
  if (!file.empty()) {
    std::string text;
    try {
      text = io::read_text(file);
    } catch (const DataError& e) {
      throw ConfigError(std::string("config file: ") + e.what());
    }
    apply_config_text(c, text, file);
  }
  apply_overrides(c, overrides);
  return c;
}

}  // namespace posdec
