// posdec command-line front end.
//
//   posdec [options] <synth|preprocess|features|crossval|importance|report|all|config>
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.

#include <CLI11.hpp>

#include "posdec/posdec.hpp"

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Flags {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<unsigned> threads;
  std::optional<std::size_t> trees;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> profile;
  std::optional<std::string> mu_band;
  std::optional<std::string> data_dir;
  std::optional<std::string> out_dir;
  bool export_outliers = false;
};

posdec::PipelineConfig resolve(const Flags& f) {
  auto c = posdec::load_config(f.config_path, f.sets);
  std::vector<std::string> extra;
  if (f.trees) extra.push_back("forest.n_trees=" + std::to_string(*f.trees));
  if (f.seed) {
    extra.push_back("forest.seed=" + std::to_string(*f.seed));
    extra.push_back("synth.seed=" + std::to_string(*f.seed));
  }
  if (f.profile) extra.push_back("synth.profile=" + *f.profile);
  if (f.mu_band) extra.push_back("spectral.mu_band=" + *f.mu_band);
  if (f.data_dir) extra.push_back("paths.data_dir=" + *f.data_dir);
  if (f.out_dir) extra.push_back("paths.output_dir=" + *f.out_dir);
  posdec::apply_overrides(c, extra);
  if (f.threads) c.threads = *f.threads;
  c.export_outlier_report = c.export_outlier_report || f.export_outliers;
  posdec::require_valid(c);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-subject finger-position decoding from EEG band power"};
  app.require_subcommand(1);
  Flags f;
  app.add_option("-c,--config", f.config_path, "Config file (default: $POSDEC_CONFIG)");
  app.add_option("--set", f.sets, "Override a config key, key=value (repeatable)");
  app.add_option("-j,--threads", f.threads, "Worker threads; results do not depend on it")->check(CLI::PositiveNumber);
  app.add_option("--trees", f.trees, "Trees per forest (forest.n_trees)")->check(CLI::PositiveNumber);
  app.add_option("--seed", f.seed, "Master seed for synthesis and forests");
  app.add_option("--profile", f.profile, "Synthetic scale profile: desk, full, tiny");
  app.add_option("--mu-band", f.mu_band, "Fixed mu band low-high in Hz, or 'auto'");
  app.add_option("--data", f.data_dir, "Input data directory (paths.data_dir)");
  app.add_option("--out", f.out_dir, "Output directory (paths.output_dir)");
  app.add_flag("--export-outlier-report", f.export_outliers, "Write outliers.tsv in the features stage");
  app.fallthrough();

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "Generate a synthetic dataset into the data directory"},
      {"preprocess", "Laplacian, channel intersection, highpass, CAR and epoching"},
      {"features", "Band-power features, outlier marking and per-subject normalization"},
      {"crossval", "Leave-one-subject-out random-forest evaluation"},
      {"importance", "Permutation importances, channel and window scores, topomaps"},
      {"report", "Accuracy tables, confusion matrix and importance summary"},
      {"all", "Run every stage from synth to report"},
      {"config", "Print the effective configuration"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    const auto c = resolve(f);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "synth") {
      posdec::stage_synth(c);
    } else if (cmd == "preprocess") {
      posdec::stage_preprocess(c);
    } else if (cmd == "features") {
      posdec::stage_features(c);
    } else if (cmd == "crossval") {
      posdec::stage_crossval(c);
    } else if (cmd == "importance") {
      posdec::stage_importance(c);
    } else if (cmd == "report") {
      posdec::stage_report(c);
    } else if (cmd == "all") {
      posdec::run_all(c);
    } else if (cmd == "config") {
      std::cout << posdec::ConfigKeys::instance().dump(c);
    }
  } catch (const posdec::ConfigError& e) {
    std::cerr << "posdec: configuration error: " << e.what() << '\n';
    return kConfig;
  } catch (const posdec::DataError& e) {
    std::cerr << "posdec: data error: " << e.what() << '\n';
    return kData;
  } catch (const posdec::NumericError& e) {
    std::cerr << "posdec: numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "posdec: data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "posdec: internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kOk;
}
