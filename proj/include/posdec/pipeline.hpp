#pragma once

// File-level pipeline stages. Each stage reads the previous stage's files and
// writes its own through write-then-rename, so a failed run never leaves a
// truncated output behind.
//
// data_dir/    montage.txt subjects.txt truth.txt
//              <S>.task.rec <S>.rest.rec <S>.events.tsv
// output_dir/  channels.txt  epochs/<S>.epochs.rec <S>.epochs.tsv <S>.rest.rec
//              features.pdfm bands.tsv [outliers.tsv]
//              crossval.txt forests/fold_<i>.pdrf
//              importance/...  report.txt confusion.tsv

#include <iostream>

#include "posdec/config.hpp"
#include "posdec/dsp.hpp"
#include "posdec/feature_matrix.hpp"
#include "posdec/forest.hpp"
#include "posdec/importance.hpp"
#include "posdec/robust.hpp"

namespace posdec {

namespace fs = std::filesystem;

struct PipelinePaths {
  fs::path data, out;

  explicit PipelinePaths(const PipelineConfig& c) : data(c.data_dir), out(c.output_dir) {}

  fs::path montage() const { return data / "montage.txt"; }
  fs::path subjects() const { return data / "subjects.txt"; }
  fs::path truth() const { return data / "truth.txt"; }
  fs::path task(const std::string& s) const { return data / (s + ".task.rec"); }
  fs::path rest(const std::string& s) const { return data / (s + ".rest.rec"); }
  fs::path events(const std::string& s) const { return data / (s + ".events.tsv"); }

  fs::path channels() const { return out / "channels.txt"; }
  fs::path epochs(const std::string& s) const { return out / "epochs" / (s + ".epochs.rec"); }
  fs::path epoch_events(const std::string& s) const { return out / "epochs" / (s + ".epochs.tsv"); }
  fs::path clean_rest(const std::string& s) const { return out / "epochs" / (s + ".rest.rec"); }
  fs::path features() const { return out / "features.pdfm"; }
  fs::path bands() const { return out / "bands.tsv"; }
  fs::path outliers() const { return out / "outliers.tsv"; }
  fs::path crossval() const { return out / "crossval.txt"; }
  fs::path forest(std::size_t fold) const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "fold_%02zu.pdrf", fold);
    return out / "forests" / buf;
  }
  fs::path importance_dir() const { return out / "importance"; }
  fs::path report() const { return out / "report.txt"; }
  fs::path confusion() const { return out / "confusion.tsv"; }
};

inline void log_line(const std::string& msg) { std::cerr << "[posdec] " << msg << std::endl; }

inline std::vector<std::string> read_subject_list(const fs::path& path) {
  std::vector<std::string> out;
  std::istringstream in(io::read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (!line.empty() && line[0] != '#') out.push_back(line);
  }
  if (out.empty()) throw DataError(path.string() + ": no subjects listed");
  return out;
}

inline std::vector<TrialEvent> load_events(const fs::path& path) {
  auto in = io::open_input(path, false);
  return read_events(in, path.string());
}

inline void save_events(const fs::path& path, const std::vector<TrialEvent>& events) {
  io::write_atomic(path, [&](std::ostream& out) { write_events(out, events); }, false);
}

inline Montage pipeline_montage(const PipelineConfig& c) {
  const fs::path path = c.montage_file.empty() ? PipelinePaths(c).montage() : fs::path(c.montage_file);
  if (!fs::exists(path)) throw DataError("missing input file '" + path.string() + "'");
  return load_montage(path.string(), c.neighbor_count);
}

// ---------------------------------------------------------------------------

inline void stage_synth(const PipelineConfig& c) {
  const PipelinePaths p(c);
  const auto profile = synth_profile(c.profile);
  c.effect.validate(profile.sample_rate);
  fs::create_directories(p.data);
  const Montage montage = montage_from_labels(profile.channels, c.neighbor_count);
  io::write_atomic(p.montage(), [&](std::ostream& out) { write_montage(out, montage); }, false);
  std::vector<SubjectTruth> truths;
  std::string list;
  for (int s = 0; s < profile.n_subjects; ++s) {
    auto subj = generate_profile_subject(profile, montage, c.effect, c.synth_seed, s, c.threads);
    const std::string id = subj.truth.subject_id;
    save_recording(p.task(id), subj.task);
    save_recording(p.rest(id), subj.rest);
    save_events(p.events(id), subj.events);
    truths.push_back(subj.truth);
    list += id + '\n';
    log_line("synth: " + id + " (" + std::to_string(subj.events.size()) + " trials, " +
             std::to_string(subj.task.n_channels()) + " channels)");
  }
  io::write_text_atomic(p.truth(), format_truth(profile, c.effect, c.synth_seed, truths));
  io::write_text_atomic(p.subjects(), list);
}

/// Laplacian on each subject's own channels, reduction to the channels
/// common to every recording, zero-phase highpass, CAR, then 3 s epochs.
inline void stage_preprocess(const PipelineConfig& c) {
  const PipelinePaths p(c);
  const Montage montage = pipeline_montage(c);
  const auto subjects = read_subject_list(p.subjects());
  std::vector<std::vector<std::string>> lists;
  for (const auto& s : subjects) {
    lists.push_back(read_recording_header(p.task(s)).channels);
    lists.push_back(read_recording_header(p.rest(s)).channels);
  }
  const auto common = common_channels(lists, montage);
  log_line("preprocess: " + std::to_string(common.size()) + " common channels");
  fs::create_directories(p.out / "epochs");
  std::string channel_text;
  for (const auto& ch : common) channel_text += ch + '\n';
  io::write_text_atomic(p.channels(), channel_text);

  const auto opt = c.preprocess_options();
  auto clean = [&](const fs::path& path) {
    Recording rec = load_recording(path);
    rec = select_channels(laplacian(rec, montage), common);
    return filter_and_reference(rec, opt);
  };
  for (const auto& s : subjects) {
    const auto events = load_events(p.events(s));
    const Recording task = clean(p.task(s));
    const std::size_t len = c.windows.trial_samples(task.sample_rate);
    Recording epochs;
    epochs.subject_id = s;
    epochs.sample_rate = task.sample_rate;
    epochs.channels = common;
    epochs.samples = Matrix<double>(common.size(), events.size() * len);
    std::vector<TrialEvent> epoch_events;
    for (std::size_t t = 0; t < events.size(); ++t) {
      const auto trial = crop_trial(task, events[t].onset_sample, c.windows.trial_s);
      for (std::size_t ch = 0; ch < common.size(); ++ch) {
        const auto src = trial.row(ch);
        std::copy(src.begin(), src.end(), epochs.samples.row(ch).begin() + static_cast<std::ptrdiff_t>(t * len));
      }
      epoch_events.push_back({t * len, events[t].label, events[t].session});
    }
    save_recording(p.epochs(s), epochs);
    save_events(p.epoch_events(s), epoch_events);
    save_recording(p.clean_rest(s), clean(p.rest(s)));
    log_line("preprocess: " + s + " (" + std::to_string(events.size()) + " epochs)");
  }
}

inline std::string format_bands_tsv(const std::vector<SubjectBands>& bands) {
  std::string out = "subject\tmu_low\tmu_high\tbeta_low\tbeta_high\n";
  for (const auto& b : bands) {
    out += b.subject_id + '\t' + io::fmt_double(b.mu.low) + '\t' + io::fmt_double(b.mu.high) + '\t' +
           io::fmt_double(b.beta.low) + '\t' + io::fmt_double(b.beta.high) + '\n';
  }
  return out;
}

/// Band-power features, outlier marking and per-subject normalization.
inline FeatureMatrix stage_features(const PipelineConfig& c) {
  const PipelinePaths p(c);
  const auto subjects = read_subject_list(p.subjects());
  std::vector<std::string> channels;
  {
    std::istringstream in(io::read_text(p.channels()));
    for (std::string line; std::getline(in, line);) {
      if (!line.empty()) channels.push_back(line);
    }
  }
  FeatureMatrix fm;
  fm.layout = FeatureLayout(channels.size(), c.windows);
  fm.channels = channels;
  std::vector<std::vector<double>> rows;
  std::size_t floored_total = 0;
  for (const auto& s : subjects) {
    const Recording epochs = load_recording(p.epochs(s));
    const auto events = load_events(p.epoch_events(s));
    if (epochs.channels != channels) throw DataError(p.epochs(s).string() + ": channel list differs from channels.txt");
    if (fm.sample_rate == 0.0) fm.sample_rate = epochs.sample_rate;
    if (epochs.sample_rate != fm.sample_rate) throw DataError("subjects differ in sample rate");

    SubjectBands bands;
    bands.subject_id = s;
    bands.beta = c.beta;
    if (c.mu_band_override) {
      bands.mu = *c.mu_band_override;
    } else {
      bands.mu = identify_mu_band(load_recording(p.clean_rest(s)), c.mu_channels, c.mu_search);
    }
    bands.mu.validate(fm.sample_rate);
    bands.beta.validate(fm.sample_rate);
    fm.subject_bands.push_back(bands);

    std::vector<std::vector<double>> subject_rows(events.size());
    std::vector<std::size_t> floored(events.size(), 0);
    parallel_for(events.size(), c.threads, [&](std::size_t t) {
      const auto trial = crop_trial(epochs, events[t].onset_sample, c.windows.trial_s);
      subject_rows[t] = extract_features(trial, bands, fm.layout, fm.sample_rate, &floored[t]);
    });
    for (std::size_t t = 0; t < events.size(); ++t) {
      rows.push_back(std::move(subject_rows[t]));
      fm.meta.push_back({s, events[t].session, events[t].label});
      floored_total += floored[t];
    }
    log_line("features: " + s + " mu " + io::fmt_double(bands.mu.low) + "-" + io::fmt_double(bands.mu.high) +
             " Hz, " + std::to_string(events.size()) + " trials");
  }
  if (floored_total > 0) log_line("features: " + std::to_string(floored_total) + " floored log-bandpowers");
  fm.values = Matrix<double>(rows.size(), fm.layout.total_features());
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), fm.values.row(r).begin());
  rows.clear();
  fm.outlier_mask = Matrix<std::uint8_t>(fm.rows(), fm.cols(), 0);
  const std::size_t masked = mark_outliers(fm, c.sigma, c.threads);
  normalize_per_subject(fm, c.threads);
  log_line("features: " + std::to_string(fm.rows()) + " x " + std::to_string(fm.cols()) + ", " +
           std::to_string(masked) + " outlier cells");
  save_feature_matrix(p.features(), fm);
  io::write_text_atomic(p.bands(), format_bands_tsv(fm.subject_bands));
  if (c.export_outlier_report) {
    io::write_atomic(p.outliers(), [&](std::ostream& out) { export_outlier_report(out, fm); }, false);
  }
  return fm;
}

inline CrossvalReport stage_crossval(const PipelineConfig& c) {
  const PipelinePaths p(c);
  const FeatureMatrix fm = load_feature_matrix(p.features());
  fs::create_directories(p.out / "forests");
  CrossvalOptions opt;
  opt.forest = c.forest_params();
  opt.impute = c.impute;
  opt.on_forest = [&](std::size_t fold, const Forest& forest) {
    save_forest(p.forest(fold), forest);
    log_line("crossval: fold " + std::to_string(fold) + " trained (" + std::to_string(forest.trees().size()) +
             " trees, mtry " + std::to_string(forest.mtry()) + ")");
  };
  const auto rep = run_crossval(fm, opt);
  io::write_text_atomic(p.crossval(), format_crossval_report(rep));
  log_line("crossval: PA " + io::fmt_fixed(100.0 * rep.accuracy, 2) + "% (" + std::to_string(rep.hits) + "/" +
           std::to_string(rep.n) + "), p = " + io::fmt_double(rep.binomial.p_value, 4));
  return rep;
}

inline std::string format_importance_summary(const ImportanceReport& r, const FeatureLayout& layout,
                                             const std::vector<std::string>& channels) {
  const auto centers = layout.window_centers();
  auto argmax = [](const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  };
  std::ostringstream out;
  out << "top_channel = " << channels[r.top_channel] << '\n';
  out << "cis_mu.max_channel = " << channels[argmax(r.cis_mu)] << '\n';
  out << "cis_beta.max_channel = " << channels[argmax(r.cis_beta)] << '\n';
  out << "cis_mu.peak_z = " << io::fmt_double(peak_zscore(r.cis_mu)) << '\n';
  out << "cis_beta.peak_z = " << io::fmt_double(peak_zscore(r.cis_beta)) << '\n';
  out << "wis_mu.argmax_center_s = " << io::fmt_fixed(centers[argmax(r.wis_mu)], 3) << '\n';
  out << "wis_beta.argmax_center_s = " << io::fmt_fixed(centers[argmax(r.wis_beta)], 3) << '\n';
  out << "is_mu = " << io::fmt_double(r.is_mu) << '\n';
  out << "is_beta = " << io::fmt_double(r.is_beta) << '\n';
  out << "folds_percent_defined =";
  for (auto d : r.fold_percent_defined) out << ' ' << static_cast<int>(d);
  out << '\n';
  return out.str();
}

/// Permutation importances of the persisted fold forests, aggregated.
inline ImportanceReport stage_importance(const PipelineConfig& c) {
  const PipelinePaths p(c);
  const FeatureMatrix fm = load_feature_matrix(p.features());
  const auto folds = loso_folds(fm);
  std::vector<std::vector<double>> per_fold;
  std::vector<std::uint8_t> defined;
  for (std::size_t i = 0; i < folds.size(); ++i) {
    const Forest forest = load_forest(p.forest(i));
    const auto data = fold_data(fm, folds[i], c.impute);
    forest.check_width(data.train_x.cols());
    auto pi = permutation_importance(forest, data.train_x, data.train_y, PermutationMode::random, c.threads);
    per_fold.push_back(std::move(pi.score));
    defined.push_back(pi.percent_defined ? 1 : 0);
    log_line("importance: fold " + std::to_string(i) + " (baseline OOB " + io::fmt_fixed(pi.baseline_oob, 4) + ")");
  }
  auto report = build_importance_report(average_fis(per_fold), fm.layout);
  report.fold_percent_defined = defined;

  const fs::path dir = p.importance_dir();
  fs::create_directories(dir);
  io::write_text_atomic(dir / "fis.tsv", format_fis_tsv(report.fis, fm.layout, fm.channels));
  io::write_text_atomic(dir / "cis.tsv", format_cis_tsv(report, fm.channels));
  io::write_text_atomic(dir / "wis.tsv", format_wis_tsv(report, fm.layout, fm.channels));
  io::write_text_atomic(dir / "summary.txt", format_importance_summary(report, fm.layout, fm.channels));

  const Montage montage = pipeline_montage(c);
  std::vector<Point2> pos;
  for (const auto& ch : fm.channels) pos.push_back(montage.positions()[montage.require(ch)]);
  const auto grid_mu = topomap_grid(report.cis_mu, pos, c.topomap_resolution);
  const auto grid_beta = topomap_grid(report.cis_beta, pos, c.topomap_resolution);
  io::write_text_atomic(dir / "topomap_mu.tsv", format_grid_tsv(grid_mu));
  io::write_text_atomic(dir / "topomap_beta.tsv", format_grid_tsv(grid_beta));
  if (c.svg) {
    double lo = report.cis_mu[0], hi = lo;
    for (const auto* v : {&report.cis_mu, &report.cis_beta}) {
      for (double x : *v) lo = std::min(lo, x), hi = std::max(hi, x);
    }
    io::write_text_atomic(dir / "topomap_mu.svg", topomap_svg(grid_mu, pos, fm.channels, lo, hi, "CIS mu"));
    io::write_text_atomic(dir / "topomap_beta.svg", topomap_svg(grid_beta, pos, fm.channels, lo, hi, "CIS beta"));
    io::write_text_atomic(dir / "wis.svg",
                          window_plot_svg(report, fm.layout, "WIS/IS at " + fm.channels[report.top_channel]));
  }
  log_line("importance: top channel " + fm.channels[report.top_channel]);
  return report;
}

/// Text report: per-subject PA, tp/tn, confusion and the importance summary.
inline std::string stage_report(const PipelineConfig& c) {
  const PipelinePaths p(c);
  const auto rep = parse_crossval_report(io::read_text(p.crossval()));
  std::string text = "posdec report\n=============\n\n";
  text += format_crossval_tables(rep);
  const fs::path summary = p.importance_dir() / "summary.txt";
  if (fs::exists(summary)) {
    text += "\nFeature importance\n";
    text += io::read_text(summary);
    text += "exports: importance/fis.tsv cis.tsv wis.tsv topomap_mu.tsv topomap_beta.tsv";
    text += c.svg ? " topomap_mu.svg topomap_beta.svg wis.svg\n" : "\n";
  } else {
    text += "\nFeature importance: not computed (run the importance stage)\n";
  }
  io::write_text_atomic(p.report(), text);
  io::write_text_atomic(p.confusion(), format_confusion_tsv(rep.confusion));
  log_line("report: " + p.report().string());
  return text;
}

inline void run_all(const PipelineConfig& c, bool with_synth = true) {
  if (with_synth) stage_synth(c);
  stage_preprocess(c);
  stage_features(c);
  stage_crossval(c);
  stage_importance(c);
  stage_report(c);
}

}  // namespace posdec
