#pragma once

// FeatureMatrix and its container file (".pdfm"), little-endian:
//
//   char[4] "PDFM", u32 version (1)
//   layout:   u64 n_channels, f64 trial_s, f64 window_s, f64 step_s
//   f64 sample_rate; u32 channel count + names
//   u64 rows, u64 cols
//   rows x { str subject_id, i32 session, i32 label }
//   u32 subject-band count x { str subject, f64 mu_lo, f64 mu_hi, f64 beta_lo, f64 beta_hi }
//   u8 has_normalization; if 1: u32 subjects x str, then mean[s][f], std[s][f] (f64),
//        constant[s][f] (u8)
//   f64 values, row-major
//   outlier mask, row-major bits packed LSB-first, ceil(rows*cols/8) bytes

#include "posdec/binary_io.hpp"
#include "posdec/spectral.hpp"

namespace posdec {

struct RowMeta {
  std::string subject_id;
  int session = 1;
  int label = 1;
  friend bool operator==(const RowMeta&, const RowMeta&) = default;
};

/// Per (subject, feature) statistics over non-outlier trials.
struct NormalizationParams {
  std::vector<std::string> subjects;
  Matrix<double> mean;           ///< subjects x features
  Matrix<double> stddev;         ///< population convention
  Matrix<std::uint8_t> constant; ///< 1 where stddev == 0

  friend bool operator==(const NormalizationParams&, const NormalizationParams&) = default;
};

struct FeatureMatrix {
  FeatureLayout layout;
  std::vector<std::string> channels;
  double sample_rate = 0.0;
  Matrix<double> values;
  Matrix<std::uint8_t> outlier_mask;
  std::vector<RowMeta> meta;
  std::vector<SubjectBands> subject_bands;
  std::optional<NormalizationParams> normalization;

  std::size_t rows() const noexcept { return values.rows(); }
  std::size_t cols() const noexcept { return values.cols(); }

  /// Subjects in order of first appearance.
  std::vector<std::string> subjects() const {
    std::vector<std::string> out;
    for (const auto& m : meta) {
      if (std::find(out.begin(), out.end(), m.subject_id) == out.end()) out.push_back(m.subject_id);
    }
    return out;
  }

  std::vector<std::size_t> rows_of(std::string_view subject) const {
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < meta.size(); ++r) {
      if (meta[r].subject_id == subject) out.push_back(r);
    }
    return out;
  }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(meta.size());
    for (const auto& m : meta) out.push_back(m.label);
    return out;
  }

  void validate() const {
    if (values.cols() != layout.total_features()) throw DataError("feature matrix: width differs from layout");
    if (outlier_mask.rows() != values.rows() || outlier_mask.cols() != values.cols()) {
      throw DataError("feature matrix: mask shape differs from values");
    }
    if (meta.size() != values.rows()) throw DataError("feature matrix: metadata row count differs");
    if (channels.size() != layout.n_channels()) throw DataError("feature matrix: channel count differs");
    for (const auto& m : meta) check_label(m.label);
  }
};

inline constexpr std::uint32_t kFeatureMatrixVersion = 1;

inline void write_feature_matrix(std::ostream& out, const FeatureMatrix& fm) {
  io::Writer w(out);
  w.bytes("PDFM");
  w.u32(kFeatureMatrixVersion);
  w.u64(fm.layout.n_channels());
  w.f64(fm.layout.windows().trial_s);
  w.f64(fm.layout.windows().length_s);
  w.f64(fm.layout.windows().step_s);
  w.f64(fm.sample_rate);
  w.u32(static_cast<std::uint32_t>(fm.channels.size()));
  for (const auto& c : fm.channels) w.str(c);
  w.u64(fm.rows());
  w.u64(fm.cols());
  for (const auto& m : fm.meta) {
    w.str(m.subject_id);
    w.i32(m.session);
    w.i32(m.label);
  }
  w.u32(static_cast<std::uint32_t>(fm.subject_bands.size()));
  for (const auto& b : fm.subject_bands) {
    w.str(b.subject_id);
    w.f64(b.mu.low);
    w.f64(b.mu.high);
    w.f64(b.beta.low);
    w.f64(b.beta.high);
  }
  w.u8(fm.normalization ? 1 : 0);
  if (fm.normalization) {
    const auto& p = *fm.normalization;
    w.u32(static_cast<std::uint32_t>(p.subjects.size()));
    for (const auto& s : p.subjects) w.str(s);
    for (double v : p.mean.data()) w.f64(v);
    for (double v : p.stddev.data()) w.f64(v);
    for (auto v : p.constant.data()) w.u8(v);
  }
  for (double v : fm.values.data()) w.f64(v);
  const auto& mask = fm.outlier_mask.data();
  std::string packed((mask.size() + 7) / 8, '\0');
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) packed[i / 8] = static_cast<char>(packed[i / 8] | (1 << (i % 8)));
  }
  w.bytes(packed);
}

inline FeatureMatrix read_feature_matrix(std::istream& in, const std::string& what = "features") {
  io::Reader r(in, what);
  r.expect_magic("PDFM");
  if (const auto v = r.u32(); v != kFeatureMatrixVersion) {
    throw DataError(what + ": unsupported version " + std::to_string(v));
  }
  FeatureMatrix fm;
  const auto n_channels = r.u64();
  WindowSpec ws;
  ws.trial_s = r.f64();
  ws.length_s = r.f64();
  ws.step_s = r.f64();
  fm.layout = FeatureLayout(n_channels, ws);
  fm.sample_rate = r.f64();
  const auto nc = r.u32();
  for (std::uint32_t i = 0; i < nc; ++i) fm.channels.push_back(r.str());
  const auto rows = r.u64();
  const auto cols = r.u64();
  fm.meta.resize(rows);
  for (auto& m : fm.meta) {
    m.subject_id = r.str();
    m.session = r.i32();
    m.label = r.i32();
  }
  const auto nb = r.u32();
  for (std::uint32_t i = 0; i < nb; ++i) {
    SubjectBands b;
    b.subject_id = r.str();
    b.mu = {r.f64(), r.f64()};
    b.beta = {r.f64(), r.f64()};
    fm.subject_bands.push_back(b);
  }
  if (r.u8()) {
    NormalizationParams p;
    const auto ns = r.u32();
    for (std::uint32_t i = 0; i < ns; ++i) p.subjects.push_back(r.str());
    p.mean = Matrix<double>(ns, cols);
    p.stddev = Matrix<double>(ns, cols);
    p.constant = Matrix<std::uint8_t>(ns, cols);
    for (double& v : p.mean.data()) v = r.f64();
    for (double& v : p.stddev.data()) v = r.f64();
    for (auto& v : p.constant.data()) v = r.u8();
    fm.normalization = std::move(p);
  }
  fm.values = Matrix<double>(rows, cols);
  r.read_raw(reinterpret_cast<char*>(fm.values.data().data()), rows * cols * sizeof(double));
  for (double& v : fm.values.data()) v = io::to_little(v);
  std::string packed((rows * cols + 7) / 8, '\0');
  r.read_raw(packed.data(), packed.size());
  fm.outlier_mask = Matrix<std::uint8_t>(rows, cols);
  auto& mask = fm.outlier_mask.data();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = (static_cast<unsigned char>(packed[i / 8]) >> (i % 8)) & 1u;
  }
  fm.validate();
  return fm;
}

inline void save_feature_matrix(const std::filesystem::path& path, const FeatureMatrix& fm) {
  io::write_atomic(path, [&](std::ostream& out) { write_feature_matrix(out, fm); });
}

inline FeatureMatrix load_feature_matrix(const std::filesystem::path& path) {
  auto in = io::open_input(path);
  return read_feature_matrix(in, path.string());
}

/// Debug export: header of feature names, then subject, session, label and
/// values per row; outliers are suffixed with '*'.
inline void export_feature_text(std::ostream& out, const FeatureMatrix& fm) {
  out << "subject\tsession\tlabel";
  for (std::size_t f = 0; f < fm.cols(); ++f) {
    const auto c = fm.layout.feature_coords(f);
    out << '\t' << fm.channels[c.channel] << '_' << band_name(c.band) << '_';
    if (c.window == fm.layout.whole_window()) {
      out << "whole";
    } else {
      out << 'w' << c.window;
    }
  }
  out << '\n';
  for (std::size_t r = 0; r < fm.rows(); ++r) {
    out << fm.meta[r].subject_id << '\t' << fm.meta[r].session << '\t' << fm.meta[r].label;
    for (std::size_t f = 0; f < fm.cols(); ++f) {
      out << '\t' << io::fmt_double(fm.values(r, f)) << (fm.outlier_mask(r, f) ? "*" : "");
    }
    out << '\n';
  }
}

}  // namespace posdec
