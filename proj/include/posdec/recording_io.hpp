#pragma once

// Recording container (".rec"), all integers and floats little-endian:
//
//   char[4]  magic "PDRC"
//   u32      version (1)
//   u32+byte subject_id
//   f64      sample_rate
//   u32      channel count, then u32+bytes per channel name
//   u64      samples per channel
//   f32[]    samples, channel-major (all of channel 0, then channel 1, ...)
//
// Delimited-text import: a header row of channel names, then one row per
// sample with one column per channel, separated by tabs, commas or spaces.
//
// Trial events sidecar (".events.tsv"): header "onset_sample\tlabel\tsession",
// one row per trial.

#include <charconv>

#include "posdec/binary_io.hpp"

namespace posdec {

inline constexpr std::uint32_t kRecordingVersion = 1;

inline void write_recording(std::ostream& out, const Recording& rec) {
  io::Writer w(out);
  w.bytes("PDRC");
  w.u32(kRecordingVersion);
  w.str(rec.subject_id);
  w.f64(rec.sample_rate);
  w.u32(static_cast<std::uint32_t>(rec.channels.size()));
  for (const auto& c : rec.channels) w.str(c);
  w.u64(rec.n_samples());
  std::vector<float> buf(rec.n_samples());
  for (std::size_t c = 0; c < rec.n_channels(); ++c) {
    const auto row = rec.samples.row(c);
    for (std::size_t t = 0; t < buf.size(); ++t) buf[t] = io::to_little(static_cast<float>(row[t]));
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

inline Recording read_recording(std::istream& in, const std::string& what = "recording") {
  io::Reader r(in, what);
  r.expect_magic("PDRC");
  const auto version = r.u32();
  if (version != kRecordingVersion) throw DataError(what + ": unsupported version " + std::to_string(version));
  Recording rec;
  rec.subject_id = r.str();
  rec.sample_rate = r.f64();
  const auto nc = r.u32();
  for (std::uint32_t c = 0; c < nc; ++c) rec.channels.push_back(r.str());
  const auto ns = r.u64();
  rec.samples = Matrix<double>(nc, ns);
  std::vector<float> buf(ns);
  for (std::uint32_t c = 0; c < nc; ++c) {
    r.read_raw(reinterpret_cast<char*>(buf.data()), ns * sizeof(float));
    auto row = rec.samples.row(c);
    for (std::size_t t = 0; t < ns; ++t) row[t] = static_cast<double>(io::to_little(buf[t]));
  }
  rec.validate();
  return rec;
}

struct RecordingHeader {
  std::string subject_id;
  double sample_rate = 0.0;
  std::vector<std::string> channels;
  std::uint64_t n_samples = 0;
};

inline RecordingHeader read_recording_header(const std::filesystem::path& path) {
  auto in = io::open_input(path);
  io::Reader r(in, path.string());
  r.expect_magic("PDRC");
  if (const auto v = r.u32(); v != kRecordingVersion) {
    throw DataError(path.string() + ": unsupported version " + std::to_string(v));
  }
  RecordingHeader h;
  h.subject_id = r.str();
  h.sample_rate = r.f64();
  const auto nc = r.u32();
  for (std::uint32_t c = 0; c < nc; ++c) h.channels.push_back(r.str());
  h.n_samples = r.u64();
  return h;
}

inline void save_recording(const std::filesystem::path& path, const Recording& rec) {
  io::write_atomic(path, [&](std::ostream& out) { write_recording(out, rec); });
}

inline Recording load_recording(const std::filesystem::path& path) {
  auto in = io::open_input(path);
  return read_recording(in, path.string());
}

inline Recording import_text_recording(std::istream& in, std::string subject_id, double sample_rate) {
  auto split_fields = [](const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
      if (ch == '\t' || ch == ',' || ch == ' ' || ch == '\r') {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
      } else {
        cur.push_back(ch);
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
  };
  std::string line;
  if (!std::getline(in, line)) throw DataError("text recording: missing header row");
  Recording rec;
  rec.subject_id = std::move(subject_id);
  rec.sample_rate = sample_rate;
  rec.channels = split_fields(line);
  if (rec.channels.empty()) throw DataError("text recording: empty header row");
  std::vector<std::vector<double>> columns(rec.channels.size());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    auto fields = split_fields(line);
    if (fields.empty()) continue;
    if (fields.size() != rec.channels.size()) {
      throw DataError("text recording line " + std::to_string(line_no) + ": expected " +
                      std::to_string(rec.channels.size()) + " columns");
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      double v = 0.0;
      const auto& f = fields[c];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        throw DataError("text recording line " + std::to_string(line_no) + ": bad number '" + f + "'");
      }
      columns[c].push_back(v);
    }
  }
  const std::size_t ns = columns.front().size();
  rec.samples = Matrix<double>(rec.channels.size(), ns);
  for (std::size_t c = 0; c < columns.size(); ++c) {
    std::copy(columns[c].begin(), columns[c].end(), rec.samples.row(c).begin());
  }
  rec.validate();
  return rec;
}

struct TrialEvent {
  std::size_t onset_sample = 0;
  int label = 1;
  int session = 1;
  friend bool operator==(const TrialEvent&, const TrialEvent&) = default;
};

inline void write_events(std::ostream& out, const std::vector<TrialEvent>& events) {
  out << "onset_sample\tlabel\tsession\n";
  for (const auto& e : events) out << e.onset_sample << '\t' << e.label << '\t' << e.session << '\n';
}

inline std::vector<TrialEvent> read_events(std::istream& in, const std::string& what = "events") {
  std::string line;
  if (!std::getline(in, line) || line.rfind("onset_sample", 0) != 0) {
    throw DataError(what + ": missing 'onset_sample\\tlabel\\tsession' header");
  }
  std::vector<TrialEvent> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    TrialEvent e;
    if (!(ss >> e.onset_sample >> e.label >> e.session)) {
      throw DataError(what + " line " + std::to_string(line_no) + ": malformed event");
    }
    check_label(e.label);
    out.push_back(e);
  }
  return out;
}

}  // namespace posdec
