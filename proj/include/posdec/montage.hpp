#pragma once

// Electrode positions on the extended 10-20 grid, the bundled montages, and
// the montage text format:
//
//   # comment
//   C3 -0.40 0.00          one row per channel: name x y
//   ...
//   [neighbors]            optional; nearest-4 neighbors when absent
//   C3: FC3,CP3,C5,C1
//
// Neighbor lists are closed under symmetry on load.

#include <fstream>
#include <numbers>
#include <sstream>

#include "posdec/core.hpp"

namespace posdec {

/// Projected position of a 10-20 / 10-10 / 10-5 ("h" suffix) label.
///
/// Rows sit 18 degrees apart along the nasion-inion arc (Cz at the vertex),
/// columns 18 degrees apart laterally; the sphere is flattened with an
/// azimuthal-equidistant projection so the unit circle is the 90-degree ring.
/// x grows to the right ear, y to the nose.
inline std::optional<Point2> standard_position(std::string_view label) {
  struct Row {
    std::string_view prefix;
    double row;
  };
  // Longest prefixes first so "FCC" is not read as "FC".
  static constexpr Row rows[] = {
      {"FFC", 1.5}, {"FCC", 0.5}, {"CCP", -0.5}, {"CPP", -1.5}, {"Fp", 4.0},
      {"AF", 3.0},  {"FC", 1.0},  {"FT", 1.0},   {"CP", -1.0},  {"TP", -1.0},
      {"PO", -3.0}, {"F", 2.0},   {"C", 0.0},    {"T", 0.0},    {"P", -2.0},
      {"O", -4.0},  {"I", -5.0},
  };
  for (const auto& r : rows) {
    if (label.size() <= r.prefix.size() || label.substr(0, r.prefix.size()) != r.prefix) continue;
    std::string_view rest = label.substr(r.prefix.size());
    double column = 0.0;
    if (rest == "z") {
      column = 0.0;
    } else {
      bool half = false;
      if (!rest.empty() && rest.back() == 'h') {
        half = true;
        rest.remove_suffix(1);
      }
      if (rest.empty()) continue;
      int n = 0;
      for (char ch : rest) {
        if (!std::isdigit(static_cast<unsigned char>(ch))) return std::nullopt;
        n = n * 10 + (ch - '0');
      }
      if (n == 0) return std::nullopt;
      column = (n % 2 == 1) ? -static_cast<double>(n + 1) / 2.0 : static_cast<double>(n) / 2.0;
      if (half) column += (n % 2 == 1) ? 0.5 : -0.5;
    }
    constexpr double step = 18.0 * std::numbers::pi / 180.0;
    const double lat = r.row * step;
    const double lon = column * step;
    const double px = std::sin(lon);
    const double py = std::cos(lon) * std::sin(lat);
    const double pz = std::cos(lon) * std::cos(lat);
    const double incl = std::acos(std::clamp(pz, -1.0, 1.0));
    const double planar = std::hypot(px, py);
    if (planar < 1e-15) return Point2{0.0, 0.0};
    const double radius = incl / (std::numbers::pi / 2.0);
    return Point2{radius * px / planar, radius * py / planar};
  }
  return std::nullopt;
}

/// k nearest neighbors per channel (distance, then index), closed under
/// symmetry.
inline std::vector<std::vector<std::size_t>> nearest_neighbors(std::span<const Point2> positions,
                                                               std::size_t k) {
  const std::size_t n = positions.size();
  std::vector<std::vector<std::size_t>> out(n);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) order.push_back(j);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return distance(positions[i], positions[a]) < distance(positions[i], positions[b]) - 1e-12;
    });
    for (std::size_t m = 0; m < std::min(k, order.size()); ++m) {
      out[i].push_back(order[m]);
      out[order[m]].push_back(i);
    }
  }
  for (auto& list : out) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return out;
}

inline Montage montage_from_labels(const std::vector<std::string>& labels,
                                   std::size_t neighbor_count = 4) {
  std::vector<Point2> positions;
  positions.reserve(labels.size());
  for (const auto& label : labels) {
    auto p = standard_position(label);
    if (!p) throw ConfigError("montage: no standard position for label '" + label + "'");
    positions.push_back(*p);
  }
  auto neighbors = nearest_neighbors(positions, neighbor_count);
  return Montage(labels, std::move(positions), std::move(neighbors));
}

/// The 106-channel extended 10-20 set used for full-scale runs.
inline const std::vector<std::string>& default_channel_labels() {
  static const std::vector<std::string> labels = {
      "Fp1",   "Fpz",   "Fp2",   "AF7",   "AF5",   "AF3",   "AFz",   "AF4",   "AF6",
      "AF8",   "F9",    "F7",    "F5",    "F3",    "F1",    "Fz",    "F2",    "F4",
      "F6",    "F8",    "F10",   "FFC5h", "FFC3h", "FFC1h", "FFC2h", "FFC4h", "FFC6h",
      "FT9",   "FT7",   "FC5",   "FC3",   "FC1",   "FCz",   "FC2",   "FC4",   "FC6",
      "FT8",   "FT10",  "FCC5h", "FCC3h", "FCC1h", "FCC2h", "FCC4h", "FCC6h", "T9",
      "T7",    "C5",    "C3",    "C1",    "Cz",    "C2",    "C4",    "C6",    "T8",
      "T10",   "CCP5h", "CCP3h", "CCP1h", "CCP2h", "CCP4h", "CCP6h", "TP9",   "TP7",
      "CP5",   "CP3",   "CP1",   "CPz",   "CP2",   "CP4",   "CP6",   "TP8",   "TP10",
      "CPP5h", "CPP3h", "CPP1h", "CPP2h", "CPP4h", "CPP6h", "P9",    "P7",    "P5",
      "P3",    "P1",    "Pz",    "P2",    "P4",    "P6",    "P8",    "P10",   "PO9",
      "PO7",   "PO5",   "PO3",   "PO1",   "POz",   "PO2",   "PO4",   "PO6",   "PO8",
      "PO10",  "O1",    "Oz",    "O2",    "I1",    "Iz",    "I2",
  };
  return labels;
}

/// 32 channels concentrated over sensorimotor cortex, for desk-scale runs.
inline const std::vector<std::string>& desk_channel_labels() {
  static const std::vector<std::string> labels = {
      "Fz",  "F3",  "F4",  "F7",  "F8",  "FC5", "FC3", "FC1", "FCz", "FC2", "FC4",
      "FC6", "T7",  "C5",  "C3",  "C1",  "Cz",  "C2",  "C4",  "C6",  "T8",  "CP5",
      "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "P3",  "Pz",  "P4",  "Oz",
  };
  return labels;
}

inline Montage default_montage() { return montage_from_labels(default_channel_labels()); }
inline Montage desk_montage() { return montage_from_labels(desk_channel_labels()); }

inline Montage parse_montage(std::istream& in, std::size_t neighbor_count = 4) {
  std::vector<std::string> names;
  std::vector<Point2> positions;
  std::vector<std::pair<std::string, std::vector<std::string>>> neighbor_lines;
  bool in_neighbors = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string text = detail::trim(line);
    if (text.empty()) continue;
    if (text == "[neighbors]") {
      in_neighbors = true;
      continue;
    }
    if (in_neighbors) {
      const auto colon = text.find(':');
      if (colon == std::string::npos) {
        throw ConfigError("montage line " + std::to_string(line_no) + ": expected 'name: n1,n2'");
      }
      std::vector<std::string> list;
      for (auto& item : detail::split(std::string_view(text).substr(colon + 1), ',')) {
        if (!item.empty()) list.push_back(item);
      }
      neighbor_lines.emplace_back(detail::trim(std::string_view(text).substr(0, colon)),
                                  std::move(list));
      continue;
    }
    std::istringstream fields(text);
    std::string name;
    Point2 p;
    if (!(fields >> name >> p.x >> p.y)) {
      throw ConfigError("montage line " + std::to_string(line_no) + ": expected 'name x y'");
    }
    names.push_back(name);
    positions.push_back(p);
  }
  if (names.empty()) throw ConfigError("montage: no channels");

  std::vector<std::vector<std::size_t>> neighbors;
  if (neighbor_lines.empty()) {
    neighbors = nearest_neighbors(positions, neighbor_count);
  } else {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < names.size(); ++i) index.emplace(names[i], i);
    auto lookup = [&](const std::string& n) {
      auto it = index.find(n);
      if (it == index.end()) throw ConfigError("montage: neighbor section names unknown channel '" + n + "'");
      return it->second;
    };
    neighbors.assign(names.size(), {});
    for (const auto& [name, list] : neighbor_lines) {
      const std::size_t i = lookup(name);
      for (const auto& other : list) {
        const std::size_t j = lookup(other);
        neighbors[i].push_back(j);
        neighbors[j].push_back(i);
      }
    }
  }
  return Montage(std::move(names), std::move(positions), std::move(neighbors));
}

inline Montage load_montage(const std::string& path, std::size_t neighbor_count = 4) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open montage file '" + path + "'");
  return parse_montage(in, neighbor_count);
}

inline void write_montage(std::ostream& out, const Montage& montage) {
  out.precision(17);
  for (std::size_t i = 0; i < montage.size(); ++i) {
    out << montage.channels()[i] << ' ' << montage.positions()[i].x << ' '
        << montage.positions()[i].y << '\n';
  }
  out << "[neighbors]\n";
  for (std::size_t i = 0; i < montage.size(); ++i) {
    out << montage.channels()[i] << ':';
    const auto& list = montage.neighbors(i);
    for (std::size_t m = 0; m < list.size(); ++m) {
      out << (m ? "," : " ") << montage.channels()[list[m]];
    }
    out << '\n';
  }
}

/// Restricts a montage to `names` (in montage order), recomputing nothing:
/// neighbors outside the subset are dropped.
inline Montage subset_montage(const Montage& montage, const std::vector<std::string>& names) {
  std::vector<std::size_t> keep;
  for (const auto& n : names) keep.push_back(montage.require(n));
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  std::vector<std::size_t> remap(montage.size(), static_cast<std::size_t>(-1));
  for (std::size_t i = 0; i < keep.size(); ++i) remap[keep[i]] = i;
  std::vector<std::string> out_names;
  std::vector<Point2> out_pos;
  std::vector<std::vector<std::size_t>> out_nb(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    out_names.push_back(montage.channels()[keep[i]]);
    out_pos.push_back(montage.positions()[keep[i]]);
    for (std::size_t j : montage.neighbors(keep[i])) {
      if (remap[j] != static_cast<std::size_t>(-1)) out_nb[i].push_back(remap[j]);
    }
  }
  return Montage(std::move(out_names), std::move(out_pos), std::move(out_nb));
}

}  // namespace posdec
