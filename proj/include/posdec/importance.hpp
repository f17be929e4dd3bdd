#pragma once

// Aggregation of per-fold permutation importances into feature (FIS),
// channel (CIS), window (WIS) and whole-trial (IS) scores, plus topographic
// map interpolation and plain-text / SVG exports.

#include <iomanip>
#include <sstream>

#include "posdec/binary_io.hpp"
#include "posdec/core.hpp"

namespace posdec {

/// Element-wise mean of the per-fold importance vectors.
inline std::vector<double> average_fis(const std::vector<std::vector<double>>& per_fold) {
  if (per_fold.empty()) throw DataError("average_fis: no fold vectors");
  const std::size_t n = per_fold.front().size();
  std::vector<double> out(n, 0.0);
  for (const auto& v : per_fold) {
    if (v.size() != n) throw DataError("average_fis: fold vectors differ in length");
    for (std::size_t i = 0; i < n; ++i) out[i] += v[i];
  }
  for (double& x : out) x /= static_cast<double>(per_fold.size());
  return out;
}

/// Sum of the band's sliding and whole-trial scores, per channel.
inline std::vector<double> channel_scores(std::span<const double> fis, const FeatureLayout& layout, BandId band) {
  if (fis.size() != layout.total_features()) throw DataError("channel_scores: fis length differs from layout");
  std::vector<double> out(layout.n_channels(), 0.0);
  for (std::size_t c = 0; c < layout.n_channels(); ++c) {
    for (std::size_t w = 0; w < layout.windows_per_band(); ++w) out[c] += fis[layout.feature_index(c, band, w)];
  }
  return out;
}

struct WindowScores {
  std::vector<double> wis;  ///< one per sliding window
  double is = 0.0;          ///< whole trial
};

inline WindowScores window_scores(std::span<const double> fis, const FeatureLayout& layout, std::size_t channel,
                                  BandId band) {
  if (fis.size() != layout.total_features()) throw DataError("window_scores: fis length differs from layout");
  WindowScores out;
  out.wis.resize(layout.n_sliding());
  for (std::size_t w = 0; w < layout.n_sliding(); ++w) out.wis[w] = fis[layout.feature_index(channel, band, w)];
  out.is = fis[layout.feature_index(channel, band, layout.whole_window())];
  return out;
}

/// Channel holding the largest entry of either band's CIS; lowest index wins ties.
inline std::size_t top_channel(std::span<const double> cis_mu, std::span<const double> cis_beta) {
  if (cis_mu.size() != cis_beta.size() || cis_mu.empty()) throw DataError("top_channel: bad CIS vectors");
  std::size_t best = 0;
  double best_v = std::max(cis_mu[0], cis_beta[0]);
  for (std::size_t c = 1; c < cis_mu.size(); ++c) {
    const double v = std::max(cis_mu[c], cis_beta[c]);
    if (v > best_v) {
      best = c;
      best_v = v;
    }
  }
  return best;
}

struct ImportanceReport {
  std::vector<double> fis;
  std::vector<double> cis_mu, cis_beta;
  std::size_t top_channel = 0;
  std::vector<double> wis_mu, wis_beta;
  double is_mu = 0.0, is_beta = 0.0;
  std::vector<std::uint8_t> fold_percent_defined;
};

inline ImportanceReport build_importance_report(std::vector<double> fis, const FeatureLayout& layout) {
  ImportanceReport r;
  r.fis = std::move(fis);
  r.cis_mu = channel_scores(r.fis, layout, BandId::mu);
  r.cis_beta = channel_scores(r.fis, layout, BandId::beta);
  r.top_channel = top_channel(r.cis_mu, r.cis_beta);
  auto mu = window_scores(r.fis, layout, r.top_channel, BandId::mu);
  auto beta = window_scores(r.fis, layout, r.top_channel, BandId::beta);
  r.wis_mu = std::move(mu.wis);
  r.is_mu = mu.is;
  r.wis_beta = std::move(beta.wis);
  r.is_beta = beta.is;
  return r;
}

/// How far the largest value sits above the mean, in population standard deviations.
inline double peak_zscore(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0, mx = values[0];
  for (double v : values) {
    ss += (v - mean) * (v - mean);
    mx = std::max(mx, v);
  }
  const double sd = std::sqrt(ss / static_cast<double>(values.size()));
  return sd > 0 ? (mx - mean) / sd : 0.0;
}

// ---------------------------------------------------------------------------
// Topographic maps.

struct TopoGrid {
  std::size_t resolution = 0;
  double x0 = 0.0, y0 = 0.0;  ///< center of cell (0, 0)
  double step = 0.0;
  Matrix<double> values;      ///< row = y index, NaN outside the electrode hull

  Point2 cell_center(std::size_t ix, std::size_t iy) const {
    return {x0 + static_cast<double>(ix) * step, y0 + static_cast<double>(iy) * step};
  }
};

namespace detail {

inline double cross(Point2 o, Point2 a, Point2 b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

// Andrew's monotone chain, counter-clockwise, collinear points dropped.
inline std::vector<Point2> convex_hull(std::vector<Point2> pts) {
  std::sort(pts.begin(), pts.end(), [](Point2 a, Point2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  if (pts.size() < 3) return pts;
  std::vector<Point2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i - 1]) <= 0) --k;
    hull[k++] = pts[i - 1];
  }
  hull.resize(k - 1);
  return hull;
}

inline bool on_segment(Point2 a, Point2 b, Point2 p, double tol) {
  const double len = distance(a, b);
  if (len == 0) return distance(a, p) <= tol;
  if (std::abs(cross(a, b, p)) / len > tol) return false;
  const double t = ((p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y)) / (len * len);
  return t >= -tol / len && t <= 1 + tol / len;
}

inline bool inside_hull(const std::vector<Point2>& hull, Point2 p, double tol) {
  if (hull.size() == 1) return distance(hull[0], p) <= tol;
  if (hull.size() == 2) return on_segment(hull[0], hull[1], p, tol);
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Point2 a = hull[i], b = hull[(i + 1) % hull.size()];
    if (cross(a, b, p) / std::max(distance(a, b), 1e-300) < -tol) return false;
  }
  return true;
}

}  // namespace detail

/// Inverse-distance-weighted (power 2) value at p; exact at electrode positions.
inline double idw_value(std::span<const double> values, std::span<const Point2> positions, Point2 p) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double d = distance(positions[i], p);
    if (d < 1e-12) return values[i];
    const double w = 1.0 / (d * d);
    num += w * values[i];
    den += w;
  }
  return num / den;
}

/// Square grid over the electrodes' bounding square; cells outside the convex
/// hull of the positions are NaN.
inline TopoGrid topomap_grid(std::span<const double> values, std::span<const Point2> positions,
                             std::size_t resolution) {
  if (values.size() != positions.size() || values.empty()) throw DataError("topomap_grid: values/positions mismatch");
  if (resolution < 2) throw ConfigError("topomap_grid: resolution must be >= 2");
  for (std::size_t i = 0; i < positions.size(); ++i) {
    for (std::size_t j = i + 1; j < positions.size(); ++j) {
      if (distance(positions[i], positions[j]) < 1e-12) throw DataError("topomap_grid: duplicate electrode positions");
    }
  }
  double xmin = positions[0].x, xmax = xmin, ymin = positions[0].y, ymax = ymin;
  for (const auto& p : positions) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  const double side = std::max(xmax - xmin, ymax - ymin);
  const double cx = 0.5 * (xmin + xmax), cy = 0.5 * (ymin + ymax);
  TopoGrid g;
  g.resolution = resolution;
  g.step = side / static_cast<double>(resolution - 1);
  g.x0 = cx - side / 2.0;
  g.y0 = cy - side / 2.0;
  g.values = Matrix<double>(resolution, resolution, std::numeric_limits<double>::quiet_NaN());
  const auto hull = detail::convex_hull(std::vector<Point2>(positions.begin(), positions.end()));
  const double tol = 1e-9 * std::max(side, 1.0);
  for (std::size_t iy = 0; iy < resolution; ++iy) {
    for (std::size_t ix = 0; ix < resolution; ++ix) {
      const Point2 p = g.cell_center(ix, iy);
      if (detail::inside_hull(hull, p, tol)) g.values(iy, ix) = idw_value(values, positions, p);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Exports.

inline std::string format_fis_tsv(std::span<const double> fis, const FeatureLayout& layout,
                                  const std::vector<std::string>& channels) {
  std::ostringstream out;
  out << "feature\tchannel\tband\twindow\tcenter_s\tfis\n";
  for (std::size_t f = 0; f < fis.size(); ++f) {
    const auto c = layout.feature_coords(f);
    out << f << '\t' << channels[c.channel] << '\t' << band_name(c.band) << '\t';
    if (c.window == layout.whole_window()) {
      out << "whole\t-";
    } else {
      out << c.window << '\t' << io::fmt_fixed(layout.windows().center_s(c.window), 3);
    }
    out << '\t' << io::fmt_double(fis[f]) << '\n';
  }
  return out.str();
}

inline std::string format_cis_tsv(const ImportanceReport& r, const std::vector<std::string>& channels) {
  std::ostringstream out;
  out << "channel\tcis_mu\tcis_beta\n";
  for (std::size_t c = 0; c < channels.size(); ++c) {
    out << channels[c] << '\t' << io::fmt_double(r.cis_mu[c]) << '\t' << io::fmt_double(r.cis_beta[c]) << '\n';
  }
  return out.str();
}

inline std::string format_wis_tsv(const ImportanceReport& r, const FeatureLayout& layout,
                                  const std::vector<std::string>& channels) {
  std::ostringstream out;
  out << "# channel " << channels[r.top_channel] << '\n';
  out << "# is_mu " << io::fmt_double(r.is_mu) << '\n';
  out << "# is_beta " << io::fmt_double(r.is_beta) << '\n';
  out << "window\tcenter_s\twis_mu\twis_beta\n";
  for (std::size_t w = 0; w < r.wis_mu.size(); ++w) {
    out << w << '\t' << io::fmt_fixed(layout.windows().center_s(w), 3) << '\t' << io::fmt_double(r.wis_mu[w])
        << '\t' << io::fmt_double(r.wis_beta[w]) << '\n';
  }
  return out.str();
}

inline std::string format_grid_tsv(const TopoGrid& g) {
  std::ostringstream out;
  out << "# resolution " << g.resolution << " x0 " << io::fmt_double(g.x0) << " y0 " << io::fmt_double(g.y0)
      << " step " << io::fmt_double(g.step) << '\n';
  for (std::size_t iy = g.resolution; iy-- > 0;) {
    for (std::size_t ix = 0; ix < g.resolution; ++ix) {
      out << (ix ? "\t" : "") << io::fmt_double(g.values(iy, ix));
    }
    out << '\n';
  }
  return out.str();
}

namespace detail {

inline std::string heat_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  // blue -> green -> yellow -> red
  const double stops[4][3] = {{49, 54, 149}, {102, 189, 99}, {254, 224, 139}, {215, 48, 39}};
  const double s = t * 3.0;
  const auto i = std::min<std::size_t>(2, static_cast<std::size_t>(s));
  const double u = s - static_cast<double>(i);
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(stops[i][0] + u * (stops[i + 1][0] - stops[i][0])),
                static_cast<int>(stops[i][1] + u * (stops[i + 1][1] - stops[i][1])),
                static_cast<int>(stops[i][2] + u * (stops[i + 1][2] - stops[i][2])));
  return buf;
}

}  // namespace detail

/// Heatmap of a grid with electrode markers. `lo`/`hi` fix the color scale
/// so two maps can share it.
inline std::string topomap_svg(const TopoGrid& g, std::span<const Point2> positions,
                               const std::vector<std::string>& names, double lo, double hi,
                               std::string_view title) {
  const double px = 400.0 / static_cast<double>(g.resolution);
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"460\" height=\"450\" viewBox=\"0 0 460 450\">\n";
  out << "<text x=\"230\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" << title
      << "</text>\n";
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t iy = 0; iy < g.resolution; ++iy) {
    for (std::size_t ix = 0; ix < g.resolution; ++ix) {
      const double v = g.values(iy, ix);
      if (std::isnan(v)) continue;
      const double x = 30.0 + static_cast<double>(ix) * px;
      const double y = 30.0 + static_cast<double>(g.resolution - 1 - iy) * px;
      out << "<rect x=\"" << io::fmt_fixed(x, 2) << "\" y=\"" << io::fmt_fixed(y, 2) << "\" width=\""
          << io::fmt_fixed(px + 0.05, 2) << "\" height=\"" << io::fmt_fixed(px + 0.05, 2) << "\" fill=\""
          << detail::heat_color((v - lo) / span) << "\"/>\n";
    }
  }
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const double x = 30.0 + (positions[i].x - g.x0) / g.step * px + px / 2.0;
    const double y = 30.0 + (static_cast<double>(g.resolution - 1) - (positions[i].y - g.y0) / g.step) * px + px / 2.0;
    out << "<circle cx=\"" << io::fmt_fixed(x, 2) << "\" cy=\"" << io::fmt_fixed(y, 2)
        << "\" r=\"3\" fill=\"magenta\"><title>" << names[i] << "</title></circle>\n";
  }
  out << "</svg>\n";
  return out.str();
}

/// WIS series for both bands with the whole-trial IS values as dashed lines.
inline std::string window_plot_svg(const ImportanceReport& r, const FeatureLayout& layout, std::string_view title) {
  const double w = 560, h = 320, left = 60, right = 20, top = 30, bottom = 40;
  double lo = std::min({0.0, r.is_mu, r.is_beta}), hi = std::max(r.is_mu, r.is_beta);
  for (double v : r.wis_mu) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : r.wis_beta) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!(hi > lo)) hi = lo + 1.0;
  const auto centers = layout.window_centers();
  const double cmin = centers.front(), cmax = centers.back() > cmin ? centers.back() : cmin + 1.0;
  auto sx = [&](double c) { return left + (c - cmin) / (cmax - cmin) * (w - left - right); };
  auto sy = [&](double v) { return top + (hi - v) / (hi - lo) * (h - top - bottom); };
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  out << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
      << title << "</text>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
      << "\" stroke=\"black\"/>\n";
  auto series = [&](const std::vector<double>& v, std::string_view color) {
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < v.size(); ++i) {
      out << (i ? " " : "") << io::fmt_fixed(sx(centers[i]), 2) << ',' << io::fmt_fixed(sy(v[i]), 2);
    }
    out << "\"/>\n";
  };
  auto level = [&](double v, std::string_view color) {
    out << "<line x1=\"" << left << "\" y1=\"" << io::fmt_fixed(sy(v), 2) << "\" x2=\"" << w - right << "\" y2=\""
        << io::fmt_fixed(sy(v), 2) << "\" stroke=\"" << color << "\" stroke-dasharray=\"6,4\"/>\n";
  };
  series(r.wis_mu, "#1f77b4");
  series(r.wis_beta, "#d62728");
  level(r.is_mu, "#1f77b4");
  level(r.is_beta, "#d62728");
  out << "<text x=\"" << w / 2 << "\" y=\"" << h - 8
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">window center (s)</text>\n";
  out << "<text x=\"" << w - right - 120 << "\" y=\"" << top + 14
      << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#1f77b4\">mu</text>\n";
  out << "<text x=\"" << w - right - 80 << "\" y=\"" << top + 14
      << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#d62728\">beta</text>\n";
  out << "</svg>\n";
  return out.str();
}

}  // namespace posdec
