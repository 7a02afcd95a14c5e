/*
 * Copyright 2026 The opendet-lab Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Static SVG plots, each paired with the CSV of the plotted data.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "opendet/io.hpp"
#include "opendet/latent_core.hpp"
#include "opendet/losses.hpp"
#include "opendet/openset_eval.hpp"

namespace opendet {

struct PlotOutput {
  std::string svg;
  std::string csv;
};

// ---------------------------------------------------------------------------
// PCA

struct Projection {
  std::vector<std::pair<double, double>> points;
  Vector component1;
  Vector component2;
};

namespace detail {

using Matrix = std::vector<Vector>;

inline Vector mat_vec(const Matrix& m, const Vector& v) {
  Vector out(v.size(), 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = dot(m[i], v);
  return out;
}

// Leading unit eigenvector of a symmetric PSD matrix, or nullopt when the
// matrix annihilates the start vector.
inline std::optional<Vector> power_iteration(const Matrix& m, Vector v, double tolerance) {
  for (int it = 0; it < 100000; ++it) {
    Vector w = mat_vec(m, v);
    const double n = l2_norm(w);
    if (n < 1e-300) return std::nullopt;
    for (double& x : w) x /= n;
    double delta = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) delta = std::max(delta, std::abs(w[i] - v[i]));
    v = std::move(w);
    if (delta < tolerance) break;
  }
  return v;
}

// Deterministic sign: the largest-magnitude entry is positive.
inline void fix_sign(Vector& v) {
  std::size_t k = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (std::abs(v[i]) > std::abs(v[k])) k = i;
  }
  if (v[k] < 0.0) {
    for (double& x : v) x = -x;
  }
}

inline Vector orthogonal_unit(const Vector& u) {
  for (std::size_t i = 0; i < u.size(); ++i) {
    Vector e(u.size(), 0.0);
    e[i] = 1.0;
    const double d = dot(e, u);
    for (std::size_t j = 0; j < e.size(); ++j) e[j] -= d * u[j];
    if (l2_norm(e) > 1e-6) return l2_normalize(e);
  }
  return Vector(u.size(), 0.0);
}

}  // namespace detail

// Two leading principal components by power iteration with deflation.
inline Projection pca_2d(const std::vector<Vector>& xs, double tolerance = 1e-8) {
  if (xs.empty()) throw std::invalid_argument("pca: no points");
  const std::size_t d = xs.front().size();
  if (d == 0) throw std::invalid_argument("pca: zero-dimensional points");
  for (const auto& x : xs) {
    if (x.size() != d) throw std::invalid_argument("pca: points differ in dimension");
  }
  Vector mean(d, 0.0);
  for (const auto& x : xs) {
    for (std::size_t i = 0; i < d; ++i) mean[i] += x[i] / static_cast<double>(xs.size());
  }
  detail::Matrix cov(d, Vector(d, 0.0));
  for (const auto& x : xs) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) cov[i][j] += (x[i] - mean[i]) * (x[j] - mean[j]);
    }
  }
  const Vector start = l2_normalize(Vector(d, 1.0));

  Projection p;
  p.component1 = detail::power_iteration(cov, start, tolerance).value_or(Vector{});
  if (p.component1.empty()) {
    p.component1.assign(d, 0.0);
    p.component1[0] = 1.0;
  }
  detail::fix_sign(p.component1);
  const double l1 = dot(p.component1, detail::mat_vec(cov, p.component1));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) cov[i][j] -= l1 * p.component1[i] * p.component1[j];
  }
  Vector seed = detail::orthogonal_unit(p.component1);
  if (l2_norm(seed) > 0.0) {
    // Keep the second start vector orthogonal to the first component.
    auto v2 = detail::power_iteration(cov, seed, tolerance);
    p.component2 = v2 ? *v2 : seed;
    const double proj = dot(p.component2, p.component1);
    for (std::size_t i = 0; i < d; ++i) p.component2[i] -= proj * p.component1[i];
    if (l2_norm(p.component2) > 1e-12) p.component2 = l2_normalize(p.component2);
    detail::fix_sign(p.component2);
  } else {
    p.component2.assign(d, 0.0);
  }
  for (const auto& x : xs) {
    Vector c(d);
    for (std::size_t i = 0; i < d; ++i) c[i] = x[i] - mean[i];
    p.points.emplace_back(dot(c, p.component1), dot(c, p.component2));
  }
  return p;
}

// ---------------------------------------------------------------------------
// SVG

namespace detail {

inline std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

class SvgCanvas {
 public:
  SvgCanvas(double xmin, double xmax, double ymin, double ymax, std::string title)
      : xmin_(xmin), xmax_(xmax), ymin_(ymin), ymax_(ymax) {
    if (xmax_ <= xmin_) {
      xmin_ -= 0.5;
      xmax_ += 0.5;
    }
    if (ymax_ <= ymin_) {
      ymin_ -= 0.5;
      ymax_ += 0.5;
    }
    os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\">" << title
        << "</text>\n"
        << "<rect x=\"" << kM << "\" y=\"" << kM << "\" width=\"" << kW - 2 * kM << "\" height=\"" << kH - 2 * kM
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    label(kM, kH - kM + 15, fmt2(xmin_), "start");
    label(kW - kM, kH - kM + 15, fmt2(xmax_), "end");
    label(kM - 5, kH - kM, fmt2(ymin_), "end");
    label(kM - 5, kM + 10, fmt2(ymax_), "end");
  }

  double px(double x) const { return kM + (x - xmin_) / (xmax_ - xmin_) * (kW - 2 * kM); }
  double py(double y) const { return kH - kM - (y - ymin_) / (ymax_ - ymin_) * (kH - 2 * kM); }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color) {
    os_ << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) os_ << (i ? " " : "") << fmt2(px(pts[i].first)) << ',' << fmt2(py(pts[i].second));
    os_ << "\"/>\n";
  }

  void dot_marker(double x, double y, const std::string& color) {
    os_ << "<circle class=\"marker\" cx=\"" << fmt2(px(x)) << "\" cy=\"" << fmt2(py(y)) << "\" r=\"3\" fill=\"" << color
        << "\"/>\n";
  }

  void cross_marker(double x, double y) {
    const double cx = px(x);
    const double cy = py(y);
    os_ << "<path class=\"marker unknown\" d=\"M" << fmt2(cx - 4) << ',' << fmt2(cy - 4) << " L" << fmt2(cx + 4) << ','
        << fmt2(cy + 4) << " M" << fmt2(cx - 4) << ',' << fmt2(cy + 4) << " L" << fmt2(cx + 4) << ',' << fmt2(cy - 4)
        << "\" stroke=\"black\"/>\n";
  }

  void legend(int row, const std::string& text, const std::string& color) {
    const double y = kM + 15 + 15 * row;
    os_ << "<line x1=\"" << kW - kM - 140 << "\" y1=\"" << fmt2(y - 4) << "\" x2=\"" << kW - kM - 120 << "\" y2=\""
        << fmt2(y - 4) << "\" stroke=\"" << color << "\"/>\n";
    label(kW - kM - 115, y, text, "start");
  }

  std::string finish() {
    os_ << "</svg>\n";
    return os_.str();
  }

 private:
  static constexpr int kW = 640;
  static constexpr int kH = 480;
  static constexpr int kM = 50;

  void label(double x, double y, const std::string& text, const char* anchor) {
    os_ << "<text x=\"" << fmt2(x) << "\" y=\"" << fmt2(y) << "\" font-size=\"10\" font-family=\"sans-serif\" text-anchor=\""
        << anchor << "\">" << text << "</text>\n";
  }

  double xmin_, xmax_, ymin_, ymax_;
  std::ostringstream os_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Plot kinds

// w(p) on an evenly spaced grid of `steps` + 1 points for every weighting
// function of p alone; the polynomial family is drawn once per alpha.
inline PlotOutput weighting_curves(const std::vector<double>& alphas, int steps = 200) {
  if (alphas.empty() || steps < 1) throw std::invalid_argument("weighting_curves: empty input");
  struct Curve {
    std::string name;
    double alpha;
    UPLConfig cfg;
  };
  std::vector<Curve> curves;
  for (auto v : {WeightingVariant::kIdentity, WeightingVariant::kEntropyOfGt}) {
    UPLConfig c;
    c.variant = v;
    curves.push_back({std::string(to_string(v)), 0.0, c});
  }
  for (double a : alphas) {
    UPLConfig c;
    c.variant = WeightingVariant::kPolynomial;
    c.alpha = a;
    curves.push_back({"polynomial", a, c});
  }

  std::ostringstream csv;
  csv << "curve,alpha,p,w\n";
  detail::SvgCanvas svg(0.0, 1.0, 0.0, 1.0, "w(p)");
  int row = 0;
  for (const auto& c : curves) {
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i <= steps; ++i) {
      const double p = static_cast<double>(i) / steps;
      const double w = up_weight(p, c.cfg);
      pts.emplace_back(p, w);
      csv << c.name << ',' << format_double(c.alpha) << ',' << format_double(p) << ',' << format_double(w) << '\n';
    }
    const std::string color = detail::kPalette[row % 10];
    svg.polyline(pts, color);
    svg.legend(row, c.name == "polynomial" ? "polynomial a=" + format_double(c.alpha) : c.name, color);
    ++row;
  }
  return {svg.finish(), csv.str()};
}

struct LabeledEmbedding {
  Vector values;
  int label = 0;  // class id for knowns
  bool unknown = false;
};

// Rows of "label,v1,...,vd" where label is a class id or the word unknown.
inline std::vector<LabeledEmbedding> parse_latent_csv(std::string_view text) {
  std::vector<LabeledEmbedding> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::istringstream row(line);
    std::string cell;
    LabeledEmbedding e;
    bool first = true;
    while (std::getline(row, cell, ',')) {
      try {
        if (first) {
          if (cell == "unknown") {
            e.unknown = true;
            e.label = -1;
          } else {
            std::size_t used = 0;
            e.label = std::stoi(cell, &used);
            if (used != cell.size()) throw std::invalid_argument(cell);
          }
          first = false;
        } else {
          std::size_t used = 0;
          e.values.push_back(std::stod(cell, &used));
          if (used != cell.size()) throw std::invalid_argument(cell);
        }
      } catch (const std::exception&) {
        throw std::invalid_argument("latent csv line " + std::to_string(lineno) + ": bad value '" + cell + "'");
      }
    }
    if (e.values.empty()) throw std::invalid_argument("latent csv line " + std::to_string(lineno) + ": no values");
    out.push_back(std::move(e));
  }
  return out;
}

inline std::string latent_to_csv(const std::vector<LabeledEmbedding>& points) {
  std::ostringstream os;
  for (const auto& p : points) {
    if (p.unknown) {
      os << "unknown";
    } else {
      os << p.label;
    }
    for (double v : p.values) os << ',' << format_double(v);
    os << '\n';
  }
  return os.str();
}

// PCA scatter: knowns as dots colored by class, unknowns as crosses.
inline PlotOutput latent_scatter(const std::vector<LabeledEmbedding>& points) {
  if (points.empty()) throw std::invalid_argument("latent_scatter: empty input");
  std::vector<Vector> xs;
  for (const auto& p : points) xs.push_back(p.values);
  const auto proj = pca_2d(xs);
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& [x, y] : proj.points) {
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  detail::SvgCanvas svg(xmin, xmax, ymin, ymax, "latent PCA");
  std::ostringstream csv;
  csv << "label,pc1,pc2\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto [x, y] = proj.points[i];
    if (points[i].unknown) {
      svg.cross_marker(x, y);
      csv << "unknown";
    } else {
      const auto k = static_cast<std::size_t>(std::abs(points[i].label)) % 10;
      svg.dot_marker(x, y, detail::kPalette[k]);
      csv << points[i].label;
    }
    csv << ',' << format_double(x) << ',' << format_double(y) << '\n';
  }
  return {svg.finish(), csv.str()};
}

// Raw PR points with the monotone envelope used by all-point AP. The
// envelope column integrated over recall steps gives the AP.
inline PlotOutput pr_curve(const ApResult& ap) {
  if (ap.curve.empty()) throw std::invalid_argument("pr_curve: no PR points");
  std::vector<double> envelope(ap.curve.size());
  double best = 0.0;
  for (std::size_t i = ap.curve.size(); i-- > 0;) {
    best = std::max(best, ap.curve[i].precision);
    envelope[i] = best;
  }
  std::ostringstream csv;
  csv << "recall,precision,envelope\n";
  std::vector<std::pair<double, double>> raw;
  std::vector<std::pair<double, double>> env{{0.0, envelope.front()}};
  for (std::size_t i = 0; i < ap.curve.size(); ++i) {
    csv << format_double(ap.curve[i].recall) << ',' << format_double(ap.curve[i].precision) << ','
        << format_double(envelope[i]) << '\n';
    raw.emplace_back(ap.curve[i].recall, ap.curve[i].precision);
    env.emplace_back(i == 0 ? 0.0 : ap.curve[i - 1].recall, envelope[i]);
    env.emplace_back(ap.curve[i].recall, envelope[i]);
  }
  detail::SvgCanvas svg(0.0, 1.0, 0.0, 1.0, "precision-recall, AP " + format_double(100.0 * ap.ap));
  svg.polyline(raw, detail::kPalette[0]);
  svg.polyline(env, detail::kPalette[3]);
  svg.legend(0, "raw", detail::kPalette[0]);
  svg.legend(1, "envelope", detail::kPalette[3]);
  return {svg.finish(), csv.str()};
}

}  // namespace opendet
