#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fff/checkpoint.hpp"
#include "fff/errors.hpp"
#include "fff/trainer.hpp"
#include "fff/verify.hpp"

namespace fff {

// Shortest exact decimal form: %.17g round-trips IEEE doubles bit-exactly.
inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// NaN cells are written empty: a skipped evaluation is "no value", not "nan".
inline std::string csv_cell(double v) { return std::isnan(v) ? "" : fmt17(v); }

inline constexpr const char* metrics_csv_header =
    "step,nll_surrogate,nll_exact,recon,grad_theta,grad_phi,lr,skipped";

inline void write_metrics_csv(const std::filesystem::path& path,
                              const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write metrics file '" + path.string() + "'");
  out << metrics_csv_header << "\n";
  for (const auto& r : rows) {
    out << r.step << ',' << csv_cell(r.nll_surrogate) << ',' << csv_cell(r.nll_exact) << ','
        << csv_cell(r.recon) << ',' << csv_cell(r.grad_theta) << ',' << csv_cell(r.grad_phi)
        << ',' << csv_cell(r.lr) << ',' << r.skipped << "\n";
  }
  if (!out.flush()) throw IoError("failed writing metrics file '" + path.string() + "'");
}

inline void write_loglik_csv(const std::filesystem::path& path, const std::vector<double>& ll) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write likelihood file '" + path.string() + "'");
  out << "index,log_likelihood\n";
  for (std::size_t i = 0; i < ll.size(); ++i) out << i << ',' << csv_cell(ll[i]) << "\n";
  if (!out.flush()) throw IoError("failed writing likelihood file '" + path.string() + "'");
}

inline void write_weighted_csv(const std::filesystem::path& path,
                               const std::vector<WeightedSample>& ws) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write weighted-sample file '" + path.string() + "'");
  if (ws.empty()) throw ConfigError("write_weighted_csv: no samples");
  for (std::size_t d = 0; d < ws.front().x.size(); ++d) out << 'x' << d << ',';
  out << "log_weight\n";
  for (const auto& w : ws) {
    for (double v : w.x) out << fmt17(v) << ',';
    out << fmt17(w.log_weight) << "\n";
  }
  if (!out.flush()) throw IoError("failed writing weighted-sample file '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Loss-landscape grid of the 1-D linear model.

struct LandscapeGrid {
  LinearModel1D model;
  LandscapeVariant variant = LandscapeVariant::g_decoder;
  double a_min = -1.2, a_max = 1.2;
  double b_min = -2.2, b_max = 2.2;
  int resolution = 21;  // points per axis
};

struct LandscapePoint {
  double a, b, da, db;
};

inline std::vector<LandscapePoint> landscape_grid_points(const LandscapeGrid& g) {
  if (g.resolution < 2) throw ConfigError("landscape grid needs at least 2 points per axis");
  std::vector<LandscapePoint> pts;
  pts.reserve(static_cast<std::size_t>(g.resolution) * g.resolution);
  for (int i = 0; i < g.resolution; ++i) {
    const double a = g.a_min + (g.a_max - g.a_min) * i / (g.resolution - 1);
    for (int j = 0; j < g.resolution; ++j) {
      const double b = g.b_min + (g.b_max - g.b_min) * j / (g.resolution - 1);
      GradField2D f{std::numeric_limits<double>::quiet_NaN(),
                    std::numeric_limits<double>::quiet_NaN()};
      try {
        f = landscape_gradient(g.model, g.variant, a, b);
      } catch (const DivergentGradient&) {
        // the f_inverse field blows up at a = 0: leave the cell empty
      }
      pts.push_back({a, b, f.da, f.db});
    }
  }
  return pts;
}

inline void write_landscape_csv(const std::filesystem::path& path,
                                const std::vector<LandscapePoint>& pts) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write landscape file '" + path.string() + "'");
  out << "a,b,da,db,magnitude\n";
  for (const auto& p : pts) {
    const double mag = std::hypot(p.da, p.db);
    out << fmt17(p.a) << ',' << fmt17(p.b) << ',' << csv_cell(p.da) << ',' << csv_cell(p.db)
        << ',' << csv_cell(mag) << "\n";
  }
  if (!out.flush()) throw IoError("failed writing landscape file '" + path.string() + "'");
}

// Minimal self-contained quiver plot: one arrow per grid point, length scaled
// to the cell size, descent direction (negative gradient).
inline void write_landscape_svg(const std::filesystem::path& path, const LandscapeGrid& g,
                                const std::vector<LandscapePoint>& pts) {
  const double w = 640.0, h = 640.0, margin = 40.0;
  auto sx = [&](double a) { return margin + (a - g.a_min) / (g.a_max - g.a_min) * (w - 2 * margin); };
  auto sy = [&](double b) { return h - margin - (b - g.b_min) / (g.b_max - g.b_min) * (h - 2 * margin); };
  double max_mag = 0.0;
  for (const auto& p : pts)
    if (std::isfinite(p.da)) max_mag = std::max(max_mag, std::hypot(p.da, p.db));
  const double cell = (w - 2 * margin) / std::max(1, g.resolution - 1);
  const double arrow = 0.45 * cell;

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write svg file '" + path.string() + "'");
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h
      << "' viewBox='0 0 " << w << ' ' << h << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  out << "<text x='" << w / 2 << "' y='" << margin / 2
      << "' text-anchor='middle' font-family='monospace' font-size='14'>descent field, "
      << (g.variant == LandscapeVariant::f_inverse ? "exact-inverse decoder" : "learned decoder")
      << "</text>\n";
  for (const auto& p : pts) {
    if (!std::isfinite(p.da) || !std::isfinite(p.db)) continue;
    const double mag = std::hypot(p.da, p.db);
    if (mag == 0.0 || max_mag == 0.0) continue;
    // Unit descent direction, length by relative magnitude (sqrt for contrast).
    const double len = arrow * std::sqrt(mag / max_mag);
    const double ux = -p.da / mag, ub = -p.db / mag;
    const double x0 = sx(p.a), y0 = sy(p.b);
    const double x1 = x0 + ux * len, y1 = y0 - ub * len;
    out << "<line x1='" << x0 << "' y1='" << y0 << "' x2='" << x1 << "' y2='" << y1
        << "' stroke='#335' stroke-width='1'/>\n";
    out << "<circle cx='" << x1 << "' cy='" << y1 << "' r='1.4' fill='#335'/>\n";
  }
  for (const auto& [a, b] : landscape_critical_points(g.model, g.variant)) {
    out << "<circle cx='" << sx(a) << "' cy='" << sy(b)
        << "' r='5' fill='none' stroke='#b22' stroke-width='2'/>\n";
  }
  out << "<text x='" << w / 2 << "' y='" << h - 8
      << "' text-anchor='middle' font-family='monospace' font-size='12'>encoder weight a</text>\n";
  out << "<text x='14' y='" << h / 2
      << "' text-anchor='middle' font-family='monospace' font-size='12' transform='rotate(-90 14 "
      << h / 2 << ")'>decoder weight b</text>\n";
  out << "</svg>\n";
  if (!out.flush()) throw IoError("failed writing svg file '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Run manifest: everything needed to repeat a command bit for bit.

inline void write_run_manifest(const std::filesystem::path& path, const std::string& command,
                               const std::vector<std::pair<std::string, std::string>>& options,
                               const std::vector<std::string>& outputs) {
  nlohmann::json j;
  j["format"] = "fff-run";
  j["version"] = 1;
  j["command"] = command;
  nlohmann::json opts = nlohmann::json::object();
  for (const auto& [k, v] : options) opts[k] = v;
  j["options"] = opts;
  j["outputs"] = outputs;
  write_json_atomic(path, j);
}

struct RunManifest {
  std::string command;
  std::vector<std::pair<std::string, std::string>> options;
};

inline RunManifest read_run_manifest(const std::filesystem::path& path) {
  const nlohmann::json j = read_json(path);
  if (!j.contains("format") || j["format"] != "fff-run")
    throw IoError("'" + path.string() + "' is not a run manifest");
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  for (const auto& [k, v] : j.at("options").items())
    m.options.emplace_back(k, v.get<std::string>());
  return m;
}

}  // namespace fff
