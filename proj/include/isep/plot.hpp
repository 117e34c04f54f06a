#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "isep/bandit.hpp"
#include "isep/matrix.hpp"
#include "isep/trainer.hpp"

namespace isep {

// All rendering below is plain string assembly with fixed-precision numbers,
// so a given input always produces byte-identical SVG.

namespace svgdetail {

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline std::string num(double v) { return fmt("%.2f", v); }
inline std::string label(double v) { return fmt("%.4g", v); }

struct Frame {
  double width = 640.0, height = 480.0;
  double left = 56.0, right = 16.0, top = 32.0, bottom = 44.0;
  double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;

  double plot_w() const { return width - left - right; }
  double plot_h() const { return height - top - bottom; }
  double px(double x) const { return left + (x - x_min) / (x_max - x_min) * plot_w(); }
  double py(double y) const { return top + (y_max - y) / (y_max - y_min) * plot_h(); }
};

inline void open_svg(std::string& s, const Frame& f, const std::string& title) {
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(f.width) + "\" height=\"" +
       num(f.height) + "\" viewBox=\"0 0 " + num(f.width) + " " + num(f.height) + "\">\n";
  s += "<rect width=\"" + num(f.width) + "\" height=\"" + num(f.height) +
       "\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(f.width / 2) + "\" y=\"20\" text-anchor=\"middle\" "
       "font-family=\"sans-serif\" font-size=\"14\">" + title + "</text>\n";
}

inline void axes(std::string& s, const Frame& f, const std::string& x_name,
                 const std::string& y_name) {
  s += "<rect x=\"" + num(f.left) + "\" y=\"" + num(f.top) + "\" width=\"" + num(f.plot_w()) +
       "\" height=\"" + num(f.plot_h()) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double tx = f.x_min + (f.x_max - f.x_min) * k / 4.0;
    const double ty = f.y_min + (f.y_max - f.y_min) * k / 4.0;
    s += "<text x=\"" + num(f.px(tx)) + "\" y=\"" + num(f.top + f.plot_h() + 16.0) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" + label(tx) +
         "</text>\n";
    s += "<text x=\"" + num(f.left - 6.0) + "\" y=\"" + num(f.py(ty) + 3.0) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + label(ty) +
         "</text>\n";
  }
  s += "<text x=\"" + num(f.left + f.plot_w() / 2) + "\" y=\"" + num(f.height - 8.0) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + x_name +
       "</text>\n";
  s += "<text x=\"14\" y=\"" + num(f.top + f.plot_h() / 2) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" "
       "transform=\"rotate(-90 14 " + num(f.top + f.plot_h() / 2) + ")\">" + y_name +
       "</text>\n";
}

inline constexpr std::array<const char*, 10> kFieldPalette = {
    "#440154", "#482878", "#3e4989", "#31688e", "#26828e",
    "#1f9e89", "#35b779", "#6ece58", "#b5de2b", "#fde725"};

}  // namespace svgdetail

/// Reward field over the action box as a 200x200 quantile-binned heat map
/// (10 bins, run-length merged per row) with an action scatter on top.
inline std::string render_field_scatter_svg(EnvId env, const Matrix2D& points,
                                            const std::string& title) {
  using namespace svgdetail;
  constexpr int kGrid = 200;
  constexpr int kBins = 10;
  const double lo = -kActionBox, hi = kActionBox;
  const double cell = (hi - lo) / kGrid;

  std::vector<double> values(static_cast<std::size_t>(kGrid) * kGrid);
  for (int r = 0; r < kGrid; ++r)
    for (int c = 0; c < kGrid; ++c) {
      const double x = lo + (c + 0.5) * cell;
      const double y = lo + (r + 0.5) * cell;
      values[static_cast<std::size_t>(r) * kGrid + c] = bandit_reward(env, x, y);
    }
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  std::array<double, kBins - 1> edges{};
  for (int b = 1; b < kBins; ++b)
    edges[b - 1] = sorted[sorted.size() * static_cast<std::size_t>(b) / kBins];
  auto bin_of = [&](double v) {
    int b = 0;
    while (b < kBins - 1 && v >= edges[b]) ++b;
    return b;
  };

  Frame f;
  f.x_min = lo;
  f.x_max = hi;
  f.y_min = lo;
  f.y_max = hi;
  std::string s;
  open_svg(s, f, title);
  const double cw = f.plot_w() / kGrid, ch = f.plot_h() / kGrid;
  for (int r = 0; r < kGrid; ++r) {
    int c = 0;
    while (c < kGrid) {
      const int b = bin_of(values[static_cast<std::size_t>(r) * kGrid + c]);
      int run = 1;
      while (c + run < kGrid &&
             bin_of(values[static_cast<std::size_t>(r) * kGrid + c + run]) == b)
        ++run;
      // grid row r covers y in [lo + r*cell, lo + (r+1)*cell); flip for SVG y-down
      const double sx = f.left + c * cw;
      const double sy = f.top + f.plot_h() - (r + 1) * ch;
      s += "<rect x=\"" + num(sx) + "\" y=\"" + num(sy) + "\" width=\"" + num(run * cw) +
           "\" height=\"" + num(ch) + "\" fill=\"" + kFieldPalette[static_cast<std::size_t>(b)] +
           "\"/>\n";
      c += run;
    }
  }
  for (std::size_t i = 0; i < points.rows; ++i) {
    const double x = std::clamp(points(i, 0), lo, hi);
    const double y = std::clamp(points(i, 1), lo, hi);
    s += "<circle cx=\"" + num(f.px(x)) + "\" cy=\"" + num(f.py(y)) +
         "\" r=\"2\" fill=\"#ff7f0e\" fill-opacity=\"0.8\"/>\n";
  }
  axes(s, f, "action x", "action y");
  s += "</svg>\n";
  return s;
}

/// One curve per metric series; band is mean +- one standard error across
/// runs, which must share their evaluation steps.
inline std::string render_curves_svg(const std::vector<std::vector<EvalRecord>>& runs,
                                     const std::string& title, const std::string& y_name) {
  using namespace svgdetail;
  if (runs.empty() || runs.front().empty())
    throw std::invalid_argument("learning-curve plot needs at least one non-empty run");
  const std::size_t n_pts = runs.front().size();
  for (const auto& r : runs) {
    if (r.size() != n_pts)
      throw std::invalid_argument("runs disagree on evaluation count");
    for (std::size_t i = 0; i < n_pts; ++i)
      if (r[i].step != runs.front()[i].step)
        throw std::invalid_argument("runs disagree on evaluation steps");
  }
  const double n_runs = static_cast<double>(runs.size());
  std::vector<double> xs(n_pts), mean(n_pts, 0.0), sem(n_pts, 0.0);
  for (std::size_t i = 0; i < n_pts; ++i) {
    xs[i] = static_cast<double>(runs.front()[i].step);
    for (const auto& r : runs) mean[i] += r[i].reward_mean / n_runs;
    if (runs.size() > 1) {
      double var = 0.0;
      for (const auto& r : runs)
        var += (r[i].reward_mean - mean[i]) * (r[i].reward_mean - mean[i]);
      sem[i] = std::sqrt(var / (n_runs - 1.0) / n_runs);
    }
  }

  Frame f;
  f.x_min = xs.front();
  f.x_max = xs.back() > xs.front() ? xs.back() : xs.front() + 1.0;
  double y_lo = mean[0] - sem[0], y_hi = mean[0] + sem[0];
  for (std::size_t i = 0; i < n_pts; ++i) {
    y_lo = std::min(y_lo, mean[i] - sem[i]);
    y_hi = std::max(y_hi, mean[i] + sem[i]);
  }
  if (y_hi - y_lo < 1e-12) {
    y_lo -= 1.0;
    y_hi += 1.0;
  }
  const double pad = 0.05 * (y_hi - y_lo);
  f.y_min = y_lo - pad;
  f.y_max = y_hi + pad;

  std::string s;
  open_svg(s, f, title);
  if (runs.size() > 1) {
    std::string path = "M";
    for (std::size_t i = 0; i < n_pts; ++i)
      path += " " + num(f.px(xs[i])) + " " + num(f.py(mean[i] + sem[i]));
    for (std::size_t i = n_pts; i-- > 0;)
      path += " L " + num(f.px(xs[i])) + " " + num(f.py(mean[i] - sem[i]));
    s += "<path d=\"" + path + " Z\" fill=\"#1f77b4\" fill-opacity=\"0.25\" stroke=\"none\"/>\n";
  }
  std::string line;
  for (std::size_t i = 0; i < n_pts; ++i)
    line += (i == 0 ? "" : " ") + num(f.px(xs[i])) + "," + num(f.py(mean[i]));
  s += "<polyline points=\"" + line +
       "\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/>\n";
  axes(s, f, "step", y_name);
  s += "</svg>\n";
  return s;
}

enum class SweepMetric { Reward, Danger };

inline std::string render_sweep_svg(const SweepResult& sweep, SweepMetric metric,
                                    const std::string& title) {
  using namespace svgdetail;
  if (sweep.aggregates.empty()) throw std::invalid_argument("empty sweep");
  const std::size_t n = sweep.aggregates.size();
  std::vector<double> vals(n), sems(n);
  for (std::size_t i = 0; i < n; ++i) {
    const SweepAggregate& a = sweep.aggregates[i];
    vals[i] = metric == SweepMetric::Reward ? a.reward_mean : a.danger_mean;
    sems[i] = metric == SweepMetric::Reward ? a.reward_sem : a.danger_sem;
  }
  double y_lo = std::min(0.0, vals[0] - sems[0]), y_hi = vals[0] + sems[0];
  for (std::size_t i = 0; i < n; ++i) {
    y_lo = std::min(y_lo, vals[i] - sems[i]);
    y_hi = std::max(y_hi, vals[i] + sems[i]);
  }
  if (y_hi - y_lo < 1e-12) y_hi = y_lo + 1.0;
  Frame f;
  f.x_min = 0.0;
  f.x_max = static_cast<double>(n);
  const double pad = 0.08 * (y_hi - y_lo);
  f.y_min = y_lo - pad;
  f.y_max = y_hi + pad;

  std::string s;
  open_svg(s, f, title);
  const double base_y = f.py(std::max(0.0, f.y_min));
  for (std::size_t i = 0; i < n; ++i) {
    const double cx = static_cast<double>(i) + 0.5;
    const double bw = 0.6;
    const double x0 = f.px(cx - bw / 2.0), x1 = f.px(cx + bw / 2.0);
    const double ty = f.py(vals[i]);
    const double top = std::min(ty, base_y), h = std::fabs(base_y - ty);
    s += "<rect x=\"" + num(x0) + "\" y=\"" + num(top) + "\" width=\"" + num(x1 - x0) +
         "\" height=\"" + num(h) + "\" fill=\"#1f77b4\"/>\n";
    if (sems[i] > 0.0) {
      const double ex = f.px(cx);
      s += "<line x1=\"" + num(ex) + "\" y1=\"" + num(f.py(vals[i] - sems[i])) + "\" x2=\"" +
           num(ex) + "\" y2=\"" + num(f.py(vals[i] + sems[i])) +
           "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    }
    s += "<text x=\"" + num(f.px(cx)) + "\" y=\"" + num(f.top + f.plot_h() + 16.0) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">p=" +
         label(sweep.aggregates[i].p) + "</text>\n";
  }
  s += "<rect x=\"" + num(f.left) + "\" y=\"" + num(f.top) + "\" width=\"" + num(f.plot_w()) +
       "\" height=\"" + num(f.plot_h()) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double ty = f.y_min + (f.y_max - f.y_min) * k / 4.0;
    s += "<text x=\"" + num(f.left - 6.0) + "\" y=\"" + num(f.py(ty) + 3.0) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + label(ty) +
         "</text>\n";
  }
  s += "<text x=\"" + num(f.left + f.plot_w() / 2) + "\" y=\"" + num(f.height - 8.0) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">expansion "
       "probability</text>\n";
  s += "</svg>\n";
  return s;
}

// ---------------------------------------------------------------------------
// CSV ingestion for the plot/report commands.
// ---------------------------------------------------------------------------

namespace csvdetail {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_num(const std::string& s, const std::string& file, std::size_t line_no) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    throw std::runtime_error(file + ": line " + std::to_string(line_no) + ": bad number '" +
                             s + "'");
  return v;
}

}  // namespace csvdetail

inline MetricsTable load_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(f, line)) throw std::runtime_error(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader)
    throw std::runtime_error(path + ": line 1: unexpected header '" + line + "'");
  MetricsTable table;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = csvdetail::split_fields(line);
    if (fields.size() != 10)
      throw std::runtime_error(path + ": line " + std::to_string(line_no) + ": expected 10 "
                               "fields, got " + std::to_string(fields.size()));
    TrainStepRecord rec;
    rec.step = static_cast<std::size_t>(csvdetail::parse_num(fields[0], path, line_no));
    rec.v_loss = csvdetail::parse_num(fields[1], path, line_no);
    rec.q_loss = csvdetail::parse_num(fields[2], path, line_no);
    rec.pi_loss = csvdetail::parse_num(fields[3], path, line_no);
    rec.gate_value = csvdetail::parse_num(fields[4], path, line_no);
    table.steps.push_back(rec);
    const bool has_eval = !fields[5].empty();
    for (std::size_t i = 6; i < 10; ++i)
      if (fields[i].empty() == has_eval)
        throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                 ": partially filled evaluation columns");
    if (has_eval) {
      EvalRecord e;
      e.step = rec.step;
      e.reward_mean = csvdetail::parse_num(fields[5], path, line_no);
      e.danger_rate = csvdetail::parse_num(fields[6], path, line_no);
      e.opt_island_rate = csvdetail::parse_num(fields[7], path, line_no);
      e.subopt_island_rate = csvdetail::parse_num(fields[8], path, line_no);
      e.dist_to_opt = csvdetail::parse_num(fields[9], path, line_no);
      table.evals.push_back(e);
    }
  }
  return table;
}

/// Action scatter files: header "x,y", one %.17g pair per row.
inline void save_points_csv(const Matrix2D& points, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "x,y\n";
  char buf[96];
  for (std::size_t i = 0; i < points.rows; ++i) {
    const int n = std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", points(i, 0), points(i, 1));
    f.write(buf, n);
  }
}

inline Matrix2D load_points_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "x,y")
    throw std::runtime_error(path + ": line 1: expected header 'x,y', got '" + line + "'");
  std::vector<double> xs, ys;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = csvdetail::split_fields(line);
    if (fields.size() != 2)
      throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                               ": expected 2 fields, got " + std::to_string(fields.size()));
    xs.push_back(csvdetail::parse_num(fields[0], path, line_no));
    ys.push_back(csvdetail::parse_num(fields[1], path, line_no));
  }
  Matrix2D m(xs.size(), 2);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    m(i, 0) = xs[i];
    m(i, 1) = ys[i];
  }
  return m;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline constexpr const char* kSweepRunsHeader =
    "p,seed,diverged,diverged_step,reward_mean,danger_rate,opt_island_rate,"
    "subopt_island_rate,dist_to_opt";
inline constexpr const char* kSweepSummaryHeader =
    "p,n_runs,n_diverged,reward_mean,reward_sem,danger_mean,danger_sem,opt_mean,sub_mean,"
    "dist_mean";

inline void save_sweep_csvs(const SweepResult& sweep, const std::string& runs_path,
                            const std::string& summary_path) {
  char buf[360];
  {
    std::ofstream f(runs_path);
    if (!f) throw std::runtime_error("cannot open " + runs_path + " for writing");
    f << kSweepRunsHeader << '\n';
    for (const SweepRun& r : sweep.runs) {
      const int n = std::snprintf(
          buf, sizeof buf, "%.17g,%llu,%d,%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.p,
          static_cast<unsigned long long>(r.seed), r.diverged ? 1 : 0, r.diverged_step,
          r.final_eval.reward_mean, r.final_eval.danger_rate, r.final_eval.opt_island_rate,
          r.final_eval.subopt_island_rate, r.final_eval.dist_to_opt);
      f.write(buf, n);
    }
  }
  {
    std::ofstream f(summary_path);
    if (!f) throw std::runtime_error("cannot open " + summary_path + " for writing");
    f << kSweepSummaryHeader << '\n';
    for (const SweepAggregate& a : sweep.aggregates) {
      const int n = std::snprintf(
          buf, sizeof buf, "%.17g,%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", a.p,
          a.n_runs, a.n_diverged, a.reward_mean, a.reward_sem, a.danger_mean, a.danger_sem,
          a.opt_mean, a.sub_mean, a.dist_mean);
      f.write(buf, n);
    }
  }
}

/// Reads back a sweep summary CSV for plotting; runs are left empty.
inline SweepResult load_sweep_summary_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kSweepSummaryHeader)
    throw std::runtime_error(path + ": line 1: unexpected header '" + line + "'");
  SweepResult out;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = csvdetail::split_fields(line);
    if (fields.size() != 10)
      throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                               ": expected 10 fields, got " + std::to_string(fields.size()));
    SweepAggregate a;
    a.p = csvdetail::parse_num(fields[0], path, line_no);
    a.n_runs = static_cast<std::size_t>(csvdetail::parse_num(fields[1], path, line_no));
    a.n_diverged = static_cast<std::size_t>(csvdetail::parse_num(fields[2], path, line_no));
    a.reward_mean = csvdetail::parse_num(fields[3], path, line_no);
    a.reward_sem = csvdetail::parse_num(fields[4], path, line_no);
    a.danger_mean = csvdetail::parse_num(fields[5], path, line_no);
    a.danger_sem = csvdetail::parse_num(fields[6], path, line_no);
    a.opt_mean = csvdetail::parse_num(fields[7], path, line_no);
    a.sub_mean = csvdetail::parse_num(fields[8], path, line_no);
    a.dist_mean = csvdetail::parse_num(fields[9], path, line_no);
    out.aggregates.push_back(a);
  }
  return out;
}

}  // namespace isep
