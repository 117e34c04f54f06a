#include "isep/plot.hpp"

#include <gtest/gtest.h>

#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "isep/trainer.hpp"

using namespace isep;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  EXPECT_TRUE(f.good()) << path;
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::size_t count_occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string::npos;
       pos = hay.find(needle, pos + needle.size()))
    ++n;
  return n;
}

EvalRecord eval_at(std::size_t step, double reward) {
  EvalRecord e;
  e.step = step;
  e.reward_mean = reward;
  e.danger_rate = 0.01;
  e.opt_island_rate = 0.5;
  e.subopt_island_rate = 0.25;
  e.dist_to_opt = 1.5;
  return e;
}

}  // namespace

TEST(FieldSvg, ByteIdenticalAndStructured) {
  Matrix2D pts(3, 2);
  pts(0, 0) = 0.0;
  pts(0, 1) = 0.0;
  pts(1, 0) = 4.0;
  pts(1, 1) = 4.0;
  pts(2, 0) = 30.0;  // clamped into the box for display
  pts(2, 1) = -30.0;
  const std::string a = render_field_scatter_svg(EnvId::DangerBandit, pts, "field");
  const std::string b = render_field_scatter_svg(EnvId::DangerBandit, pts, "field");
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.rfind("<svg", 0), 0u);
  EXPECT_NE(a.find("</svg>"), std::string::npos);
  EXPECT_EQ(count_occurrences(a, "<circle"), 3u);
  EXPECT_NE(a.find("#440154"), std::string::npos);  // low-value bin
  EXPECT_NE(a.find("#fde725"), std::string::npos);  // high-value bin
  EXPECT_NE(a.find(">field<"), std::string::npos);

  const std::string multi = render_field_scatter_svg(EnvId::MultimodalBandit, pts, "field");
  EXPECT_NE(multi, a);
}

TEST(CurvesSvg, BandsAndValidation) {
  std::vector<EvalRecord> run1 = {eval_at(100, 1.0), eval_at(200, 2.0), eval_at(300, 2.5)};
  std::vector<EvalRecord> run2 = {eval_at(100, 1.5), eval_at(200, 1.5), eval_at(300, 3.0)};
  const std::string single = render_curves_svg({run1}, "curve", "reward");
  EXPECT_NE(single.find("<polyline"), std::string::npos);
  EXPECT_EQ(single.find("fill-opacity=\"0.25\""), std::string::npos);  // no SEM band

  const std::string dual = render_curves_svg({run1, run2}, "curve", "reward");
  EXPECT_NE(dual.find("fill-opacity=\"0.25\""), std::string::npos);
  EXPECT_EQ(dual, render_curves_svg({run1, run2}, "curve", "reward"));

  std::vector<EvalRecord> misaligned = {eval_at(100, 1.0), eval_at(250, 2.0),
                                        eval_at(300, 2.5)};
  EXPECT_THROW(render_curves_svg({run1, misaligned}, "t", "y"), std::invalid_argument);
  std::vector<EvalRecord> shorter = {eval_at(100, 1.0)};
  EXPECT_THROW(render_curves_svg({run1, shorter}, "t", "y"), std::invalid_argument);
  EXPECT_THROW(render_curves_svg({}, "t", "y"), std::invalid_argument);
}

TEST(SweepSvg, BarsCarryTheGridLabels) {
  SweepResult sweep;
  for (double p : {0.0, 0.3, 0.5, 1.0}) {
    SweepAggregate a;
    a.p = p;
    a.n_runs = 5;
    a.reward_mean = 50.0 + 40.0 * p;
    a.reward_sem = 2.0;
    a.danger_mean = p * 0.2;
    a.danger_sem = 0.01;
    sweep.aggregates.push_back(a);
  }
  const std::string reward = render_sweep_svg(sweep, SweepMetric::Reward, "sweep");
  EXPECT_NE(reward.find("p=0.3"), std::string::npos);
  EXPECT_NE(reward.find("p=1"), std::string::npos);
  EXPECT_EQ(count_occurrences(reward, "<rect"), 4u + 2u);  // bars + background + frame
  const std::string danger = render_sweep_svg(sweep, SweepMetric::Danger, "sweep");
  EXPECT_NE(danger, reward);
  EXPECT_THROW(render_sweep_svg(SweepResult{}, SweepMetric::Reward, "x"),
               std::invalid_argument);
}

TEST(MetricsCsv, WriterAndLoaderRoundTripExactly) {
  const std::string path = ::testing::TempDir() + "metrics_roundtrip.csv";
  TrainStepRecord s1;
  s1.step = 1;
  s1.v_loss = 0.1234567890123456789;
  s1.q_loss = -2.5e-7;
  s1.pi_loss = 3.0;
  s1.gate_value = 1.0;
  TrainStepRecord s2 = s1;
  s2.step = 2;
  s2.v_loss = 1e300;
  const EvalRecord e = eval_at(2, -17.25);
  {
    MetricsWriter w(path);
    w.row(s1, nullptr);
    w.row(s2, &e);
  }
  const MetricsTable t = load_metrics_csv(path);
  ASSERT_EQ(t.steps.size(), 2u);
  ASSERT_EQ(t.evals.size(), 1u);
  EXPECT_EQ(t.steps[0].step, 1u);
  EXPECT_EQ(t.steps[0].v_loss, s1.v_loss);
  EXPECT_EQ(t.steps[0].q_loss, s1.q_loss);
  EXPECT_EQ(t.steps[1].v_loss, 1e300);
  EXPECT_EQ(t.evals[0].step, 2u);
  EXPECT_EQ(t.evals[0].reward_mean, -17.25);
  EXPECT_EQ(t.evals[0].dist_to_opt, 1.5);
  EXPECT_EQ(t.final_eval().reward_mean, -17.25);

  // A second write of the same records is byte-identical.
  const std::string path2 = ::testing::TempDir() + "metrics_roundtrip2.csv";
  {
    MetricsWriter w(path2);
    w.row(s1, nullptr);
    w.row(s2, &e);
  }
  EXPECT_EQ(slurp(path), slurp(path2));
}

TEST(MetricsCsv, MalformedInputsNameTheLine) {
  const std::string dir = ::testing::TempDir();
  const std::string head = std::string(kMetricsHeader) + "\n";

  write_text_file(dir + "bad_header.csv", "step,foo\n1,2\n");
  EXPECT_THROW(load_metrics_csv(dir + "bad_header.csv"), std::runtime_error);

  write_text_file(dir + "short_row.csv", head + "1,0,0,0,0\n");
  try {
    load_metrics_csv(dir + "short_row.csv");
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("expected 10 fields"), std::string::npos);
  }

  write_text_file(dir + "partial_eval.csv", head + "1,0,0,0,0,3.5,,,,\n");
  try {
    load_metrics_csv(dir + "partial_eval.csv");
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("partially filled"), std::string::npos);
  }

  write_text_file(dir + "bad_number.csv", head + "1,0,zap,0,0,,,,,\n");
  try {
    load_metrics_csv(dir + "bad_number.csv");
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("bad number 'zap'"), std::string::npos);
  }

  write_text_file(dir + "empty.csv", "");
  EXPECT_THROW(load_metrics_csv(dir + "empty.csv"), std::runtime_error);
  EXPECT_THROW(load_metrics_csv(dir + "does_not_exist.csv"), std::runtime_error);
}

TEST(PointsCsv, RoundTripAndValidation) {
  const std::string path = ::testing::TempDir() + "points.csv";
  Matrix2D pts(3, 2);
  pts(0, 0) = 0.1;
  pts(0, 1) = -0.2;
  pts(1, 0) = 1.0 / 3.0;
  pts(1, 1) = 2e-17;
  pts(2, 0) = -9.75;
  pts(2, 1) = 10.0;
  save_points_csv(pts, path);
  const Matrix2D back = load_points_csv(path);
  ASSERT_EQ(back.rows, 3u);
  EXPECT_EQ(back.data, pts.data);

  save_points_csv(pts, path + ".again");
  EXPECT_EQ(slurp(path), slurp(path + ".again"));

  write_text_file(::testing::TempDir() + "pts_bad_header.csv", "a,b\n1,2\n");
  EXPECT_THROW(load_points_csv(::testing::TempDir() + "pts_bad_header.csv"),
               std::runtime_error);
  write_text_file(::testing::TempDir() + "pts_bad_row.csv", "x,y\n1,2,3\n");
  try {
    load_points_csv(::testing::TempDir() + "pts_bad_row.csv");
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(SweepCsv, SummaryRoundTripsAndRunsFileIsComplete) {
  SweepResult sweep;
  for (int i = 0; i < 2; ++i) {
    SweepAggregate a;
    a.p = 0.5 * i;
    a.n_runs = 2;
    a.n_diverged = i;
    a.reward_mean = 10.0 * i + 0.125;
    a.reward_sem = 0.5;
    a.danger_mean = 0.01 * i;
    a.danger_sem = 0.001;
    a.opt_mean = 0.7;
    a.sub_mean = 0.2;
    a.dist_mean = 0.4;
    sweep.aggregates.push_back(a);
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
      SweepRun r;
      r.p = a.p;
      r.seed = seed;
      r.diverged = i == 1 && seed == 0;
      r.diverged_step = r.diverged ? 7 : 0;
      r.final_eval = eval_at(100, 10.0 * i);
      sweep.runs.push_back(r);
    }
  }
  const std::string runs_path = ::testing::TempDir() + "sweep_runs.csv";
  const std::string summary_path = ::testing::TempDir() + "sweep_summary.csv";
  save_sweep_csvs(sweep, runs_path, summary_path);

  const SweepResult back = load_sweep_summary_csv(summary_path);
  ASSERT_EQ(back.aggregates.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.aggregates[i].p, sweep.aggregates[i].p);
    EXPECT_EQ(back.aggregates[i].n_runs, sweep.aggregates[i].n_runs);
    EXPECT_EQ(back.aggregates[i].n_diverged, sweep.aggregates[i].n_diverged);
    EXPECT_EQ(back.aggregates[i].reward_mean, sweep.aggregates[i].reward_mean);
    EXPECT_EQ(back.aggregates[i].danger_sem, sweep.aggregates[i].danger_sem);
    EXPECT_EQ(back.aggregates[i].dist_mean, sweep.aggregates[i].dist_mean);
  }

  const std::string runs_text = slurp(runs_path);
  EXPECT_EQ(runs_text.rfind(kSweepRunsHeader, 0), 0u);
  EXPECT_EQ(count_occurrences(runs_text, "\n"), 5u);  // header + 4 runs
  EXPECT_NE(runs_text.find("1,7,"), std::string::npos);  // the diverged run's flag and step
}

TEST(TextFile, WritesBytesVerbatim) {
  const std::string path = ::testing::TempDir() + "verbatim.txt";
  const std::string content = "line one\nline two\n";
  write_text_file(path, content);
  EXPECT_EQ(slurp(path), content);
}
