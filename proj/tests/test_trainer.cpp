#include "isep/trainer.hpp"

#include <gtest/gtest.h>

#include <cstddef>
#include <string>
#include <vector>

#include "isep/dataset.hpp"
#include "isep/plot.hpp"
#include "isep/rng.hpp"

using namespace isep;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.hp.batch_size = 32;
  cfg.hp.beta = 0.1;
  cfg.total_steps = 10;
  cfg.eval_every = 5;
  cfg.eval_rollouts = 50;
  cfg.dataset_n = 200;
  cfg.hidden_critic = 8;
  cfg.hidden_policy = 8;
  cfg.seed = 3;
  return cfg;
}

bool nets_equal(const MlpParams& a, const MlpParams& b) {
  if (a.layer_sizes != b.layer_sizes) return false;
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    if (a.weights[l].data != b.weights[l].data) return false;
    if (a.biases[l] != b.biases[l]) return false;
  }
  return true;
}

bool nets_close(const MlpParams& a, const MlpParams& b, double tol) {
  if (a.layer_sizes != b.layer_sizes) return false;
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    for (std::size_t i = 0; i < a.weights[l].size(); ++i)
      if (std::fabs(a.weights[l].data[i] - b.weights[l].data[i]) > tol) return false;
    for (std::size_t i = 0; i < a.biases[l].size(); ++i)
      if (std::fabs(a.biases[l][i] - b.biases[l][i]) > tol) return false;
  }
  return true;
}

}  // namespace

TEST(PolicyKinds, NamesRoundTrip) {
  for (PolicyKind k : {PolicyKind::Gaussian, PolicyKind::Flow, PolicyKind::GaussianDetInterp,
                       PolicyKind::FlowDetInterp})
    EXPECT_EQ(parse_policy_kind(policy_kind_name(k)), k);
  EXPECT_EQ(parse_policy_kind("det-interp"), PolicyKind::FlowDetInterp);
  EXPECT_THROW(parse_policy_kind("sac"), std::invalid_argument);
  EXPECT_TRUE(is_flow_kind(PolicyKind::FlowDetInterp));
  EXPECT_FALSE(is_flow_kind(PolicyKind::GaussianDetInterp));
  EXPECT_TRUE(is_det_kind(PolicyKind::GaussianDetInterp));
  EXPECT_FALSE(is_det_kind(PolicyKind::Flow));
}

TEST(Trainer, RerunsAreBitwiseIdentical) {
  const TrainConfig cfg = tiny_config();
  const OfflineDataset ds = dataset_for_config(cfg);
  TrainerState s1, s2;
  const MetricsTable t1 = run_training(cfg, ds, &s1);
  const MetricsTable t2 = run_training(cfg, ds, &s2);
  ASSERT_EQ(t1.steps.size(), t2.steps.size());
  for (std::size_t i = 0; i < t1.steps.size(); ++i) {
    ASSERT_EQ(t1.steps[i].v_loss, t2.steps[i].v_loss);
    ASSERT_EQ(t1.steps[i].q_loss, t2.steps[i].q_loss);
    ASSERT_EQ(t1.steps[i].pi_loss, t2.steps[i].pi_loss);
    ASSERT_EQ(t1.steps[i].gate_value, t2.steps[i].gate_value);
  }
  ASSERT_EQ(t1.evals.size(), t2.evals.size());
  for (std::size_t i = 0; i < t1.evals.size(); ++i) {
    ASSERT_EQ(t1.evals[i].reward_mean, t2.evals[i].reward_mean);
    ASSERT_EQ(t1.evals[i].danger_rate, t2.evals[i].danger_rate);
  }
  EXPECT_TRUE(nets_equal(s1.critics.v_net, s2.critics.v_net));
  EXPECT_TRUE(nets_equal(s1.gauss.mean_net, s2.gauss.mean_net));
  EXPECT_EQ(s1.gauss.log_std, s2.gauss.log_std);
}

TEST(Trainer, ZeroLearningRatesFreezeParameters) {
  TrainConfig cfg = tiny_config();
  cfg.hp.lr_v = cfg.hp.lr_q = cfg.hp.lr_pi = 0.0;
  cfg.total_steps = 5;
  const OfflineDataset ds = dataset_for_config(cfg);
  TrainerState trained;
  run_training(cfg, ds, &trained);
  // Fresh initialization from the same seed is the reference point.
  SplitMix64 init = SplitMix64::derive(cfg.seed, stream::kInit);
  const CriticSet fresh =
      make_critics(ds.state_dim(), ds.action_dim(), cfg.hidden_critic, kBanditVMax, init);
  const GaussianPolicyParams fresh_pi =
      make_gaussian_policy(ds.state_dim(), ds.action_dim(), cfg.hidden_policy, init);
  EXPECT_TRUE(nets_equal(trained.critics.v_net, fresh.v_net));
  EXPECT_TRUE(nets_equal(trained.critics.q_nets[0], fresh.q_nets[0]));
  EXPECT_TRUE(nets_equal(trained.critics.q_nets[1], fresh.q_nets[1]));
  // Targets started as copies of frozen twins; Polyak holds them there up to
  // rounding in rho * t + (1 - rho) * t.
  EXPECT_TRUE(nets_close(trained.critics.target_q_nets[0], fresh.q_nets[0], 1e-12));
  EXPECT_TRUE(nets_close(trained.critics.target_q_nets[1], fresh.q_nets[1], 1e-12));
  EXPECT_TRUE(nets_equal(trained.gauss.mean_net, fresh_pi.mean_net));
  EXPECT_EQ(trained.gauss.log_std, fresh_pi.log_std);
}

TEST(Trainer, PhasesFireInUpdateOrder) {
  TrainConfig cfg = tiny_config();
  cfg.total_steps = 3;
  const OfflineDataset ds = dataset_for_config(cfg);
  std::vector<std::pair<std::string, std::size_t>> seen;
  TrainHooks hooks;
  hooks.on_phase = [&](const char* name, std::size_t step) { seen.emplace_back(name, step); };
  run_training(cfg, ds, nullptr, &hooks);
  ASSERT_EQ(seen.size(), 12u);
  const char* order[4] = {"value", "q", "policy", "target"};
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_EQ(seen[k * 4 + j].first, order[j]);
      EXPECT_EQ(seen[k * 4 + j].second, k + 1);
    }
}

TEST(Trainer, PolicySamplingFollowsTheExpansionProbability) {
  for (PolicyKind kind : {PolicyKind::Gaussian, PolicyKind::Flow,
                          PolicyKind::GaussianDetInterp, PolicyKind::FlowDetInterp}) {
    for (GateMode mode : {GateMode::PerStep, GateMode::PerElement}) {
      TrainConfig cfg = tiny_config();
      cfg.policy_kind = kind;
      cfg.gate_mode = mode;
      cfg.total_steps = 8;
      cfg.eval_every = 0;
      cfg.hp.p = 0.0;
      const OfflineDataset ds = dataset_for_config(cfg);
      std::size_t samples = 0;
      TrainHooks hooks;
      hooks.on_policy_sample = [&](std::size_t) { ++samples; };
      run_training(cfg, ds, nullptr, &hooks);
      // In-sample regime: nothing is ever drawn from the policy during training.
      EXPECT_EQ(samples, 0u) << policy_kind_name(kind);

      cfg.hp.p = 1.0;
      samples = 0;
      run_training(cfg, ds, nullptr, &hooks);
      // Value expansion plus policy expansion, every step.
      EXPECT_EQ(samples, 2u * cfg.total_steps) << policy_kind_name(kind);
    }
  }
}

TEST(Trainer, GateStatisticsMatchTheMode) {
  TrainConfig cfg = tiny_config();
  cfg.total_steps = 300;
  cfg.eval_every = 0;
  cfg.hp.p = 0.3;
  cfg.hp.batch_size = 64;
  const OfflineDataset ds = dataset_for_config(cfg);

  Trainer per_step(cfg, ds);
  double mean = 0.0;
  for (std::size_t k = 0; k < cfg.total_steps; ++k) {
    const double g = per_step.step().gate_value;
    ASSERT_TRUE(g == 0.0 || g == 1.0);
    mean += g;
  }
  mean /= static_cast<double>(cfg.total_steps);
  EXPECT_NEAR(mean, 0.3, 0.1);

  cfg.gate_mode = GateMode::PerElement;
  Trainer per_elem(cfg, ds);
  mean = 0.0;
  for (std::size_t k = 0; k < 50; ++k) {
    const double g = per_elem.step().gate_value;
    ASSERT_GE(g, 0.0);
    ASSERT_LE(g, 1.0);
    mean += g;
  }
  EXPECT_NEAR(mean / 50.0, 0.3, 0.05);

  cfg.policy_kind = PolicyKind::GaussianDetInterp;
  Trainer det(cfg, ds);
  for (int k = 0; k < 5; ++k) ASSERT_DOUBLE_EQ(det.step().gate_value, 0.3);
}

TEST(Trainer, DivergenceReportsTheFailingStep) {
  TrainConfig cfg = tiny_config();
  cfg.hp.lr_v = 1e200;  // value net leaves the representable range immediately
  cfg.metrics_path = ::testing::TempDir() + "diverged_metrics.csv";
  const OfflineDataset ds = dataset_for_config(cfg);
  try {
    run_training(cfg, ds);
    FAIL() << "expected divergence";
  } catch (const TrainDivergedError& e) {
    EXPECT_GE(e.step, 2u);
    EXPECT_LE(e.step, 3u);
    EXPECT_NE(std::string(e.what()).find("diverged at step"), std::string::npos);
  }
  // The rows recorded before the failure were flushed.
  const MetricsTable partial = load_metrics_csv(cfg.metrics_path);
  EXPECT_GE(partial.steps.size(), 1u);
  EXPECT_LT(partial.steps.size(), cfg.total_steps);
}

TEST(Trainer, MetricsCsvHasEvalCadence) {
  TrainConfig cfg = tiny_config();
  cfg.total_steps = 10;
  cfg.eval_every = 3;
  cfg.metrics_path = ::testing::TempDir() + "metrics_cadence.csv";
  const OfflineDataset ds = dataset_for_config(cfg);
  const MetricsTable live = run_training(cfg, ds);
  const MetricsTable loaded = load_metrics_csv(cfg.metrics_path);
  ASSERT_EQ(loaded.steps.size(), 10u);
  ASSERT_EQ(loaded.evals.size(), 4u);  // steps 3, 6, 9 and the final step 10
  EXPECT_EQ(loaded.evals[0].step, 3u);
  EXPECT_EQ(loaded.evals[1].step, 6u);
  EXPECT_EQ(loaded.evals[2].step, 9u);
  EXPECT_EQ(loaded.evals[3].step, 10u);
  ASSERT_EQ(live.evals.size(), loaded.evals.size());
  for (std::size_t i = 0; i < live.evals.size(); ++i) {
    EXPECT_EQ(live.evals[i].reward_mean, loaded.evals[i].reward_mean);
    EXPECT_EQ(live.evals[i].dist_to_opt, loaded.evals[i].dist_to_opt);
  }
  for (std::size_t i = 0; i < live.steps.size(); ++i)
    EXPECT_EQ(live.steps[i].v_loss, loaded.steps[i].v_loss);
}

TEST(Trainer, CheckpointRoundTripGaussian) {
  TrainConfig cfg = tiny_config();
  cfg.total_steps = 5;
  cfg.out_dir = ::testing::TempDir() + "ckpt_gauss";
  const OfflineDataset ds = dataset_for_config(cfg);
  TrainerState live;
  run_training(cfg, ds, &live);
  const TrainerState loaded = load_trainer_state(cfg.out_dir, PolicyKind::Gaussian);
  EXPECT_TRUE(nets_equal(loaded.critics.v_net, live.critics.v_net));
  EXPECT_TRUE(nets_equal(loaded.critics.q_nets[0], live.critics.q_nets[0]));
  EXPECT_TRUE(nets_equal(loaded.critics.q_nets[1], live.critics.q_nets[1]));
  EXPECT_TRUE(nets_equal(loaded.critics.target_q_nets[0], live.critics.target_q_nets[0]));
  EXPECT_TRUE(nets_equal(loaded.critics.target_q_nets[1], live.critics.target_q_nets[1]));
  EXPECT_TRUE(nets_equal(loaded.gauss.mean_net, live.gauss.mean_net));
  EXPECT_EQ(loaded.gauss.log_std, live.gauss.log_std);
  // The loaded policy acts identically.
  SplitMix64 r1(5), r2(5);
  Matrix2D states(4, 1), a1, a2;
  sample_gaussian_actions(live.gauss, states, r1, a1);
  sample_gaussian_actions(loaded.gauss, states, r2, a2);
  EXPECT_EQ(a1.data, a2.data);
}

TEST(Trainer, CheckpointRoundTripFlow) {
  TrainConfig cfg = tiny_config();
  cfg.policy_kind = PolicyKind::Flow;
  cfg.total_steps = 5;
  cfg.out_dir = ::testing::TempDir() + "ckpt_flow";
  const OfflineDataset ds = dataset_for_config(cfg);
  TrainerState live;
  run_training(cfg, ds, &live);
  const TrainerState loaded = load_trainer_state(cfg.out_dir, PolicyKind::Flow);
  EXPECT_TRUE(nets_equal(loaded.flow.velocity_net, live.flow.velocity_net));
  EXPECT_EQ(loaded.flow.state_dim, 1u);
  EXPECT_EQ(loaded.flow.action_dim, 2u);
  SplitMix64 r1(6), r2(6);
  Matrix2D states(4, 1), a1, a2;
  sample_flow_actions(live.flow, states, 2.0, 10, r1, a1);
  sample_flow_actions(loaded.flow, states, 2.0, 10, r2, a2);
  EXPECT_EQ(a1.data, a2.data);
}

TEST(EvaluatePolicy, ScoresTheRegionsOfBothTasks) {
  SplitMix64 rng(7);
  TrainerState st;
  st.kind = PolicyKind::Gaussian;
  st.gauss = make_gaussian_policy(1, 2, 4, rng);
  for (auto& w : st.gauss.mean_net.weights) w.fill(0.0);
  for (auto& b : st.gauss.mean_net.biases) b.assign(b.size(), 0.0);
  st.gauss.mean_net.biases.back() = {2.0, 2.0};
  st.gauss.log_std = {kLogStdMin, kLogStdMin};  // essentially deterministic
  Matrix2D states(200, 1);

  SplitMix64 eval_rng(8);
  const EvalRecord opt =
      evaluate_policy(st, EnvId::MultimodalBandit, states, 1.0, 10, eval_rng);
  EXPECT_GT(opt.reward_mean, 99.0);
  EXPECT_EQ(opt.opt_island_rate, 1.0);
  EXPECT_EQ(opt.subopt_island_rate, 0.0);
  EXPECT_EQ(opt.danger_rate, 0.0);  // background rate on this task
  EXPECT_LT(opt.dist_to_opt, 0.1);

  st.gauss.mean_net.biases.back() = {4.0, 4.0};
  const EvalRecord danger =
      evaluate_policy(st, EnvId::DangerBandit, states, 1.0, 10, eval_rng);
  EXPECT_EQ(danger.danger_rate, 1.0);
  EXPECT_NEAR(danger.reward_mean, -1000.0, 1e-6);

  // Way out of range: actions clamp onto the box edge first.
  st.gauss.mean_net.biases.back() = {100.0, 0.0};
  Matrix2D actions;
  const EvalRecord far =
      evaluate_policy(st, EnvId::DangerBandit, states, 1.0, 10, eval_rng, &actions);
  for (std::size_t i = 0; i < actions.rows; ++i) ASSERT_DOUBLE_EQ(actions(i, 0), kActionBox);
  // y keeps its tiny spread, so compare against the exact point loosely.
  EXPECT_NEAR(far.reward_mean, danger_bandit_reward(10.0, 0.0), 0.5);
}

TEST(Trainer, RejectsBadInputs) {
  const TrainConfig cfg = tiny_config();
  const OfflineDataset empty;
  EXPECT_THROW(Trainer(cfg, empty), std::invalid_argument);
  TrainConfig bad = cfg;
  bad.hp.p = 1.5;
  const OfflineDataset ds = dataset_for_config(cfg);
  EXPECT_THROW(Trainer(bad, ds), std::invalid_argument);
}

TEST(Trainer, FlowVariantsRunAndStayFinite) {
  for (PolicyKind kind : {PolicyKind::Flow, PolicyKind::FlowDetInterp}) {
    TrainConfig cfg = tiny_config();
    cfg.policy_kind = kind;
    cfg.gate_mode = GateMode::PerElement;
    cfg.total_steps = 6;
    cfg.hp.p = 0.5;
    const OfflineDataset ds = dataset_for_config(cfg);
    const MetricsTable t = run_training(cfg, ds);
    for (const auto& s : t.steps) {
      ASSERT_TRUE(std::isfinite(s.v_loss));
      ASSERT_TRUE(std::isfinite(s.q_loss));
      ASSERT_TRUE(std::isfinite(s.pi_loss));
    }
    ASSERT_FALSE(t.evals.empty());
    ASSERT_TRUE(std::isfinite(t.final_eval().reward_mean));
  }
}

TEST(Sweep, SharedSeedsAndAggregates) {
  TrainConfig base = tiny_config();
  base.total_steps = 6;
  base.eval_every = 0;  // final-step evaluation still happens
  base.dataset_n = 120;
  const SweepResult sweep = p_sweep(base, {0.0, 0.5}, {0, 1, 2});
  ASSERT_EQ(sweep.runs.size(), 6u);
  ASSERT_EQ(sweep.aggregates.size(), 2u);
  for (const auto& agg : sweep.aggregates) {
    EXPECT_EQ(agg.n_runs, 3u);
    EXPECT_EQ(agg.n_diverged, 0u);
    EXPECT_GE(agg.reward_sem, 0.0);
  }
  // Aggregate means reproduce the per-run final evaluations.
  double expect_mean = 0.0;
  for (const auto& run : sweep.runs)
    if (run.p == 0.0) expect_mean += run.final_eval.reward_mean / 3.0;
  EXPECT_NEAR(sweep.aggregates[0].reward_mean, expect_mean, 1e-12);

  const SweepResult again = p_sweep(base, {0.0, 0.5}, {0, 1, 2});
  for (std::size_t i = 0; i < sweep.runs.size(); ++i)
    ASSERT_EQ(sweep.runs[i].final_eval.reward_mean, again.runs[i].final_eval.reward_mean);
}

TEST(Sweep, DivergedRunsAreScoredAsFailures) {
  TrainConfig base = tiny_config();
  base.hp.lr_v = 1e200;
  base.total_steps = 5;
  const SweepResult sweep = p_sweep(base, {0.5}, {0, 1});
  ASSERT_EQ(sweep.runs.size(), 2u);
  for (const auto& run : sweep.runs) {
    EXPECT_TRUE(run.diverged);
    EXPECT_GE(run.diverged_step, 1u);
    EXPECT_EQ(run.final_eval.reward_mean, -1000.0);
    EXPECT_EQ(run.final_eval.danger_rate, 1.0);
    EXPECT_DOUBLE_EQ(run.final_eval.dist_to_opt, std::sqrt(8.0));
  }
  EXPECT_EQ(sweep.aggregates[0].n_diverged, 2u);
  EXPECT_EQ(sweep.aggregates[0].reward_mean, -1000.0);
  EXPECT_EQ(sweep.aggregates[0].reward_sem, 0.0);
}
