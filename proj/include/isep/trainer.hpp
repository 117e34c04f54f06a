#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "isep/bandit.hpp"
#include "isep/critic.hpp"
#include "isep/dataset.hpp"
#include "isep/hyperparams.hpp"
#include "isep/policy_flow.hpp"
#include "isep/policy_gauss.hpp"
#include "isep/rng.hpp"

namespace isep {

enum class PolicyKind { Gaussian, Flow, GaussianDetInterp, FlowDetInterp };

inline std::string policy_kind_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::Gaussian: return "gaussian";
    case PolicyKind::Flow: return "flow";
    case PolicyKind::GaussianDetInterp: return "gaussian-det";
    case PolicyKind::FlowDetInterp: return "flow-det";
  }
  return "?";
}

inline PolicyKind parse_policy_kind(const std::string& name) {
  if (name == "gaussian") return PolicyKind::Gaussian;
  if (name == "flow") return PolicyKind::Flow;
  if (name == "gaussian-det") return PolicyKind::GaussianDetInterp;
  if (name == "flow-det" || name == "det-interp") return PolicyKind::FlowDetInterp;
  throw std::invalid_argument("unknown policy '" + name +
                              "' (expected gaussian, flow, gaussian-det or flow-det)");
}

inline bool is_flow_kind(PolicyKind k) {
  return k == PolicyKind::Flow || k == PolicyKind::FlowDetInterp;
}

inline bool is_det_kind(PolicyKind k) {
  return k == PolicyKind::GaussianDetInterp || k == PolicyKind::FlowDetInterp;
}

struct TrainConfig {
  HyperParams hp;
  EnvId env_id = EnvId::DangerBandit;
  PolicyKind policy_kind = PolicyKind::Gaussian;
  GateMode gate_mode = GateMode::PerStep;
  std::size_t total_steps = 30000;
  std::size_t eval_every = 1000;
  std::size_t eval_rollouts = 1000;
  std::uint64_t seed = 0;
  std::string dataset_path;       // empty: generate dataset_n transitions from env_id
  std::size_t dataset_n = 10000;
  std::size_t hidden_critic = 256;
  std::size_t hidden_policy = 256;
  double expand_w = 1.0;          // guidance weight for expansion-branch draws
  Token expand_token = Token::Positive;
  std::string out_dir;            // checkpoints, when set
  std::string metrics_path;       // CSV stream, when set
};

struct TrainStepRecord {
  std::size_t step = 0;
  double v_loss = 0.0, q_loss = 0.0, pi_loss = 0.0;
  double gate_value = 0.0;
  double v_grad_norm = 0.0, q_grad_norm = 0.0, pi_grad_norm = 0.0;
};

struct EvalRecord {
  std::size_t step = 0;
  double reward_mean = 0.0;
  double danger_rate = 0.0;  // danger-circle rate, or background rate on the multimodal task
  double opt_island_rate = 0.0;
  double subopt_island_rate = 0.0;
  double dist_to_opt = 0.0;
};

struct MetricsTable {
  std::vector<TrainStepRecord> steps;
  std::vector<EvalRecord> evals;

  const EvalRecord& final_eval() const {
    if (evals.empty()) throw std::runtime_error("no evaluations recorded");
    return evals.back();
  }
};

/// Thrown when a step produces non-finite numbers; carries the 1-based step.
struct TrainDivergedError : std::runtime_error {
  std::size_t step;
  TrainDivergedError(std::size_t step_index, const std::string& why)
      : std::runtime_error("training diverged at step " + std::to_string(step_index) + ": " +
                           why),
        step(step_index) {}
};

/// Test instrumentation: phase callbacks fire in update order; the sample
/// callback fires whenever policy-generated actions are drawn.
struct TrainHooks {
  std::function<void(const char* phase, std::size_t step)> on_phase;
  std::function<void(std::size_t step)> on_policy_sample;
};

struct TrainerState {
  PolicyKind kind = PolicyKind::Gaussian;
  CriticSet critics;
  GaussianPolicyParams gauss;
  FlowPolicyParams flow;
};

/// Rolls the policy at the bandit state, clamps actions to the action box and
/// scores them against the environment's reward field. danger_rate reports
/// the danger circle on the danger task and the background elsewhere.
inline EvalRecord evaluate_policy(const TrainerState& st, EnvId env, const Matrix2D& states,
                                  double w, std::size_t flow_steps, SplitMix64& rng,
                                  Matrix2D* actions_out = nullptr,
                                  FlowScratch* scratch = nullptr) {
  Matrix2D local;
  Matrix2D& actions = actions_out ? *actions_out : local;
  if (is_flow_kind(st.kind))
    sample_flow_actions(st.flow, states, w, flow_steps, rng, actions, scratch);
  else
    sample_gaussian_actions(st.gauss, states, rng, actions);
  const std::size_t n = actions.rows;
  if (n == 0) throw std::invalid_argument("evaluate_policy: no rollouts");
  EvalRecord r;
  double reward = 0.0, danger = 0.0, opt = 0.0, sub = 0.0, dist = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = clamp_to_action_box(actions(i, 0));
    const double y = clamp_to_action_box(actions(i, 1));
    actions(i, 0) = x;
    actions(i, 1) = y;
    reward += bandit_reward(env, x, y);
    if (env == EnvId::DangerBandit)
      danger += in_danger_zone(x, y) ? 1.0 : 0.0;
    else
      danger += in_background(x, y) ? 1.0 : 0.0;
    opt += in_opt_island(x, y) ? 1.0 : 0.0;
    sub += in_subopt_island(x, y) ? 1.0 : 0.0;
    const double dx = x - 2.0, dy = y - 2.0;
    dist += std::sqrt(dx * dx + dy * dy);
  }
  const double inv = 1.0 / static_cast<double>(n);
  r.reward_mean = reward * inv;
  r.danger_rate = danger * inv;
  r.opt_island_rate = opt * inv;
  r.subopt_island_rate = sub * inv;
  r.dist_to_opt = dist * inv;
  return r;
}

// ---------------------------------------------------------------------------
// Trainer: owns parameters, streams and scratch buffers for one run.
// ---------------------------------------------------------------------------

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const OfflineDataset& ds, const TrainHooks* hooks = nullptr)
      : cfg_(cfg),
        ds_(ds),
        hooks_(hooks),
        train_rng_(SplitMix64::derive(cfg.seed, stream::kTrain)),
        eval_rng_(SplitMix64::derive(cfg.seed, stream::kEval)) {
    validate(cfg.hp);
    if (ds.size() == 0) throw std::invalid_argument("empty dataset");
    const std::size_t sd = ds.state_dim(), ad = ds.action_dim();
    SplitMix64 init_rng = SplitMix64::derive(cfg.seed, stream::kInit);
    st_.kind = cfg.policy_kind;
    st_.critics = make_critics(sd, ad, cfg.hidden_critic, kBanditVMax, init_rng);
    if (is_flow_kind(cfg.policy_kind))
      st_.flow = make_flow_policy(sd, ad, cfg.hidden_policy, init_rng);
    else
      st_.gauss = make_gaussian_policy(sd, ad, cfg.hidden_policy, init_rng);
    v_grads_ = make_grads(st_.critics.v_net);
    for (int t = 0; t < 2; ++t) q_grads_[t] = make_grads(st_.critics.q_nets[t]);
    if (is_flow_kind(cfg.policy_kind))
      flow_grads_ = make_grads(st_.flow.velocity_net);
    else
      pi_grads_ = make_policy_grads(st_.gauss);
    eval_states_.resize(cfg.eval_rollouts, sd);
    eval_states_.fill(kBanditStateValue);
  }

  /// One Algorithm-1 iteration: value step, Q step, policy step, target step.
  TrainStepRecord step() {
    const std::size_t k = ++step_count_;
    try {
      return step_impl(k);
    } catch (const NonFiniteError& e) {
      throw TrainDivergedError(k, e.what());
    }
  }

  EvalRecord evaluate() {
    EvalRecord r = evaluate_policy(st_, cfg_.env_id, eval_states_, cfg_.hp.w,
                                   cfg_.hp.flow_steps, eval_rng_, nullptr, &fscr_);
    r.step = step_count_;
    return r;
  }

  const TrainerState& state() const { return st_; }
  TrainerState& state() { return st_; }
  std::size_t steps_done() const { return step_count_; }

 private:
  void phase(const char* name, std::size_t k) {
    if (hooks_ && hooks_->on_phase) hooks_->on_phase(name, k);
  }

  void sampled(std::size_t k) {
    if (hooks_ && hooks_->on_policy_sample) hooks_->on_policy_sample(k);
  }

  void draw_policy_actions(Matrix2D& out, std::size_t k) {
    sampled(k);
    if (is_flow_kind(cfg_.policy_kind))
      sample_flow_actions(st_.flow, batch_.states, cfg_.expand_w, cfg_.hp.flow_steps,
                          train_rng_, out, &fscr_, cfg_.expand_token);
    else
      sample_gaussian_actions(st_.gauss, batch_.states, train_rng_, out);
    // The critics are only ever fit on box-bounded actions, and evaluation
    // clamps every executed action to the same box. Clamping here keeps the
    // expansion terms on actions the Q nets are actually trained for; raw
    // extrapolated draws can carry arbitrarily wrong Q values into the value
    // target.
    for (double& v : out.data) v = clamp_to_action_box(v);
  }

  TrainStepRecord step_impl(std::size_t k) {
    const HyperParams& hp = cfg_.hp;
    TrainStepRecord rec;
    rec.step = k;
    sample_batch(ds_, hp.batch_size, train_rng_, idx_, batch_);

    // Value step: expectile regression onto dataset Q, expanded toward Q at
    // the policy's own draws when p > 0.
    phase("value", k);
    if (hp.p > 0.0) draw_policy_actions(value_samples_, k);
    rec.v_loss =
        interpolated_value_loss(batch_, value_samples_, st_.critics, hp, v_grads_, &cscr_);
    rec.v_grad_norm = grad_norm(v_grads_);
    adam_step(st_.critics.v_net, v_grads_, hp.lr_v);

    // Q step: both twins toward r + gamma (1-done) V(s').
    phase("q", k);
    rec.q_loss = bellman_q_loss(batch_, st_.critics, hp, q_grads_, &cscr_);
    rec.q_grad_norm =
        std::sqrt(grad_squared_norm(q_grads_[0]) + grad_squared_norm(q_grads_[1]));
    adam_step(st_.critics.q_nets[0], q_grads_[0], hp.lr_q);
    adam_step(st_.critics.q_nets[1], q_grads_[1], hp.lr_q);

    // Policy step.
    phase("policy", k);
    if (is_flow_kind(cfg_.policy_kind))
      flow_policy_step(rec);
    else
      gauss_policy_step(rec);

    // Target step.
    phase("target", k);
    polyak_update(st_.critics, hp.rho);
    return rec;
  }

  void gauss_policy_step(TrainStepRecord& rec) {
    const HyperParams& hp = cfg_.hp;
    AwrInputs in;
    advantage_weights(st_.critics, batch_.states, batch_.actions, hp.beta, hp.omega_max,
                      in.w_data, &cscr_);
    const bool det = is_det_kind(cfg_.policy_kind);
    GateRealization gate;
    bool need_expansion;
    if (det) {
      rec.gate_value = hp.p;
      need_expansion = hp.p > 0.0;
    } else {
      gate = draw_gate(cfg_.gate_mode, hp.p, hp.batch_size, train_rng_);
      rec.gate_value = gate.fraction();
      need_expansion =
          cfg_.gate_mode == GateMode::PerElement ? hp.p > 0.0 : gate.draws[0] != 0;
    }
    if (need_expansion) {
      sampled(rec.step);
      sample_gaussian_actions(st_.gauss, batch_.states, train_rng_, in.policy_actions);
      advantage_weights(st_.critics, batch_.states, in.policy_actions, hp.beta, hp.omega_max,
                        in.w_pol, &cscr_);
    } else {
      in.policy_actions.resize(batch_.size(), st_.gauss.action_dim());
      in.w_pol.assign(batch_.size(), 0.0);
    }
    rec.pi_loss = det ? deterministic_interp_loss(batch_, st_.gauss, in, hp, pi_grads_, &cscr_)
                      : gated_awr_loss(batch_, st_.gauss, in, hp, gate, pi_grads_, &cscr_);
    double n2 = grad_squared_norm(pi_grads_.mean);
    for (double g : pi_grads_.log_std) n2 += g * g;
    rec.pi_grad_norm = std::sqrt(n2);
    gauss_adam_step(st_.gauss, pi_grads_, hp.lr_pi);
  }

  void flow_policy_step(TrainStepRecord& rec) {
    const HyperParams& hp = cfg_.hp;
    const bool det = is_det_kind(cfg_.policy_kind);
    GateRealization gate;
    bool need_data, need_expansion;
    if (det) {
      rec.gate_value = hp.p;
      need_data = hp.p < 1.0;
      need_expansion = hp.p > 0.0;
    } else {
      gate = draw_gate(cfg_.gate_mode, hp.p, hp.batch_size, train_rng_);
      rec.gate_value = gate.fraction();
      if (cfg_.gate_mode == GateMode::PerElement) {
        // Prepare only the branches that realized draws actually select.
        need_data = false;
        need_expansion = false;
        for (auto d : gate.draws) (d ? need_expansion : need_data) = true;
      } else {
        need_expansion = gate.draws[0] != 0;
        need_data = !need_expansion;
      }
    }
    if (need_data)
      prepare_fm_data_inputs(batch_, st_.flow, st_.critics, hp, train_rng_, fm_data_, &cscr_);
    if (need_expansion) {
      sampled(rec.step);
      prepare_fm_expansion_inputs(batch_, st_.flow, st_.critics, hp, cfg_.expand_w,
                                  train_rng_, fm_pol_, fm_sampled_, &cscr_, &fscr_);
    }
    rec.pi_loss = det ? deterministic_fm_loss(st_.flow, fm_data_, fm_pol_, hp.p, flow_grads_,
                                              &fscr_)
                      : gated_fm_loss(st_.flow, fm_data_, need_expansion ? &fm_pol_ : nullptr,
                                      gate, flow_grads_, &fscr_);
    rec.pi_grad_norm = grad_norm(flow_grads_);
    adam_step(st_.flow.velocity_net, flow_grads_, hp.lr_pi);
  }

  TrainConfig cfg_;
  const OfflineDataset& ds_;
  const TrainHooks* hooks_;
  SplitMix64 train_rng_, eval_rng_;
  TrainerState st_;
  std::vector<std::size_t> idx_;
  Batch batch_;
  CriticScratch cscr_;
  FlowScratch fscr_;
  MlpGrads v_grads_;
  std::array<MlpGrads, 2> q_grads_;
  GaussPolicyGrads pi_grads_;
  MlpGrads flow_grads_;
  Matrix2D value_samples_;
  FmBranchInputs fm_data_, fm_pol_;
  Matrix2D fm_sampled_;
  Matrix2D eval_states_;
  std::size_t step_count_ = 0;
};

// ---------------------------------------------------------------------------
// Run driver: metrics CSV, checkpoints, divergence reporting.
// ---------------------------------------------------------------------------

inline constexpr const char* kMetricsHeader =
    "step,v_loss,q_loss,pi_loss,gate,eval_reward_mean,eval_danger_rate,"
    "eval_opt_island_rate,eval_subopt_island_rate,eval_dist_to_opt";

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path) {
    if (path.empty()) return;
    f_.open(path);
    if (!f_) throw std::runtime_error("cannot open " + path + " for writing");
    f_ << kMetricsHeader << '\n';
  }

  void row(const TrainStepRecord& s, const EvalRecord* e) {
    if (!f_.is_open()) return;
    char buf[360];
    int n = std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g", s.step, s.v_loss,
                          s.q_loss, s.pi_loss, s.gate_value);
    if (e)
      n += std::snprintf(buf + n, sizeof buf - n, ",%.17g,%.17g,%.17g,%.17g,%.17g\n",
                         e->reward_mean, e->danger_rate, e->opt_island_rate,
                         e->subopt_island_rate, e->dist_to_opt);
    else
      n += std::snprintf(buf + n, sizeof buf - n, ",,,,,\n");
    f_.write(buf, n);
  }

  void flush() {
    if (f_.is_open()) f_.flush();
  }

 private:
  std::ofstream f_;
};

inline void save_gaussian_policy(const GaussianPolicyParams& p, const std::string& dir) {
  save_mlp(p.mean_net, dir + "/gauss_mean.net");
  // log_std rides in the same container as a zero-weight 1 -> D net whose
  // bias vector is the log-std (so applying it to [0] returns log_std).
  MlpParams ls;
  ls.layer_sizes = {1, p.log_std.size()};
  ls.weights.emplace_back(p.log_std.size(), 1);
  ls.biases.push_back(p.log_std);
  save_mlp(ls, dir + "/gauss_log_std.net");
}

inline GaussianPolicyParams load_gaussian_policy(const std::string& dir) {
  GaussianPolicyParams p;
  p.mean_net = load_mlp(dir + "/gauss_mean.net", Activation::Relu);
  const MlpParams ls = load_mlp(dir + "/gauss_log_std.net", Activation::Relu);
  p.log_std = ls.biases.at(0);
  p.ls_m.assign(p.log_std.size(), 0.0);
  p.ls_v.assign(p.log_std.size(), 0.0);
  return p;
}

inline void save_trainer_state(const TrainerState& st, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_mlp(st.critics.v_net, dir + "/v.net");
  save_mlp(st.critics.q_nets[0], dir + "/q0.net");
  save_mlp(st.critics.q_nets[1], dir + "/q1.net");
  save_mlp(st.critics.target_q_nets[0], dir + "/q0_target.net");
  save_mlp(st.critics.target_q_nets[1], dir + "/q1_target.net");
  if (is_flow_kind(st.kind))
    save_mlp(st.flow.velocity_net, dir + "/flow.net");
  else
    save_gaussian_policy(st.gauss, dir);
}

inline TrainerState load_trainer_state(const std::string& dir, PolicyKind kind) {
  TrainerState st;
  st.kind = kind;
  st.critics.v_net = load_mlp(dir + "/v.net", Activation::Relu);
  st.critics.q_nets[0] = load_mlp(dir + "/q0.net", Activation::Relu);
  st.critics.q_nets[1] = load_mlp(dir + "/q1.net", Activation::Relu);
  st.critics.target_q_nets[0] = load_mlp(dir + "/q0_target.net", Activation::Relu);
  st.critics.target_q_nets[1] = load_mlp(dir + "/q1_target.net", Activation::Relu);
  st.critics.v_max = kBanditVMax;
  if (is_flow_kind(kind)) {
    st.flow.velocity_net = load_mlp(dir + "/flow.net", Activation::Mish);
    st.flow.action_dim = st.flow.velocity_net.out_dim();
    st.flow.state_dim = st.flow.velocity_net.in_dim() - st.flow.action_dim - 6;
  } else {
    st.gauss = load_gaussian_policy(dir);
  }
  return st;
}

/// Runs total_steps updates with periodic evaluation (every eval_every steps
/// and at the final step). Streams the metrics CSV and writes checkpoints
/// when configured. Divergence flushes what was recorded, then rethrows.
inline MetricsTable run_training(const TrainConfig& cfg, const OfflineDataset& ds,
                                 TrainerState* out_state = nullptr,
                                 const TrainHooks* hooks = nullptr) {
  Trainer trainer(cfg, ds, hooks);
  MetricsTable table;
  MetricsWriter writer(cfg.metrics_path);
  try {
    for (std::size_t k = 1; k <= cfg.total_steps; ++k) {
      const TrainStepRecord rec = trainer.step();
      table.steps.push_back(rec);
      const bool eval_now =
          (cfg.eval_every > 0 && k % cfg.eval_every == 0) || k == cfg.total_steps;
      if (eval_now) {
        table.evals.push_back(trainer.evaluate());
        writer.row(rec, &table.evals.back());
      } else {
        writer.row(rec, nullptr);
      }
    }
  } catch (const TrainDivergedError&) {
    writer.flush();
    if (out_state) *out_state = trainer.state();
    throw;
  }
  if (!cfg.out_dir.empty()) save_trainer_state(trainer.state(), cfg.out_dir);
  if (out_state) *out_state = trainer.state();
  return table;
}

inline OfflineDataset dataset_for_config(const TrainConfig& cfg) {
  if (!cfg.dataset_path.empty()) return load_dataset(cfg.dataset_path);
  return generate_dataset(cfg.env_id, cfg.dataset_n, cfg.seed);
}

// ---------------------------------------------------------------------------
// p-sweep
// ---------------------------------------------------------------------------

struct SweepRun {
  double p = 0.0;
  std::uint64_t seed = 0;
  bool diverged = false;
  std::size_t diverged_step = 0;
  EvalRecord final_eval;
};

struct SweepAggregate {
  double p = 0.0;
  std::size_t n_runs = 0, n_diverged = 0;
  double reward_mean = 0.0, reward_sem = 0.0;
  double danger_mean = 0.0, danger_sem = 0.0;
  double opt_mean = 0.0, sub_mean = 0.0, dist_mean = 0.0;
};

struct SweepResult {
  std::vector<SweepRun> runs;
  std::vector<SweepAggregate> aggregates;
};

/// One run per (p, seed) over a shared seed set; diverged runs are scored as
/// full danger-zone occupancy with the danger reward (the failure mode the
/// aggressive-p regime is expected to hit). Aggregates are computed over all
/// runs of each p.
inline SweepResult p_sweep(const TrainConfig& base, const std::vector<double>& p_grid,
                           const std::vector<std::uint64_t>& seeds) {
  SweepResult out;
  for (double p : p_grid) {
    SweepAggregate agg;
    agg.p = p;
    std::vector<double> rewards, dangers;
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.hp.p = p;
      cfg.seed = seed;
      const OfflineDataset ds = dataset_for_config(cfg);
      SweepRun run;
      run.p = p;
      run.seed = seed;
      try {
        const MetricsTable table = run_training(cfg, ds);
        run.final_eval = table.final_eval();
      } catch (const TrainDivergedError& e) {
        run.diverged = true;
        run.diverged_step = e.step;
        run.final_eval.step = e.step;
        run.final_eval.reward_mean = -1000.0;
        run.final_eval.danger_rate = 1.0;
        run.final_eval.dist_to_opt = std::sqrt(8.0);
      }
      rewards.push_back(run.final_eval.reward_mean);
      dangers.push_back(run.final_eval.danger_rate);
      agg.opt_mean += run.final_eval.opt_island_rate;
      agg.sub_mean += run.final_eval.subopt_island_rate;
      agg.dist_mean += run.final_eval.dist_to_opt;
      agg.n_runs += 1;
      agg.n_diverged += run.diverged ? 1 : 0;
      out.runs.push_back(run);
    }
    const double n = static_cast<double>(agg.n_runs);
    for (double r : rewards) agg.reward_mean += r / n;
    for (double d : dangers) agg.danger_mean += d / n;
    double var_r = 0.0, var_d = 0.0;
    for (double r : rewards) var_r += (r - agg.reward_mean) * (r - agg.reward_mean);
    for (double d : dangers) var_d += (d - agg.danger_mean) * (d - agg.danger_mean);
    if (agg.n_runs > 1) {
      agg.reward_sem = std::sqrt(var_r / (n - 1.0) / n);
      agg.danger_sem = std::sqrt(var_d / (n - 1.0) / n);
    }
    agg.opt_mean /= n;
    agg.sub_mean /= n;
    agg.dist_mean /= n;
    out.aggregates.push_back(agg);
  }
  return out;
}

}  // namespace isep
