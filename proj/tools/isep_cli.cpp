// Command-line front end: dataset generation, training, sweeps, evaluation,
// ablations, theory checks and SVG reports.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "isep/plot.hpp"
#include "isep/presets.hpp"
#include "isep/theory.hpp"
#include "isep/trainer.hpp"

namespace {

using namespace isep;

struct TrainOpts {
  TrainConfig vals;  // raw CLI values; merged into the effective config by count()
  std::string config_path;
  std::string preset, env = "danger_bandit", policy = "gaussian", gate = "per-step";
  CLI::Option *o_env = nullptr, *o_policy = nullptr, *o_gate = nullptr;
  CLI::Option *o_p = nullptr, *o_tau = nullptr, *o_beta = nullptr, *o_w = nullptr;
  CLI::Option *o_gamma = nullptr, *o_rho = nullptr;
  CLI::Option *o_lr_v = nullptr, *o_lr_q = nullptr, *o_lr_pi = nullptr;
  CLI::Option *o_batch = nullptr, *o_steps = nullptr, *o_eval_every = nullptr;
  CLI::Option *o_rollouts = nullptr, *o_seed = nullptr;
  CLI::Option *o_dataset = nullptr, *o_dataset_n = nullptr;
  CLI::Option *o_hidden_critic = nullptr, *o_hidden_policy = nullptr;
  CLI::Option *o_expand_w = nullptr, *o_omega_max = nullptr, *o_flow_steps = nullptr;
  CLI::Option *o_dropout = nullptr, *o_out_dir = nullptr, *o_metrics = nullptr;
};

void add_train_options(CLI::App* cmd, TrainOpts& t) {
  cmd->add_option("--config", t.config_path,
                  "key=value file applied after the preset; explicit flags win");
  cmd->add_option("--preset", t.preset, "named configuration applied before other options");
  t.o_env = cmd->add_option("--env", t.env, "danger_bandit or multimodal_bandit");
  t.o_policy =
      cmd->add_option("--policy", t.policy, "gaussian, flow, gaussian-det or flow-det");
  t.o_gate = cmd->add_option("--gate", t.gate, "per-step or per-element");
  t.o_p = cmd->add_option("--p", t.vals.hp.p, "expansion probability, in [0,1]")
              ->check(CLI::Range(0.0, 1.0));
  t.o_tau = cmd->add_option("--tau", t.vals.hp.tau, "expectile level, in (0,1)")
                ->check(CLI::Range(0.0, 1.0));
  t.o_beta = cmd->add_option("--beta", t.vals.hp.beta, "advantage temperature, >= 0")
                 ->check(CLI::NonNegativeNumber);
  t.o_w = cmd->add_option("--w", t.vals.hp.w, "guidance weight at sampling time, >= 0")
              ->check(CLI::NonNegativeNumber);
  t.o_gamma = cmd->add_option("--gamma", t.vals.hp.gamma, "discount, in [0,1)")
                  ->check(CLI::Range(0.0, 1.0));
  t.o_rho = cmd->add_option("--rho", t.vals.hp.rho, "target Polyak coefficient, in (0,1)")
                ->check(CLI::Range(0.0, 1.0));
  t.o_lr_v = cmd->add_option("--lr-v", t.vals.hp.lr_v, "value-net learning rate, >= 0")
                 ->check(CLI::NonNegativeNumber);
  t.o_lr_q = cmd->add_option("--lr-q", t.vals.hp.lr_q, "twin-Q learning rate, >= 0")
                 ->check(CLI::NonNegativeNumber);
  t.o_lr_pi = cmd->add_option("--lr-pi", t.vals.hp.lr_pi, "policy learning rate, >= 0")
                  ->check(CLI::NonNegativeNumber);
  t.o_batch = cmd->add_option("--batch-size", t.vals.hp.batch_size, "minibatch size, >= 1")
                  ->check(CLI::PositiveNumber);
  t.o_omega_max =
      cmd->add_option("--omega-max", t.vals.hp.omega_max, "advantage-weight clip, > 0")
          ->check(CLI::PositiveNumber);
  t.o_flow_steps =
      cmd->add_option("--flow-steps", t.vals.hp.flow_steps, "Euler steps in the sampler, >= 1")
          ->check(CLI::PositiveNumber);
  t.o_dropout = cmd->add_option("--token-dropout", t.vals.hp.token_dropout,
                                "unconditioned-token probability, in [0,1]")
                    ->check(CLI::Range(0.0, 1.0));
  t.o_steps = cmd->add_option("--steps", t.vals.total_steps, "gradient steps");
  t.o_eval_every =
      cmd->add_option("--eval-every", t.vals.eval_every, "evaluation cadence in steps");
  t.o_rollouts = cmd->add_option("--eval-rollouts", t.vals.eval_rollouts,
                                 "actions sampled per evaluation, >= 1")
                     ->check(CLI::PositiveNumber);
  t.o_seed = cmd->add_option("--seed", t.vals.seed, "run seed");
  t.o_dataset =
      cmd->add_option("--dataset", t.vals.dataset_path, "dataset file (default: generate)");
  t.o_dataset_n = cmd->add_option("--dataset-n", t.vals.dataset_n,
                                  "transitions to generate when no file is given");
  t.o_hidden_critic =
      cmd->add_option("--hidden-critic", t.vals.hidden_critic, "critic hidden width, >= 1")
          ->check(CLI::PositiveNumber);
  t.o_hidden_policy =
      cmd->add_option("--hidden-policy", t.vals.hidden_policy, "policy hidden width, >= 1")
          ->check(CLI::PositiveNumber);
  t.o_expand_w = cmd->add_option("--expand-w", t.vals.expand_w,
                                 "guidance weight for expansion-branch draws, >= 0")
                     ->check(CLI::NonNegativeNumber);
  t.o_out_dir = cmd->add_option("--out-dir", t.vals.out_dir, "checkpoint directory");
  t.o_metrics = cmd->add_option("--metrics", t.vals.metrics_path, "metrics CSV path");
}

GateMode parse_gate(const std::string& s) {
  if (s == "per-step") return GateMode::PerStep;
  if (s == "per-element") return GateMode::PerElement;
  throw std::invalid_argument("unknown gate mode '" + s +
                              "' (expected per-step or per-element)");
}

// Lines of "key = value"; keys are the long option names without the dashes.
// Blank lines and #-comments are skipped. Unknown keys are errors.
void apply_config_file(const std::string& path, TrainConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file '" + path + "'");
  const auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  const auto num = [](const std::string& k, const std::string& v) {
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size())
      throw std::invalid_argument("config key '" + k + "': bad number '" + v + "'");
    return d;
  };
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line.substr(0, line.find('#')));
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key=value, got '" + stripped + "'");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string val = trim(stripped.substr(eq + 1));

    if (key == "env") cfg.env_id = parse_env(val);
    else if (key == "policy") cfg.policy_kind = parse_policy_kind(val);
    else if (key == "gate") cfg.gate_mode = parse_gate(val);
    else if (key == "p") cfg.hp.p = num(key, val);
    else if (key == "tau") cfg.hp.tau = num(key, val);
    else if (key == "beta") cfg.hp.beta = num(key, val);
    else if (key == "w") cfg.hp.w = num(key, val);
    else if (key == "gamma") cfg.hp.gamma = num(key, val);
    else if (key == "rho") cfg.hp.rho = num(key, val);
    else if (key == "lr-v") cfg.hp.lr_v = num(key, val);
    else if (key == "lr-q") cfg.hp.lr_q = num(key, val);
    else if (key == "lr-pi") cfg.hp.lr_pi = num(key, val);
    else if (key == "batch-size") cfg.hp.batch_size = static_cast<std::size_t>(num(key, val));
    else if (key == "omega-max") cfg.hp.omega_max = num(key, val);
    else if (key == "flow-steps") cfg.hp.flow_steps = static_cast<std::size_t>(num(key, val));
    else if (key == "token-dropout") cfg.hp.token_dropout = num(key, val);
    else if (key == "steps") cfg.total_steps = static_cast<std::size_t>(num(key, val));
    else if (key == "eval-every") cfg.eval_every = static_cast<std::size_t>(num(key, val));
    else if (key == "eval-rollouts") cfg.eval_rollouts = static_cast<std::size_t>(num(key, val));
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(num(key, val));
    else if (key == "dataset") cfg.dataset_path = val;
    else if (key == "dataset-n") cfg.dataset_n = static_cast<std::size_t>(num(key, val));
    else if (key == "hidden-critic") cfg.hidden_critic = static_cast<std::size_t>(num(key, val));
    else if (key == "hidden-policy") cfg.hidden_policy = static_cast<std::size_t>(num(key, val));
    else if (key == "expand-w") cfg.expand_w = num(key, val);
    else if (key == "out-dir") cfg.out_dir = val;
    else if (key == "metrics") cfg.metrics_path = val;
    else
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": unknown key '" + key + "'");
  }
}

TrainConfig build_config(const TrainOpts& t) {
  TrainConfig cfg;
  if (!t.preset.empty()) apply_preset(t.preset, cfg);
  if (!t.config_path.empty()) apply_config_file(t.config_path, cfg);
  auto ov = [](const CLI::Option* o, auto& dst, const auto& src) {
    if (o->count() > 0) dst = src;
  };
  if (t.o_env->count() > 0) cfg.env_id = parse_env(t.env);
  if (t.o_policy->count() > 0) cfg.policy_kind = parse_policy_kind(t.policy);
  if (t.o_gate->count() > 0) cfg.gate_mode = parse_gate(t.gate);
  ov(t.o_p, cfg.hp.p, t.vals.hp.p);
  ov(t.o_tau, cfg.hp.tau, t.vals.hp.tau);
  ov(t.o_beta, cfg.hp.beta, t.vals.hp.beta);
  ov(t.o_w, cfg.hp.w, t.vals.hp.w);
  ov(t.o_gamma, cfg.hp.gamma, t.vals.hp.gamma);
  ov(t.o_rho, cfg.hp.rho, t.vals.hp.rho);
  ov(t.o_lr_v, cfg.hp.lr_v, t.vals.hp.lr_v);
  ov(t.o_lr_q, cfg.hp.lr_q, t.vals.hp.lr_q);
  ov(t.o_lr_pi, cfg.hp.lr_pi, t.vals.hp.lr_pi);
  ov(t.o_batch, cfg.hp.batch_size, t.vals.hp.batch_size);
  ov(t.o_omega_max, cfg.hp.omega_max, t.vals.hp.omega_max);
  ov(t.o_flow_steps, cfg.hp.flow_steps, t.vals.hp.flow_steps);
  ov(t.o_dropout, cfg.hp.token_dropout, t.vals.hp.token_dropout);
  ov(t.o_steps, cfg.total_steps, t.vals.total_steps);
  ov(t.o_eval_every, cfg.eval_every, t.vals.eval_every);
  ov(t.o_rollouts, cfg.eval_rollouts, t.vals.eval_rollouts);
  ov(t.o_seed, cfg.seed, t.vals.seed);
  ov(t.o_dataset, cfg.dataset_path, t.vals.dataset_path);
  ov(t.o_dataset_n, cfg.dataset_n, t.vals.dataset_n);
  ov(t.o_hidden_critic, cfg.hidden_critic, t.vals.hidden_critic);
  ov(t.o_hidden_policy, cfg.hidden_policy, t.vals.hidden_policy);
  ov(t.o_expand_w, cfg.expand_w, t.vals.expand_w);
  ov(t.o_out_dir, cfg.out_dir, t.vals.out_dir);
  ov(t.o_metrics, cfg.metrics_path, t.vals.metrics_path);
  validate(cfg.hp);
  return cfg;
}

void print_eval(const char* tag, const EvalRecord& e) {
  std::printf("%s step=%zu reward=%.4f danger=%.4f opt=%.4f subopt=%.4f dist=%.4f\n", tag,
              e.step, e.reward_mean, e.danger_rate, e.opt_island_rate, e.subopt_island_rate,
              e.dist_to_opt);
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t comma = s.find(',', pos);
    const std::string tok = s.substr(pos, comma == std::string::npos ? comma : comma - pos);
    if (tok.empty()) throw std::invalid_argument("empty entry in list '" + s + "'");
    char* end = nullptr;
    out.push_back(std::strtod(tok.c_str(), &end));
    if (end != tok.c_str() + tok.size())
      throw std::invalid_argument("bad number '" + tok + "' in list");
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (double v : parse_double_list(s)) out.push_back(static_cast<std::uint64_t>(v));
  return out;
}

int cmd_gen_data(const std::string& env, std::size_t n, std::uint64_t seed,
                 const std::string& out) {
  const OfflineDataset ds = generate_dataset(parse_env(env), n, seed);
  save_dataset(ds, out);
  std::printf("wrote %zu transitions (%s, seed %llu) to %s\n", ds.size(),
              env_name(ds.env_id).c_str(), static_cast<unsigned long long>(seed), out.c_str());
  return 0;
}

int cmd_train(const TrainOpts& t) {
  const TrainConfig cfg = build_config(t);
  const OfflineDataset ds = dataset_for_config(cfg);
  std::printf("training %s on %s: p=%g tau=%g steps=%zu seed=%llu\n",
              policy_kind_name(cfg.policy_kind).c_str(), env_name(cfg.env_id).c_str(),
              cfg.hp.p, cfg.hp.tau, cfg.total_steps,
              static_cast<unsigned long long>(cfg.seed));
  const MetricsTable table = run_training(cfg, ds);
  if (!table.evals.empty()) print_eval("final", table.final_eval());
  if (!cfg.out_dir.empty())
    std::printf("checkpoints in %s\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_sweep(const TrainOpts& t, const std::string& p_list, const std::string& seed_list,
              const std::string& out_dir) {
  TrainConfig base = build_config(t);
  base.out_dir.clear();
  base.metrics_path.clear();
  const std::vector<double> p_grid = parse_double_list(p_list);
  const std::vector<std::uint64_t> seeds = parse_seed_list(seed_list);
  for (double p : p_grid)
    if (p < 0.0 || p > 1.0)
      throw std::invalid_argument("p grid entries must be in [0,1]");
  if (p_grid.empty() || seeds.empty())
    throw std::invalid_argument("sweep needs at least one p and one seed");
  std::filesystem::create_directories(out_dir);
  const SweepResult sweep = p_sweep(base, p_grid, seeds);
  save_sweep_csvs(sweep, out_dir + "/sweep_runs.csv", out_dir + "/sweep_summary.csv");
  write_text_file(out_dir + "/sweep_reward.svg",
                  render_sweep_svg(sweep, SweepMetric::Reward, "final reward vs p"));
  write_text_file(out_dir + "/sweep_danger.svg",
                  render_sweep_svg(sweep, SweepMetric::Danger, "failure rate vs p"));
  for (const SweepAggregate& a : sweep.aggregates)
    std::printf("p=%.2f reward=%.2f+-%.2f danger=%.4f+-%.4f diverged=%zu/%zu\n", a.p,
                a.reward_mean, a.reward_sem, a.danger_mean, a.danger_sem, a.n_diverged,
                a.n_runs);
  std::printf("sweep outputs in %s\n", out_dir.c_str());
  return 0;
}

int cmd_eval(const std::string& dir, const std::string& policy, const std::string& env,
             std::size_t rollouts, std::uint64_t seed, double w, std::size_t flow_steps,
             const std::string& points_out, const std::string& svg_out) {
  const TrainerState st = load_trainer_state(dir, parse_policy_kind(policy));
  const EnvId env_id = parse_env(env);
  const std::size_t sd = st.critics.v_net.in_dim();
  Matrix2D states(rollouts, sd);
  states.fill(kBanditStateValue);
  SplitMix64 rng = SplitMix64::derive(seed, stream::kEval);
  Matrix2D actions;
  EvalRecord e = evaluate_policy(st, env_id, states, w, flow_steps, rng, &actions);
  print_eval("eval", e);
  if (!points_out.empty()) save_points_csv(actions, points_out);
  if (!svg_out.empty())
    write_text_file(svg_out, render_field_scatter_svg(env_id, actions,
                                                      "policy actions over reward field"));
  return 0;
}

int cmd_ablate(const TrainOpts& t, const std::string& seed_list, const std::string& out_dir) {
  TrainConfig base = build_config(t);
  base.out_dir.clear();
  base.metrics_path.clear();
  const std::vector<std::uint64_t> seeds = parse_seed_list(seed_list);
  if (seeds.empty()) throw std::invalid_argument("ablate needs at least one seed");
  const PolicyKind stoch_kind = is_flow_kind(base.policy_kind) ? PolicyKind::Flow
                                                               : PolicyKind::Gaussian;
  const PolicyKind det_kind = is_flow_kind(base.policy_kind) ? PolicyKind::FlowDetInterp
                                                             : PolicyKind::GaussianDetInterp;
  std::string csv = "seed,stochastic_opt_rate,deterministic_opt_rate,gap\n";
  double mean_gap = 0.0;
  std::size_t wins = 0;
  for (std::uint64_t seed : seeds) {
    TrainConfig cfg = base;
    cfg.seed = seed;
    const OfflineDataset ds = dataset_for_config(cfg);
    cfg.policy_kind = stoch_kind;
    const double stoch = run_training(cfg, ds).final_eval().opt_island_rate;
    cfg.policy_kind = det_kind;
    const double det = run_training(cfg, ds).final_eval().opt_island_rate;
    const double gap = stoch - det;
    mean_gap += gap / static_cast<double>(seeds.size());
    wins += gap >= 0.15 ? 1 : 0;
    char buf[160];
    const int n = std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g\n",
                                static_cast<unsigned long long>(seed), stoch, det, gap);
    csv.append(buf, n);
    std::printf("seed=%llu stochastic_opt=%.3f deterministic_opt=%.3f gap=%.3f\n",
                static_cast<unsigned long long>(seed), stoch, det, gap);
  }
  std::printf("mean gap=%.3f, gap>=0.15 on %zu/%zu seeds\n", mean_gap, wins, seeds.size());
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_text_file(out_dir + "/ablation.csv", csv);
    std::printf("ablation table in %s/ablation.csv\n", out_dir.c_str());
  }
  return 0;
}

int cmd_theory(std::size_t instances, std::uint64_t seed, double tau, std::size_t iters,
               const std::string& out, bool skip_identities) {
  const std::vector<TheoremInstanceResult> rows = run_theorem_batch(instances, seed, tau,
                                                                    iters);
  std::size_t violations = 0;
  for (const TheoremInstanceResult& r : rows) violations += r.violations;
  std::printf("tabular bound: %zu instances, %zu violation(s)\n", rows.size(), violations);
  if (!out.empty()) {
    save_theory_csv(rows, out);
    std::printf("instance table in %s\n", out.c_str());
  }
  if (!skip_identities) {
    const GateIdentityReport rep = run_gate_identity_checks(seed);
    std::printf("gate expectation rel_err=%.3e (tol 2e-2)\n", rep.expectation.rel_err);
    std::printf("gate variance rel_err=%.3e (tol 5e-2)\n", rep.variance.rel_err);
    std::printf("per-step gating bitwise: %s\n", rep.perstep_bitwise ? "yes" : "no");
    if (rep.expectation.rel_err > 2e-2 || rep.variance.rel_err > 5e-2 || !rep.perstep_bitwise)
      throw std::runtime_error("gate identity check failed");
  }
  if (violations > 0) throw std::runtime_error("tabular bound violated");
  return 0;
}

int cmd_plot(const std::string& kind, const std::string& env,
             const std::vector<std::string>& inputs, const std::string& out,
             const std::string& title) {
  if (kind == "field") {
    if (inputs.size() != 1)
      throw std::invalid_argument("plot field needs exactly one points CSV (--in)");
    const Matrix2D pts = load_points_csv(inputs[0]);
    write_text_file(out, render_field_scatter_svg(parse_env(env), pts, title));
  } else if (kind == "curves") {
    if (inputs.empty()) throw std::invalid_argument("plot curves needs metrics CSVs (--in)");
    std::vector<std::vector<EvalRecord>> runs;
    for (const std::string& path : inputs) runs.push_back(load_metrics_csv(path).evals);
    write_text_file(out, render_curves_svg(runs, title, "eval reward"));
  } else if (kind == "sweep") {
    if (inputs.size() != 1)
      throw std::invalid_argument("plot sweep needs exactly one sweep summary CSV (--in)");
    const SweepResult s = load_sweep_summary_csv(inputs[0]);
    write_text_file(out, render_sweep_svg(s, SweepMetric::Reward, title));
  } else {
    throw std::invalid_argument("unknown plot kind '" + kind +
                                "' (expected field, curves or sweep)");
  }
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"offline-RL laboratory: expectile critics with stochastic policy-expansion "
               "gating, Gaussian and flow policies"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate an offline bandit dataset");
  std::string gen_env = "danger_bandit", gen_out = "dataset.csv";
  std::size_t gen_n = 10000;
  std::uint64_t gen_seed = 0;
  gen->add_option("--env", gen_env, "danger_bandit or multimodal_bandit");
  gen->add_option("--n", gen_n, "transitions, >= 1")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--out", gen_out, "output CSV path");

  auto* train = app.add_subcommand("train", "train one configuration");
  TrainOpts train_opts;
  add_train_options(train, train_opts);

  auto* sweep = app.add_subcommand("sweep", "train over a grid of expansion probabilities");
  TrainOpts sweep_opts;
  add_train_options(sweep, sweep_opts);
  std::string sweep_p = "0,0.3,0.5,1.0", sweep_seeds = "0,1,2,3,4", sweep_out = "sweep_out";
  sweep->add_option("--p-grid", sweep_p, "comma-separated expansion probabilities");
  sweep->add_option("--seeds", sweep_seeds, "comma-separated seeds shared across the grid");
  sweep->add_option("--sweep-out", sweep_out, "output directory");

  auto* eval = app.add_subcommand("eval", "evaluate a saved checkpoint");
  std::string eval_dir, eval_policy = "gaussian", eval_env = "danger_bandit";
  std::string eval_points, eval_svg;
  std::size_t eval_rollouts = 1000, eval_flow_steps = 10;
  std::uint64_t eval_seed = 0;
  double eval_w = 1.0;
  eval->add_option("--checkpoint-dir", eval_dir, "directory written by train")->required();
  eval->add_option("--policy", eval_policy, "gaussian, flow, gaussian-det or flow-det");
  eval->add_option("--env", eval_env, "danger_bandit or multimodal_bandit");
  eval->add_option("--rollouts", eval_rollouts, "actions to sample, >= 1")
      ->check(CLI::PositiveNumber);
  eval->add_option("--seed", eval_seed, "evaluation seed");
  eval->add_option("--w", eval_w, "guidance weight (flow policies), >= 0")
      ->check(CLI::NonNegativeNumber);
  eval->add_option("--flow-steps", eval_flow_steps, "Euler steps (flow policies), >= 1")
      ->check(CLI::PositiveNumber);
  eval->add_option("--points-out", eval_points, "write sampled actions CSV here");
  eval->add_option("--svg-out", eval_svg, "write field+scatter SVG here");

  auto* ablate = app.add_subcommand(
      "ablate", "stochastic gating vs deterministic blending, paired by seed");
  TrainOpts ablate_opts;
  add_train_options(ablate, ablate_opts);
  std::string ablate_seeds = "0,1,2,3,4", ablate_out;
  ablate->add_option("--seeds", ablate_seeds, "comma-separated seeds");
  ablate->add_option("--ablate-out", ablate_out, "output directory for ablation.csv");

  auto* theory = app.add_subcommand("theory-check",
                                    "tabular safe-expansion bound and gate identities");
  std::size_t th_instances = 50, th_iters = 60;
  std::uint64_t th_seed = 0;
  double th_tau = 0.8;
  std::string th_out = "theory.csv";
  bool th_skip_identities = false;
  theory->add_option("--instances", th_instances, "random tabular instances, >= 1")
      ->check(CLI::PositiveNumber);
  theory->add_option("--seed", th_seed, "base seed");
  theory->add_option("--tau", th_tau, "expectile level, in (0,1)")
      ->check(CLI::Range(0.0, 1.0));
  theory->add_option("--iters", th_iters, "value-iteration sweeps per instance, >= 1")
      ->check(CLI::PositiveNumber);
  theory->add_option("--out", th_out, "instance table CSV path ('' to skip)");
  theory->add_flag("--skip-identities", th_skip_identities,
                   "skip the stochastic-gate identity checks");

  auto* plot = app.add_subcommand("plot", "render CSV outputs as SVG");
  std::string plot_kind = "field", plot_env = "danger_bandit", plot_out = "plot.svg";
  std::string plot_title = "plot";
  std::vector<std::string> plot_in;
  plot->add_option("--kind", plot_kind, "field, curves or sweep");
  plot->add_option("--env", plot_env, "reward field for --kind field");
  plot->add_option("--in", plot_in, "input CSV path(s)")->required();
  plot->add_option("--out", plot_out, "output SVG path");
  plot->add_option("--title", plot_title, "plot title");

  auto* presets = app.add_subcommand("list-presets", "show named configurations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_env, gen_n, gen_seed, gen_out);
    if (train->parsed()) return cmd_train(train_opts);
    if (sweep->parsed()) return cmd_sweep(sweep_opts, sweep_p, sweep_seeds, sweep_out);
    if (eval->parsed())
      return cmd_eval(eval_dir, eval_policy, eval_env, eval_rollouts, eval_seed, eval_w,
                      eval_flow_steps, eval_points, eval_svg);
    if (ablate->parsed()) return cmd_ablate(ablate_opts, ablate_seeds, ablate_out);
    if (theory->parsed())
      return cmd_theory(th_instances, th_seed, th_tau, th_iters, th_out, th_skip_identities);
    if (plot->parsed()) return cmd_plot(plot_kind, plot_env, plot_in, plot_out, plot_title);
    if (presets->parsed()) {
      for (const Preset& p : all_presets())
        std::printf("%-28s %s\n", p.name.c_str(), p.note.c_str());
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
