#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "isep/critic.hpp"
#include "isep/dataset.hpp"
#include "isep/hyperparams.hpp"
#include "isep/matrix.hpp"
#include "isep/mlp.hpp"
#include "isep/rng.hpp"

namespace isep {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Diagonal Gaussian policy: state-dependent mean, state-independent
/// learnable log standard deviation clamped to [-5, 2].
struct GaussianPolicyParams {
  MlpParams mean_net;
  std::vector<double> log_std;
  // Adam moments for log_std (the mean net carries its own inside MlpParams).
  std::vector<double> ls_m, ls_v;
  std::int64_t ls_step = 0;

  std::size_t action_dim() const { return mean_net.out_dim(); }
};

inline GaussianPolicyParams make_gaussian_policy(std::size_t state_dim,
                                                 std::size_t action_dim, std::size_t hidden,
                                                 SplitMix64& rng) {
  GaussianPolicyParams p;
  p.mean_net = make_mlp({state_dim, hidden, hidden, action_dim}, Activation::Relu, rng);
  p.log_std.assign(action_dim, 0.0);
  p.ls_m.assign(action_dim, 0.0);
  p.ls_v.assign(action_dim, 0.0);
  return p;
}

inline void clamp_log_std(GaussianPolicyParams& p) {
  for (double& v : p.log_std) v = std::clamp(v, kLogStdMin, kLogStdMax);
}

/// Exact diagonal-Gaussian log density, normalization constant included.
inline double gaussian_log_prob(const GaussianPolicyParams& p, const std::vector<double>& s,
                                const std::vector<double>& a) {
  const std::vector<double> mu = mlp_apply_vec(p.mean_net, s);
  double lp = -0.5 * static_cast<double>(a.size()) * kLog2Pi;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double sd = std::exp(p.log_std[d]);
    const double z = (a[d] - mu[d]) / sd;
    lp += -0.5 * z * z - p.log_std[d];
  }
  return lp;
}

/// One reparameterized draw per state row: a = mu + sigma * eps.
inline void sample_gaussian_actions(const GaussianPolicyParams& p, const Matrix2D& states,
                                    SplitMix64& rng, Matrix2D& out) {
  const Matrix2D mu = mlp_apply(p.mean_net, states);
  out.resize(mu.rows, mu.cols);
  for (std::size_t i = 0; i < mu.rows; ++i)
    for (std::size_t d = 0; d < mu.cols; ++d)
      out(i, d) = mu(i, d) + std::exp(p.log_std[d]) * rng.normal();
}

inline std::vector<double> sample_gaussian_action(const GaussianPolicyParams& p,
                                                  const std::vector<double>& s,
                                                  SplitMix64& rng) {
  Matrix2D states(1, s.size());
  states.data = s;
  Matrix2D out;
  sample_gaussian_actions(p, states, rng, out);
  return out.data;
}

// ---------------------------------------------------------------------------
// Bernoulli gate
// ---------------------------------------------------------------------------

enum class GateMode { PerStep, PerElement };

/// Realized gate draws. B=1 selects the expansion (policy-sample) branch,
/// so the empirical mean of the draws tracks p.
struct GateRealization {
  GateMode mode = GateMode::PerStep;
  std::vector<std::uint8_t> draws;

  double fraction() const {
    double s = 0.0;
    for (auto b : draws) s += b;
    return draws.empty() ? 0.0 : s / static_cast<double>(draws.size());
  }
};

inline GateRealization draw_gate(GateMode mode, double p, std::size_t batch_size,
                                 SplitMix64& rng) {
  GateRealization g;
  g.mode = mode;
  const std::size_t n = mode == GateMode::PerStep ? 1 : batch_size;
  g.draws.resize(n);
  for (auto& b : g.draws) b = rng.bernoulli(p) ? 1 : 0;
  return g;
}

// ---------------------------------------------------------------------------
// Advantage-weighted losses
// ---------------------------------------------------------------------------

/// Gradient container for the whole Gaussian policy.
struct GaussPolicyGrads {
  MlpGrads mean;
  std::vector<double> log_std;

  void zero() {
    mean.zero();
    log_std.assign(log_std.size(), 0.0);
  }
};

inline GaussPolicyGrads make_policy_grads(const GaussianPolicyParams& p) {
  GaussPolicyGrads g;
  g.mean = make_grads(p.mean_net);
  g.log_std.assign(p.action_dim(), 0.0);
  return g;
}

inline void flatten_grads(const GaussPolicyGrads& g, std::vector<double>& out) {
  out.clear();
  for (const auto& w : g.mean.weights) out.insert(out.end(), w.data.begin(), w.data.end());
  for (const auto& b : g.mean.biases) out.insert(out.end(), b.begin(), b.end());
  out.insert(out.end(), g.log_std.begin(), g.log_std.end());
}

/// Everything the policy loss treats as constant: actions drawn from the
/// current policy plus the advantage weights of both branches. Frozen before
/// the update so repeated loss evaluations are exact replays.
struct AwrInputs {
  Matrix2D policy_actions;
  std::vector<double> w_data;
  std::vector<double> w_pol;
};

inline void prepare_awr_inputs(const Batch& batch, const GaussianPolicyParams& policy,
                               const CriticSet& critics, const HyperParams& hp,
                               SplitMix64& rng, AwrInputs& out,
                               CriticScratch* scratch = nullptr) {
  sample_gaussian_actions(policy, batch.states, rng, out.policy_actions);
  advantage_weights(critics, batch.states, batch.actions, hp.beta, hp.omega_max, out.w_data,
                    scratch);
  advantage_weights(critics, batch.states, out.policy_actions, hp.beta, hp.omega_max,
                    out.w_pol, scratch);
}

/// scale * mean_i weights[i] * (-log pi(actions_i | states_i)), accumulated
/// into grads. The shared core of the gated and deterministic losses; both
/// gate branches route through this one code path.
inline double awr_branch_loss(const GaussianPolicyParams& policy, const Matrix2D& states,
                              const Matrix2D& actions, const std::vector<double>& weights,
                              double scale, GaussPolicyGrads& grads,
                              CriticScratch* scratch = nullptr) {
  const std::size_t b = states.rows;
  const std::size_t ad = policy.action_dim();
  CriticScratch local;
  CriticScratch& scr = scratch ? *scratch : local;
  mlp_forward(policy.mean_net, states, scr.v_tape);
  const Matrix2D& mu = scr.v_tape.output();

  const double inv_b = 1.0 / static_cast<double>(b);
  double loss = 0.0;
  scr.grad_out.resize(b, ad);
  for (std::size_t i = 0; i < b; ++i) {
    const double wgt = weights[i];
    double nll = 0.5 * static_cast<double>(ad) * kLog2Pi;
    for (std::size_t d = 0; d < ad; ++d) {
      const double sd = std::exp(policy.log_std[d]);
      const double z = (actions(i, d) - mu(i, d)) / sd;
      nll += 0.5 * z * z + policy.log_std[d];
      scr.grad_out(i, d) = scale * wgt * inv_b * (-z / sd);
      grads.log_std[d] += scale * wgt * inv_b * (1.0 - z * z);
    }
    loss += wgt * nll * inv_b;
  }
  mlp_backward(policy.mean_net, scr.v_tape, scr.grad_out, grads.mean, &scr.dz);
  require_finite(loss, "advantage-weighted policy loss");
  return scale * loss;
}

/// Stochastically gated advantage-weighted loss: the realized Bernoulli draw
/// selects the dataset branch (B=0, weighted behavior cloning) or the
/// expansion branch (B=1, weighted log-likelihood of the policy's own
/// detached samples). PerElement mode applies the draw inside the mean.
/// Returns the loss; grads is overwritten.
inline double gated_awr_loss(const Batch& batch, const GaussianPolicyParams& policy,
                             const AwrInputs& in, const HyperParams& /*hp*/,
                             const GateRealization& gate, GaussPolicyGrads& grads,
                             CriticScratch* scratch = nullptr) {
  if (batch.size() == 0) throw std::invalid_argument("gated_awr_loss: empty batch");
  grads.zero();
  if (gate.mode == GateMode::PerStep) {
    const bool expand = gate.draws.at(0) != 0;
    return expand ? awr_branch_loss(policy, batch.states, in.policy_actions, in.w_pol, 1.0,
                                    grads, scratch)
                  : awr_branch_loss(policy, batch.states, batch.actions, in.w_data, 1.0,
                                    grads, scratch);
  }
  // PerElement: zero out the unselected branch's weight per sample.
  std::vector<double> wd(batch.size()), wp(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const bool expand = gate.draws.at(i) != 0;
    wd[i] = expand ? 0.0 : in.w_data[i];
    wp[i] = expand ? in.w_pol[i] : 0.0;
  }
  double loss = awr_branch_loss(policy, batch.states, batch.actions, wd, 1.0, grads, scratch);
  loss += awr_branch_loss(policy, batch.states, in.policy_actions, wp, 1.0, grads, scratch);
  return loss;
}

/// Ablation baseline: both branches blended by scalar weights (1-p, p) at
/// every step instead of a Bernoulli selection.
inline double deterministic_interp_loss(const Batch& batch,
                                        const GaussianPolicyParams& policy,
                                        const AwrInputs& in, const HyperParams& hp,
                                        GaussPolicyGrads& grads,
                                        CriticScratch* scratch = nullptr) {
  if (batch.size() == 0) throw std::invalid_argument("deterministic_interp_loss: empty batch");
  grads.zero();
  double loss = 0.0;
  if (hp.p < 1.0)
    loss += awr_branch_loss(policy, batch.states, batch.actions, in.w_data, 1.0 - hp.p,
                            grads, scratch);
  if (hp.p > 0.0)
    loss += awr_branch_loss(policy, batch.states, in.policy_actions, in.w_pol, hp.p, grads,
                            scratch);
  return loss;
}

inline void gauss_adam_step(GaussianPolicyParams& policy, const GaussPolicyGrads& grads,
                            double lr, double beta1 = 0.9, double beta2 = 0.999,
                            double eps = 1e-8) {
  adam_step(policy.mean_net, grads.mean, lr, beta1, beta2, eps);
  if (!all_finite(grads.log_std)) throw NonFiniteError("non-finite gradient for log_std");
  policy.ls_step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(policy.ls_step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(policy.ls_step));
  for (std::size_t d = 0; d < policy.log_std.size(); ++d) {
    const double g = grads.log_std[d];
    policy.ls_m[d] = beta1 * policy.ls_m[d] + (1.0 - beta1) * g;
    policy.ls_v[d] = beta2 * policy.ls_v[d] + (1.0 - beta2) * g * g;
    policy.log_std[d] -=
        lr * (policy.ls_m[d] / bc1) / (std::sqrt(policy.ls_v[d] / bc2) + eps);
  }
  clamp_log_std(policy);
}

// ---------------------------------------------------------------------------
// Gate-identity checks: the stochastic loss agrees with the deterministic
// blend in expectation, and its extra gradient variance is exactly
// p(1-p) * ||grad_D - grad_pi||^2.
// ---------------------------------------------------------------------------

struct BranchGrads {
  std::vector<double> g_data, g_pol, g_det;
};

/// Freezes the AWR inputs with `rng`, then computes both branch gradients and
/// the deterministic blend, flattened over all policy parameters.
inline BranchGrads compute_branch_grads(const Batch& batch,
                                        const GaussianPolicyParams& policy,
                                        const CriticSet& critics, const HyperParams& hp,
                                        SplitMix64& rng) {
  AwrInputs in;
  prepare_awr_inputs(batch, policy, critics, hp, rng, in);
  GaussPolicyGrads g = make_policy_grads(policy);
  BranchGrads out;

  g.zero();
  awr_branch_loss(policy, batch.states, batch.actions, in.w_data, 1.0, g);
  flatten_grads(g, out.g_data);
  g.zero();
  awr_branch_loss(policy, batch.states, in.policy_actions, in.w_pol, 1.0, g);
  flatten_grads(g, out.g_pol);
  g.zero();
  deterministic_interp_loss(batch, policy, in, hp, g);
  flatten_grads(g, out.g_det);
  return out;
}

struct GateCheckResult {
  double lhs = 0.0;
  double rhs = 0.0;
  double rel_err = 0.0;
};

/// Mean of the gated gradient over n_draws Bernoulli realizations vs the
/// deterministic gradient. The realized per-draw gradient is exactly one
/// branch gradient (per-step gating), so the Monte-Carlo mean is accumulated
/// from the two precomputed branch vectors.
inline GateCheckResult expectation_consistency_check(const Batch& batch,
                                                     const GaussianPolicyParams& policy,
                                                     const CriticSet& critics,
                                                     const HyperParams& hp,
                                                     std::size_t n_draws, SplitMix64& rng) {
  const BranchGrads bg = compute_branch_grads(batch, policy, critics, hp, rng);
  std::size_t n_expand = 0;
  for (std::size_t k = 0; k < n_draws; ++k)
    if (rng.bernoulli(hp.p)) ++n_expand;
  const double f = static_cast<double>(n_expand) / static_cast<double>(n_draws);
  double diff2 = 0.0, det2 = 0.0;
  for (std::size_t j = 0; j < bg.g_det.size(); ++j) {
    const double mean_j = (1.0 - f) * bg.g_data[j] + f * bg.g_pol[j];
    const double d = mean_j - bg.g_det[j];
    diff2 += d * d;
    det2 += bg.g_det[j] * bg.g_det[j];
  }
  GateCheckResult r;
  r.lhs = std::sqrt(diff2);
  r.rhs = std::sqrt(det2);
  r.rel_err = r.rhs > 0.0 ? r.lhs / r.rhs : r.lhs;
  return r;
}

/// Monte-Carlo trace variance of the gated gradient vs the closed form
/// p(1-p) * ||grad_D - grad_pi||^2. The deterministic gradient is the exact
/// gate mean, so deviations are measured against it.
inline GateCheckResult variance_decomposition_check(const Batch& batch,
                                                    const GaussianPolicyParams& policy,
                                                    const CriticSet& critics,
                                                    const HyperParams& hp,
                                                    std::size_t n_draws, SplitMix64& rng) {
  const BranchGrads bg = compute_branch_grads(batch, policy, critics, hp, rng);
  double d_data = 0.0, d_pol = 0.0, branch_gap = 0.0;
  for (std::size_t j = 0; j < bg.g_det.size(); ++j) {
    const double dd = bg.g_data[j] - bg.g_det[j];
    const double dp = bg.g_pol[j] - bg.g_det[j];
    const double gap = bg.g_data[j] - bg.g_pol[j];
    d_data += dd * dd;
    d_pol += dp * dp;
    branch_gap += gap * gap;
  }
  std::size_t n_expand = 0;
  for (std::size_t k = 0; k < n_draws; ++k)
    if (rng.bernoulli(hp.p)) ++n_expand;
  const double f = static_cast<double>(n_expand) / static_cast<double>(n_draws);
  GateCheckResult r;
  r.lhs = (1.0 - f) * d_data + f * d_pol;
  r.rhs = hp.p * (1.0 - hp.p) * branch_gap;
  const double denom = std::max(std::fabs(r.rhs), 1e-300);
  r.rel_err = (r.lhs == r.rhs) ? 0.0 : std::fabs(r.lhs - r.rhs) / denom;
  return r;
}

}  // namespace isep
