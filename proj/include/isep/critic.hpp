#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "isep/dataset.hpp"
#include "isep/hyperparams.hpp"
#include "isep/matrix.hpp"
#include "isep/mlp.hpp"
#include "isep/rng.hpp"

namespace isep {

/// Value net V, twin Q nets and their Polyak-tracked targets.
struct CriticSet {
  MlpParams v_net;
  std::array<MlpParams, 2> q_nets;
  std::array<MlpParams, 2> target_q_nets;
  double v_max = 0.0;

  std::size_t state_dim() const { return v_net.in_dim(); }
  std::size_t action_dim() const { return q_nets[0].in_dim() - v_net.in_dim(); }
};

inline CriticSet make_critics(std::size_t state_dim, std::size_t action_dim,
                              std::size_t hidden, double v_max, SplitMix64& rng) {
  CriticSet c;
  c.v_max = v_max;
  c.v_net = make_mlp({state_dim, hidden, hidden, 1}, Activation::Relu, rng);
  for (int i = 0; i < 2; ++i)
    c.q_nets[i] = make_mlp({state_dim + action_dim, hidden, hidden, 1}, Activation::Relu, rng);
  c.target_q_nets = c.q_nets;
  return c;
}

// ---------------------------------------------------------------------------
// Expectile machinery
// ---------------------------------------------------------------------------

/// |tau - [u<0]|: the asymmetric weight put on residual u.
inline double expectile_weight(double u, double tau) { return u < 0.0 ? 1.0 - tau : tau; }

inline double expectile_loss(double u, double tau) { return expectile_weight(u, tau) * u * u; }

/// Fixed point of the expectile regression step on a finite sample: solves
/// v = sum_i w_i(v) x_i / sum_i w_i(v) with w_i = |tau - [x_i < v]| by
/// iterating the weighted mean. At tau=0.5 all weights are equal, so one
/// iteration returns exactly the arithmetic mean.
inline double expectile_fixed_point(const std::vector<double>& xs, double tau,
                                    double tol = 1e-13, std::size_t max_iters = 1000) {
  if (xs.empty()) throw std::invalid_argument("expectile_fixed_point: empty sample");
  double v = 0.0;
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    double num = 0.0, den = 0.0;
    for (double x : xs) {
      const double w = expectile_weight(x - v, tau);
      num += w * x;
      den += w;
    }
    const double next = num / den;
    const double step = std::fabs(next - v);
    v = next;
    if (step <= tol * (1.0 + std::fabs(v))) break;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Q evaluation with twin-min and symmetric crop
// ---------------------------------------------------------------------------

inline void concat_sa(const Matrix2D& states, const Matrix2D& actions, Matrix2D& out) {
  const std::size_t b = states.rows, sd = states.cols, ad = actions.cols;
  out.resize(b, sd + ad);
  for (std::size_t i = 0; i < b; ++i) {
    double* r = out.row(i);
    const double* s = states.row(i);
    const double* a = actions.row(i);
    for (std::size_t j = 0; j < sd; ++j) r[j] = s[j];
    for (std::size_t j = 0; j < ad; ++j) r[sd + j] = a[j];
  }
}

/// min over the twins, clamped into [-v_max, v_max]. No gradients: callers use
/// this only for detached targets, weights and tokens.
inline void q_cropped_batch(const CriticSet& c, const Matrix2D& sa, bool use_target,
                            std::vector<double>& out) {
  const auto& nets = use_target ? c.target_q_nets : c.q_nets;
  ForwardTape t0, t1;
  mlp_forward(nets[0], sa, t0);
  mlp_forward(nets[1], sa, t1);
  const Matrix2D& q0 = t0.output();
  const Matrix2D& q1 = t1.output();
  out.resize(sa.rows);
  for (std::size_t i = 0; i < sa.rows; ++i) {
    const double q = std::min(q0(i, 0), q1(i, 0));
    out[i] = std::clamp(q, -c.v_max, c.v_max);
  }
}

inline double q_cropped(const CriticSet& c, const std::vector<double>& s,
                        const std::vector<double>& a, bool use_target) {
  Matrix2D sa(1, s.size() + a.size());
  for (std::size_t j = 0; j < s.size(); ++j) sa(0, j) = s[j];
  for (std::size_t j = 0; j < a.size(); ++j) sa(0, s.size() + j) = a[j];
  std::vector<double> out;
  q_cropped_batch(c, sa, use_target, out);
  return out[0];
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Reusable buffers for the per-step loss evaluations.
struct CriticScratch {
  ForwardTape v_tape;
  ForwardTape q_tapes[2];
  Matrix2D sa, sa_pol, grad_out, dz;
  std::vector<double> q_data, q_pol, v_next, target;
};

/// Interpolated value objective: (1-p) * expectile regression of V onto
/// dataset Q plus p * symmetric square against Q at policy-drawn actions.
/// Q is read through the cropped target twins; gradients reach only V.
/// Returns the loss; v_grads is overwritten.
inline double interpolated_value_loss(const Batch& batch, const Matrix2D& policy_samples,
                                      const CriticSet& critics, const HyperParams& hp,
                                      MlpGrads& v_grads, CriticScratch* scratch = nullptr) {
  const std::size_t b = batch.size();
  if (b == 0) throw std::invalid_argument("interpolated_value_loss: empty batch");
  CriticScratch local;
  CriticScratch& scr = scratch ? *scratch : local;

  concat_sa(batch.states, batch.actions, scr.sa);
  q_cropped_batch(critics, scr.sa, true, scr.q_data);
  const bool need_pol = hp.p > 0.0;
  if (need_pol) {
    concat_sa(batch.states, policy_samples, scr.sa_pol);
    q_cropped_batch(critics, scr.sa_pol, true, scr.q_pol);
  }

  mlp_forward(critics.v_net, batch.states, scr.v_tape);
  const Matrix2D& v = scr.v_tape.output();

  const double inv_b = 1.0 / static_cast<double>(b);
  double loss_data = 0.0, loss_pol = 0.0;
  scr.grad_out.resize(b, 1);
  for (std::size_t i = 0; i < b; ++i) {
    double g = 0.0;
    const double u = scr.q_data[i] - v(i, 0);
    const double wgt = expectile_weight(u, hp.tau);
    loss_data += wgt * u * u;
    g += (1.0 - hp.p) * wgt * 2.0 * u * (-1.0);
    if (need_pol) {
      const double e = scr.q_pol[i] - v(i, 0);
      loss_pol += e * e;
      g += hp.p * 2.0 * e * (-1.0);
    }
    scr.grad_out(i, 0) = g * inv_b;
  }
  const double loss = (1.0 - hp.p) * loss_data * inv_b + hp.p * loss_pol * inv_b;
  require_finite(loss, "interpolated value loss");

  v_grads.zero();
  mlp_backward(critics.v_net, scr.v_tape, scr.grad_out, v_grads, &scr.dz);
  return loss;
}

/// Bellman regression: both twins regress onto r + gamma * (1-done) * V(s'),
/// with V from the live value net and the target detached. Returns the loss
/// (mean over batch and twins); each entry of q_grads is overwritten.
inline double bellman_q_loss(const Batch& batch, const CriticSet& critics,
                             const HyperParams& hp, std::array<MlpGrads, 2>& q_grads,
                             CriticScratch* scratch = nullptr) {
  const std::size_t b = batch.size();
  if (b == 0) throw std::invalid_argument("bellman_q_loss: empty batch");
  CriticScratch local;
  CriticScratch& scr = scratch ? *scratch : local;

  mlp_forward(critics.v_net, batch.next_states, scr.v_tape);
  const Matrix2D& vn = scr.v_tape.output();
  scr.target.resize(b);
  for (std::size_t i = 0; i < b; ++i)
    scr.target[i] = batch.rewards[i] + hp.gamma * batch.not_done[i] * vn(i, 0);

  concat_sa(batch.states, batch.actions, scr.sa);
  const double inv_b = 1.0 / static_cast<double>(b);
  double loss = 0.0;
  for (int t = 0; t < 2; ++t) {
    mlp_forward(critics.q_nets[t], scr.sa, scr.q_tapes[t]);
    const Matrix2D& q = scr.q_tapes[t].output();
    scr.grad_out.resize(b, 1);
    for (std::size_t i = 0; i < b; ++i) {
      const double e = q(i, 0) - scr.target[i];
      loss += 0.5 * e * e * inv_b;
      scr.grad_out(i, 0) = e * inv_b;
    }
    q_grads[t].zero();
    mlp_backward(critics.q_nets[t], scr.q_tapes[t], scr.grad_out, q_grads[t], &scr.dz);
  }
  require_finite(loss, "bellman q loss");
  return loss;
}

// ---------------------------------------------------------------------------
// Advantage weights
// ---------------------------------------------------------------------------

/// omega(s,a) = min(exp(beta * (Q_target_cropped - V_live)), omega_max).
inline void advantage_weights(const CriticSet& critics, const Matrix2D& states,
                              const Matrix2D& actions, double beta, double omega_max,
                              std::vector<double>& out, CriticScratch* scratch = nullptr) {
  CriticScratch local;
  CriticScratch& scr = scratch ? *scratch : local;
  concat_sa(states, actions, scr.sa);
  q_cropped_batch(critics, scr.sa, true, scr.q_data);
  mlp_forward(critics.v_net, states, scr.v_tape);
  const Matrix2D& v = scr.v_tape.output();
  out.resize(states.rows);
  for (std::size_t i = 0; i < states.rows; ++i)
    out[i] = std::min(std::exp(beta * (scr.q_data[i] - v(i, 0))), omega_max);
}

inline double advantage_weight(const CriticSet& critics, const std::vector<double>& s,
                               const std::vector<double>& a, double beta, double omega_max) {
  Matrix2D states(1, s.size()), actions(1, a.size());
  states.data = s;
  actions.data = a;
  std::vector<double> out;
  advantage_weights(critics, states, actions, beta, omega_max, out);
  return out[0];
}

inline void polyak_update(CriticSet& critics, double rho) {
  for (int t = 0; t < 2; ++t) polyak_update(critics.target_q_nets[t], critics.q_nets[t], rho);
}

}  // namespace isep
