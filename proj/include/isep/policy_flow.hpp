#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "isep/critic.hpp"
#include "isep/dataset.hpp"
#include "isep/hyperparams.hpp"
#include "isep/matrix.hpp"
#include "isep/mlp.hpp"
#include "isep/policy_gauss.hpp"
#include "isep/rng.hpp"

namespace isep {

/// Conditioning token of the velocity field: nonnegative advantage, negative
/// advantage, or unconditioned (classifier-free branch).
enum class Token { Negative = 0, Positive = 1, Unconditioned = 2 };

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

/// Velocity-field network over [state | noisy action | time embedding |
/// token one-hot]. Hidden layers use Mish; the final layer starts at zero so
/// the initial field is identically zero.
struct FlowPolicyParams {
  MlpParams velocity_net;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
};

inline std::size_t flow_input_dim(std::size_t state_dim, std::size_t action_dim) {
  return state_dim + action_dim + 3 + 3;  // time embedding (t, sin, cos) + 3 tokens
}

inline FlowPolicyParams make_flow_policy(std::size_t state_dim, std::size_t action_dim,
                                         std::size_t hidden, SplitMix64& rng) {
  FlowPolicyParams p;
  p.state_dim = state_dim;
  p.action_dim = action_dim;
  p.velocity_net = make_mlp({flow_input_dim(state_dim, action_dim), hidden, hidden, action_dim},
                            Activation::Mish, rng, /*zero_final=*/true);
  return p;
}

inline void fill_flow_input_row(double* row, const double* s, std::size_t sd, const double* a,
                                std::size_t ad, double t, Token o) {
  std::size_t k = 0;
  for (std::size_t j = 0; j < sd; ++j) row[k++] = s[j];
  for (std::size_t j = 0; j < ad; ++j) row[k++] = a[j];
  row[k++] = t;
  row[k++] = std::sin(kTwoPi * t);
  row[k++] = std::cos(kTwoPi * t);
  row[k + 0] = 0.0;
  row[k + 1] = 0.0;
  row[k + 2] = 0.0;
  row[k + static_cast<int>(o)] = 1.0;
}

/// Linear interpolation pair: the point a^t = (1-t) a0 + t a and the
/// regression target a - a0.
inline void fm_pair(const double* a, const double* a0, double t, std::size_t ad, double* a_t,
                    double* target_v) {
  for (std::size_t d = 0; d < ad; ++d) {
    a_t[d] = (1.0 - t) * a0[d] + t * a[d];
    target_v[d] = a[d] - a0[d];
  }
}

// ---------------------------------------------------------------------------
// Optimality tokens
// ---------------------------------------------------------------------------

/// With probability token_dropout: unconditioned. Otherwise Positive iff the
/// cropped target-twin advantage Q(s,a) - V(s) is >= 0.
inline Token assign_token(double advantage, double token_dropout, SplitMix64& rng) {
  if (rng.bernoulli(token_dropout)) return Token::Unconditioned;
  return advantage >= 0.0 ? Token::Positive : Token::Negative;
}

inline Token assign_token(const CriticSet& critics, const std::vector<double>& s,
                          const std::vector<double>& a, double token_dropout,
                          SplitMix64& rng) {
  const double q = q_cropped(critics, s, a, true);
  const double v = mlp_apply_vec(critics.v_net, s)[0];
  return assign_token(q - v, token_dropout, rng);
}

/// One token per row; consumes exactly one dropout draw per row.
inline void assign_tokens(const CriticSet& critics, const Matrix2D& states,
                          const Matrix2D& actions, double token_dropout, SplitMix64& rng,
                          std::vector<Token>& out, CriticScratch* scratch = nullptr) {
  CriticScratch local;
  CriticScratch& scr = scratch ? *scratch : local;
  concat_sa(states, actions, scr.sa);
  q_cropped_batch(critics, scr.sa, true, scr.q_data);
  mlp_forward(critics.v_net, states, scr.v_tape);
  const Matrix2D& v = scr.v_tape.output();
  out.resize(states.rows);
  for (std::size_t i = 0; i < states.rows; ++i)
    out[i] = assign_token(scr.q_data[i] - v(i, 0), token_dropout, rng);
}

// ---------------------------------------------------------------------------
// Guided sampling
// ---------------------------------------------------------------------------

struct FlowScratch {
  Matrix2D x0, x1, a;
  ForwardTape tape0, tape1;
  Matrix2D grad_out, dz;
};

/// (1-w) * v(unconditioned) + w * v(cond_token) over a batch of rows sharing
/// one time t. w=0 and w=1 evaluate only the branch they need, so those cases
/// are exact single-network identities.
inline void cfg_velocity_batch(const FlowPolicyParams& flow, const Matrix2D& states,
                               const Matrix2D& actions, double t, double w, Matrix2D& out,
                               FlowScratch& scr, Token cond_token = Token::Positive) {
  const std::size_t b = states.rows;
  const std::size_t sd = flow.state_dim, ad = flow.action_dim;
  const std::size_t in_dim = flow_input_dim(sd, ad);
  const bool need_uncond = w != 1.0;
  const bool need_cond = w != 0.0;
  if (need_uncond) {
    scr.x0.resize(b, in_dim);
    for (std::size_t i = 0; i < b; ++i)
      fill_flow_input_row(scr.x0.row(i), states.row(i), sd, actions.row(i), ad, t,
                          Token::Unconditioned);
    mlp_forward(flow.velocity_net, scr.x0, scr.tape0);
  }
  if (need_cond) {
    scr.x1.resize(b, in_dim);
    for (std::size_t i = 0; i < b; ++i)
      fill_flow_input_row(scr.x1.row(i), states.row(i), sd, actions.row(i), ad, t, cond_token);
    mlp_forward(flow.velocity_net, scr.x1, scr.tape1);
  }
  out.resize(b, ad);
  if (!need_cond) {
    out.data = scr.tape0.output().data;
  } else if (!need_uncond) {
    out.data = scr.tape1.output().data;
  } else {
    const Matrix2D& v0 = scr.tape0.output();
    const Matrix2D& v1 = scr.tape1.output();
    for (std::size_t i = 0; i < out.size(); ++i)
      out.data[i] = (1.0 - w) * v0.data[i] + w * v1.data[i];
  }
}

inline std::vector<double> cfg_guided_velocity(const FlowPolicyParams& flow,
                                               const std::vector<double>& a_t, double t,
                                               const std::vector<double>& s, double w,
                                               Token cond_token = Token::Positive) {
  Matrix2D states(1, s.size()), actions(1, a_t.size());
  states.data = s;
  actions.data = a_t;
  Matrix2D out;
  FlowScratch scr;
  cfg_velocity_batch(flow, states, actions, t, w, out, scr, cond_token);
  return out.data;
}

/// Euler integration of the guided velocity from a0 ~ N(0,I): one action per
/// state row. Deterministic under the rng state; no clamping here (evaluation
/// clamps to the action box itself).
inline void sample_flow_actions(const FlowPolicyParams& flow, const Matrix2D& states,
                                double w, std::size_t flow_steps, SplitMix64& rng,
                                Matrix2D& out, FlowScratch* scratch = nullptr,
                                Token cond_token = Token::Positive) {
  FlowScratch local;
  FlowScratch& scr = scratch ? *scratch : local;
  const std::size_t b = states.rows, ad = flow.action_dim;
  scr.a.resize(b, ad);
  for (std::size_t i = 0; i < b * ad; ++i) scr.a.data[i] = rng.normal();
  Matrix2D v;
  const double dt = 1.0 / static_cast<double>(flow_steps);
  for (std::size_t k = 0; k < flow_steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    cfg_velocity_batch(flow, states, scr.a, t, w, v, scr, cond_token);
    for (std::size_t i = 0; i < b * ad; ++i) scr.a.data[i] += dt * v.data[i];
  }
  out = scr.a;
}

inline std::vector<double> sample_flow_action(const FlowPolicyParams& flow,
                                              const std::vector<double>& s, double w,
                                              std::size_t flow_steps, SplitMix64& rng) {
  Matrix2D states(1, s.size());
  states.data = s;
  Matrix2D out;
  sample_flow_actions(flow, states, w, flow_steps, rng, out);
  return out.data;
}

// ---------------------------------------------------------------------------
// Flow-matching loss
// ---------------------------------------------------------------------------

/// One branch's frozen regression problem: velocity-net input rows and the
/// matching targets a - a0.
struct FmBranchInputs {
  Matrix2D x;
  Matrix2D target;
};

/// Per-element construction shared by both branches: fresh a0 ~ N(0,I),
/// fresh t ~ U[0,1], token from the element's advantage (draw order per
/// element: a0 dims, then t, then the dropout draw).
inline void prepare_fm_branch(const Matrix2D& states, const Matrix2D& actions,
                              const FlowPolicyParams& flow, const CriticSet& critics,
                              const HyperParams& hp, SplitMix64& rng, FmBranchInputs& out,
                              CriticScratch* scratch = nullptr) {
  const std::size_t b = states.rows;
  const std::size_t sd = flow.state_dim, ad = flow.action_dim;
  CriticScratch local;
  CriticScratch& scr = scratch ? *scratch : local;
  concat_sa(states, actions, scr.sa);
  q_cropped_batch(critics, scr.sa, true, scr.q_data);
  mlp_forward(critics.v_net, states, scr.v_tape);
  const Matrix2D& v = scr.v_tape.output();

  out.x.resize(b, flow_input_dim(sd, ad));
  out.target.resize(b, ad);
  std::vector<double> a0(ad), a_t(ad);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t d = 0; d < ad; ++d) a0[d] = rng.normal();
    const double t = rng.next_double();
    const Token o = assign_token(scr.q_data[i] - v(i, 0), hp.token_dropout, rng);
    fm_pair(actions.row(i), a0.data(), t, ad, a_t.data(), out.target.row(i));
    fill_flow_input_row(out.x.row(i), states.row(i), sd, a_t.data(), ad, t, o);
  }
}

inline void prepare_fm_data_inputs(const Batch& batch, const FlowPolicyParams& flow,
                                   const CriticSet& critics, const HyperParams& hp,
                                   SplitMix64& rng, FmBranchInputs& out,
                                   CriticScratch* scratch = nullptr) {
  prepare_fm_branch(batch.states, batch.actions, flow, critics, hp, rng, out, scratch);
}

/// Expansion branch: actions are the policy's own guided samples at the batch
/// states (gradient-detached), then the same per-element construction.
inline void prepare_fm_expansion_inputs(const Batch& batch, const FlowPolicyParams& flow,
                                        const CriticSet& critics, const HyperParams& hp,
                                        double expand_w, SplitMix64& rng, FmBranchInputs& out,
                                        Matrix2D& sampled_actions,
                                        CriticScratch* scratch = nullptr,
                                        FlowScratch* flow_scratch = nullptr) {
  sample_flow_actions(flow, batch.states, expand_w, hp.flow_steps, rng, sampled_actions,
                      flow_scratch);
  prepare_fm_branch(batch.states, sampled_actions, flow, critics, hp, rng, out, scratch);
}

/// scale * mean_i ||v(x_i) - target_i||^2, gradients accumulated. row_scale,
/// when given, multiplies element i's contribution (used by per-element
/// gating).
inline double fm_branch_loss(const FlowPolicyParams& flow, const FmBranchInputs& in,
                             double scale, MlpGrads& grads,
                             const std::vector<double>* row_scale = nullptr,
                             FlowScratch* scratch = nullptr) {
  const std::size_t b = in.x.rows, ad = flow.action_dim;
  FlowScratch local;
  FlowScratch& scr = scratch ? *scratch : local;
  mlp_forward(flow.velocity_net, in.x, scr.tape0);
  const Matrix2D& v = scr.tape0.output();
  const double inv_b = 1.0 / static_cast<double>(b);
  double loss = 0.0;
  scr.grad_out.resize(b, ad);
  for (std::size_t i = 0; i < b; ++i) {
    const double rs = row_scale ? (*row_scale)[i] : 1.0;
    for (std::size_t d = 0; d < ad; ++d) {
      const double e = v(i, d) - in.target(i, d);
      loss += rs * e * e * inv_b;
      scr.grad_out(i, d) = scale * rs * 2.0 * e * inv_b;
    }
  }
  mlp_backward(flow.velocity_net, scr.tape0, scr.grad_out, grads, &scr.dz);
  require_finite(loss, "flow-matching loss");
  return scale * loss;
}

/// Bernoulli-gated flow-matching loss. PerStep: the realized draw selects
/// dataset regression (B=0) or self-consistency on the policy's own samples
/// (B=1); only the selected branch's inputs are touched. PerElement applies
/// the draws inside the mean. Returns the loss; grads is overwritten.
inline double gated_fm_loss(const FlowPolicyParams& flow, const FmBranchInputs& data_in,
                            const FmBranchInputs* pol_in, const GateRealization& gate,
                            MlpGrads& grads, FlowScratch* scratch = nullptr) {
  grads.zero();
  if (gate.mode == GateMode::PerStep) {
    const bool expand = gate.draws.at(0) != 0;
    if (!expand) return fm_branch_loss(flow, data_in, 1.0, grads, nullptr, scratch);
    if (!pol_in) throw std::invalid_argument("gated_fm_loss: expansion branch not prepared");
    return fm_branch_loss(flow, *pol_in, 1.0, grads, nullptr, scratch);
  }
  const std::size_t b = gate.draws.size();
  std::vector<double> wd(b), wp(b);
  bool any_data = false, any_pol = false;
  for (std::size_t i = 0; i < b; ++i) {
    const bool expand = gate.draws.at(i) != 0;
    wd[i] = expand ? 0.0 : 1.0;
    wp[i] = expand ? 1.0 : 0.0;
    (expand ? any_pol : any_data) = true;
  }
  // A branch no row selected contributes exactly zero, so it is skipped; its
  // inputs may then legitimately be left unprepared.
  double loss = 0.0;
  if (any_data) loss += fm_branch_loss(flow, data_in, 1.0, grads, &wd, scratch);
  if (any_pol) {
    if (!pol_in) throw std::invalid_argument("gated_fm_loss: expansion branch not prepared");
    loss += fm_branch_loss(flow, *pol_in, 1.0, grads, &wp, scratch);
  }
  return loss;
}

/// Ablation baseline: scalar blend (1-p, p) of the two branches every step.
inline double deterministic_fm_loss(const FlowPolicyParams& flow,
                                    const FmBranchInputs& data_in,
                                    const FmBranchInputs& pol_in, double p, MlpGrads& grads,
                                    FlowScratch* scratch = nullptr) {
  grads.zero();
  double loss = 0.0;
  if (p < 1.0) loss += fm_branch_loss(flow, data_in, 1.0 - p, grads, nullptr, scratch);
  if (p > 0.0) loss += fm_branch_loss(flow, pol_in, p, grads, nullptr, scratch);
  return loss;
}

}  // namespace isep
