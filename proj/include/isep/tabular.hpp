#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "isep/matrix.hpp"
#include "isep/rng.hpp"

namespace isep {

/// Finite MDP with a per-state mask of dataset-supported actions.
struct TabularMDP {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  Matrix2D rewards;                    // (s, a)
  std::vector<double> transitions;     // P(s' | s, a), flattened (s, a, s')
  std::vector<std::uint8_t> support;   // (s, a) flattened; 1 = in dataset
  double gamma = 0.99;
  double r_max = 0.0;

  double p(std::size_t s, std::size_t a, std::size_t s2) const {
    return transitions[(s * n_actions + a) * n_states + s2];
  }
  bool supported(std::size_t s, std::size_t a) const { return support[s * n_actions + a] != 0; }
  double v_max() const { return 2.0 * r_max / (1.0 - gamma); }
};

struct OptimalValues {
  std::vector<double> v_star;
  Matrix2D q_star;  // (s, a)
};

/// Value iteration to sup-norm accuracy tol (contraction-mapping stopping
/// rule), then one Bellman backup for Q*.
inline OptimalValues optimal_values(const TabularMDP& mdp, double tol = 1e-12) {
  if (mdp.gamma >= 1.0) throw std::invalid_argument("optimal_values: gamma must be < 1");
  const std::size_t S = mdp.n_states, A = mdp.n_actions;
  std::vector<double> v(S, 0.0), next(S, 0.0);
  const double stop =
      mdp.gamma > 0.0 ? tol * (1.0 - mdp.gamma) / mdp.gamma : tol;
  for (std::size_t iter = 0; iter < 1000000; ++iter) {
    double change = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      double best = -1e300;
      for (std::size_t a = 0; a < A; ++a) {
        double q = mdp.rewards(s, a);
        for (std::size_t s2 = 0; s2 < S; ++s2) q += mdp.gamma * mdp.p(s, a, s2) * v[s2];
        best = std::max(best, q);
      }
      next[s] = best;
      change = std::max(change, std::fabs(best - v[s]));
    }
    v.swap(next);
    if (change <= stop) break;
  }
  OptimalValues out;
  out.v_star = v;
  out.q_star.resize(S, A);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a) {
      double q = mdp.rewards(s, a);
      for (std::size_t s2 = 0; s2 < S; ++s2) q += mdp.gamma * mdp.p(s, a, s2) * v[s2];
      out.q_star(s, a) = q;
    }
  return out;
}

/// Stationarity residual of the asymmetric squared objective at v: half the
/// negated derivative, tau * sum(x-v)+ - (1-tau) * sum(v-x)+. Strictly
/// decreasing in v, zero exactly at the expectile.
inline double expectile_gradient_residual(const std::vector<double>& xs, double tau,
                                          double v) {
  double pos = 0.0, neg = 0.0;
  for (double x : xs) {
    if (x >= v)
      pos += x - v;
    else
      neg += v - x;
  }
  return tau * pos - (1.0 - tau) * neg;
}

/// Brute-force tau-expectile of a finite sample: bisection on the sign of the
/// objective's derivative over the sample range. Independent of the critic's
/// fixed-point method on purpose; the two must agree. Bisection is used
/// rather than searching on loss values because the loss is flat to machine
/// precision within ~sqrt(eps) of the minimizer, while the derivative's sign
/// stays resolvable all the way down.
inline double expectile_of(const std::vector<double>& xs, double tau) {
  if (xs.empty()) throw std::invalid_argument("expectile_of: empty sample");
  double lo = xs[0], hi = xs[0];
  for (double x : xs) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (lo == hi) return xs[0];
  for (int it = 0; it < 200 && lo < hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (expectile_gradient_residual(xs, tau, mid) > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

/// Measured safety-bound ingredients of one MDP instance.
struct TheoryParams {
  double delta_tau = 0.0;  // min-state gap: supported max vs supported tau-expectile
  double delta_sub = 0.0;  // min-state gap: overall max vs supported max
  double eta = 1.0;
  double v_max = 0.0;
  std::vector<double> v_star;
};

inline TheoryParams measure_gaps(const TabularMDP& mdp, const Matrix2D& q_star, double tau) {
  const std::size_t S = mdp.n_states, A = mdp.n_actions;
  TheoryParams tp;
  tp.v_max = mdp.v_max();
  tp.delta_tau = 1e300;
  tp.delta_sub = 1e300;
  tp.v_star.resize(S);
  std::vector<double> sup_q;
  for (std::size_t s = 0; s < S; ++s) {
    sup_q.clear();
    double max_all = -1e300, max_sup = -1e300;
    for (std::size_t a = 0; a < A; ++a) {
      max_all = std::max(max_all, q_star(s, a));
      if (mdp.supported(s, a)) {
        sup_q.push_back(q_star(s, a));
        max_sup = std::max(max_sup, q_star(s, a));
      }
    }
    if (sup_q.empty()) throw std::invalid_argument("measure_gaps: state with empty support");
    tp.v_star[s] = max_all;
    tp.delta_tau = std::min(tp.delta_tau, max_sup - expectile_of(sup_q, tau));
    tp.delta_sub = std::min(tp.delta_sub, max_all - max_sup);
  }
  tp.delta_tau = std::max(tp.delta_tau, 0.0);
  tp.delta_sub = std::max(tp.delta_sub, 0.0);
  return tp;
}

/// Safe expansion budget at one state:
/// (delta_tau + delta_sub) / (v_max - V*(s) + delta_tau + delta_sub).
inline double p_bound(const TheoryParams& tp, std::size_t state) {
  const double d = tp.delta_tau + tp.delta_sub;
  const double denom = tp.v_max - tp.v_star[state] + d;
  if (tp.v_max <= tp.v_star[state]) return 1.0;
  return std::clamp(d / denom, 0.0, 1.0);
}

inline double p_bound_min(const TheoryParams& tp) {
  double b = 1.0;
  for (std::size_t s = 0; s < tp.v_star.size(); ++s) b = std::min(b, p_bound(tp, s));
  return b;
}

/// Interpolated tabular value iteration under Q-cropping:
///   V_{k+1}(s) = (1-p) * expectile_tau(supported Q_k) + p * E_probe[Q_k],
/// with Q_k(s,a) = clamp(r + gamma * E[V_k], +-v_max). pi_probe = nullptr
/// runs the adversarial probe: all mass on the argmax of cropped Q_k over
/// every action, supported or not, recomputed at each iteration.
///
/// V_0 defaults to -r_max/(1-gamma), a guaranteed lower bound on V* (a zero
/// start is not below V* when rewards can be negative, and the monotone
/// argument needs V_0 <= V*).
struct IsepViTrace {
  std::vector<std::vector<double>> v;  // v[k][s], k = 0..iters
};

inline IsepViTrace tabular_isep_vi(const TabularMDP& mdp, double tau, double p,
                                   const Matrix2D* pi_probe, std::size_t iters,
                                   double v_init = std::numeric_limits<double>::quiet_NaN()) {
  const std::size_t S = mdp.n_states, A = mdp.n_actions;
  const double vmax = mdp.v_max();
  const double v0 = std::isnan(v_init) ? -mdp.r_max / (1.0 - mdp.gamma) : v_init;
  IsepViTrace trace;
  trace.v.reserve(iters + 1);
  std::vector<double> v(S, v0);
  trace.v.push_back(v);
  Matrix2D q(S, A);
  std::vector<double> sup_q;
  for (std::size_t k = 0; k < iters; ++k) {
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t a = 0; a < A; ++a) {
        double backup = mdp.rewards(s, a);
        for (std::size_t s2 = 0; s2 < S; ++s2)
          backup += mdp.gamma * mdp.p(s, a, s2) * v[s2];
        q(s, a) = std::clamp(backup, -vmax, vmax);
      }
    std::vector<double> next(S);
    for (std::size_t s = 0; s < S; ++s) {
      sup_q.clear();
      for (std::size_t a = 0; a < A; ++a)
        if (mdp.supported(s, a)) sup_q.push_back(q(s, a));
      const double data_term = expectile_of(sup_q, tau);
      double pol_term;
      if (pi_probe == nullptr) {
        pol_term = -1e300;
        for (std::size_t a = 0; a < A; ++a) pol_term = std::max(pol_term, q(s, a));
      } else {
        pol_term = 0.0;
        for (std::size_t a = 0; a < A; ++a) pol_term += (*pi_probe)(s, a) * q(s, a);
      }
      next[s] = (1.0 - p) * data_term + p * pol_term;
    }
    v.swap(next);
    trace.v.push_back(v);
  }
  return trace;
}

/// Random instance: 4-8 states, 3-6 actions, rewards uniform in [-1,1],
/// dense random transition rows. After solving for Q*, the argmax action of
/// each state is hidden from the support with probability 1/2.
inline TabularMDP random_mdp(SplitMix64& rng, double gamma = 0.99) {
  TabularMDP mdp;
  mdp.n_states = 4 + rng.uniform_index(5);
  mdp.n_actions = 3 + rng.uniform_index(4);
  mdp.gamma = gamma;
  const std::size_t S = mdp.n_states, A = mdp.n_actions;
  mdp.rewards.resize(S, A);
  mdp.r_max = 0.0;
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a) {
      mdp.rewards(s, a) = rng.uniform(-1.0, 1.0);
      mdp.r_max = std::max(mdp.r_max, std::fabs(mdp.rewards(s, a)));
    }
  mdp.transitions.resize(S * A * S);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a) {
      double total = 0.0;
      for (std::size_t s2 = 0; s2 < S; ++s2) {
        const double u = rng.next_double() + 1e-3;
        mdp.transitions[(s * A + a) * S + s2] = u;
        total += u;
      }
      for (std::size_t s2 = 0; s2 < S; ++s2) mdp.transitions[(s * A + a) * S + s2] /= total;
    }
  mdp.support.assign(S * A, 1);
  const OptimalValues opt = optimal_values(mdp);
  for (std::size_t s = 0; s < S; ++s) {
    std::size_t argmax = 0;
    for (std::size_t a = 1; a < A; ++a)
      if (opt.q_star(s, a) > opt.q_star(s, argmax)) argmax = a;
    if (rng.bernoulli(0.5)) mdp.support[s * A + argmax] = 0;
  }
  return mdp;
}

/// One full safety-bound verification: draw instances under (seed, attempt)
/// until both measured gaps are positive, run the interpolated VI at the
/// bound with the adversarial probe, and count states/iterations where the
/// trace exceeds V* by more than 1e-9.
struct TheoremInstanceResult {
  std::uint64_t seed = 0;       // accepted derivation seed (seed, attempt)
  std::uint64_t attempt = 0;
  double delta_tau = 0.0;
  double delta_sub = 0.0;
  double p_bound_min = 0.0;
  std::size_t violations = 0;
};

inline TheoremInstanceResult run_theorem_instance(std::uint64_t seed, double tau,
                                                  std::size_t iters, double gamma = 0.99) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    SplitMix64 rng = SplitMix64::derive(seed, attempt);
    const TabularMDP mdp = random_mdp(rng, gamma);
    const OptimalValues opt = optimal_values(mdp);
    const TheoryParams tp = measure_gaps(mdp, opt.q_star, tau);
    if (tp.delta_tau <= 0.0 || tp.delta_sub <= 0.0) continue;
    TheoremInstanceResult r;
    r.seed = seed;
    r.attempt = attempt;
    r.delta_tau = tp.delta_tau;
    r.delta_sub = tp.delta_sub;
    r.p_bound_min = p_bound_min(tp);
    const IsepViTrace trace = tabular_isep_vi(mdp, tau, r.p_bound_min, nullptr, iters);
    for (const auto& vk : trace.v)
      for (std::size_t s = 0; s < mdp.n_states; ++s)
        if (vk[s] > opt.v_star[s] + 1e-9) ++r.violations;
    return r;
  }
}

}  // namespace isep
