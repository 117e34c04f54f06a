#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "isep/critic.hpp"
#include "isep/dataset.hpp"
#include "isep/policy_gauss.hpp"
#include "isep/rng.hpp"
#include "isep/tabular.hpp"

namespace isep {

inline constexpr const char* kTheoryHeader =
    "instance,seed,delta_tau,delta_sub,p_bound_min,violations";

/// Random tabular instances, each evaluated at its own p-bound with an
/// adversarial expansion probe; violations counts states whose iterates ever
/// exceed the optimal value beyond tolerance.
inline std::vector<TheoremInstanceResult> run_theorem_batch(std::size_t n_instances,
                                                            std::uint64_t base_seed,
                                                            double tau, std::size_t iters) {
  std::vector<TheoremInstanceResult> out;
  out.reserve(n_instances);
  for (std::size_t i = 0; i < n_instances; ++i)
    out.push_back(run_theorem_instance(base_seed + i, tau, iters));
  return out;
}

inline void save_theory_csv(const std::vector<TheoremInstanceResult>& rows,
                            const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << kTheoryHeader << '\n';
  char buf[200];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const TheoremInstanceResult& r = rows[i];
    const int n = std::snprintf(buf, sizeof buf, "%zu,%llu,%.17g,%.17g,%.17g,%zu\n", i,
                                static_cast<unsigned long long>(r.seed), r.delta_tau,
                                r.delta_sub, r.p_bound_min, r.violations);
    f.write(buf, n);
  }
}

// ---------------------------------------------------------------------------
// Gate-identity harness: a frozen small setup on which the stochastic-gate
// identities are measured. Everything is derived from `seed`, so the reported
// errors are reproducible bit for bit.
// ---------------------------------------------------------------------------

struct GateIdentityReport {
  GateCheckResult expectation;   // vs tolerance 2e-2 at 1e4 draws
  GateCheckResult variance;      // vs tolerance 5e-2 at 1e5 draws
  bool perstep_bitwise = false;  // realized per-step gradient equals one branch exactly
};

namespace theorydetail {

struct GateFixture {
  OfflineDataset ds;
  Batch batch;
  GaussianPolicyParams policy;
  CriticSet critics;
  HyperParams hp;
};

inline GateFixture make_gate_fixture(std::uint64_t seed) {
  GateFixture fx;
  fx.ds = generate_danger_dataset(256, seed);
  std::vector<std::size_t> idx(fx.ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  gather_batch(fx.ds, idx, fx.batch);
  SplitMix64 init_rng = SplitMix64::derive(seed, stream::kInit);
  fx.critics = make_critics(1, 2, 16, kBanditVMax, init_rng);
  fx.policy = make_gaussian_policy(1, 2, 16, init_rng);
  fx.hp.p = 0.3;
  fx.hp.beta = 0.1;
  fx.hp.batch_size = fx.batch.size();
  return fx;
}

inline bool grads_equal(const GaussPolicyGrads& a, const GaussPolicyGrads& b) {
  for (std::size_t l = 0; l < a.mean.weights.size(); ++l) {
    if (a.mean.weights[l].data != b.mean.weights[l].data) return false;
    if (a.mean.biases[l] != b.mean.biases[l]) return false;
  }
  return a.log_std == b.log_std;
}

}  // namespace theorydetail

inline GateIdentityReport run_gate_identity_checks(std::uint64_t seed,
                                                   std::size_t expectation_draws = 10000,
                                                   std::size_t variance_draws = 100000) {
  using theorydetail::make_gate_fixture;
  GateIdentityReport rep;
  {
    theorydetail::GateFixture fx = make_gate_fixture(seed);
    SplitMix64 rng = SplitMix64::derive(seed, stream::kTrain);
    rep.expectation = expectation_consistency_check(fx.batch, fx.policy, fx.critics, fx.hp,
                                                    expectation_draws, rng);
  }
  {
    theorydetail::GateFixture fx = make_gate_fixture(seed);
    SplitMix64 rng = SplitMix64::derive(seed, stream::kTrain);
    rep.variance =
        variance_decomposition_check(fx.batch, fx.policy, fx.critics, fx.hp, variance_draws,
                                     rng);
  }
  {
    theorydetail::GateFixture fx = make_gate_fixture(seed);
    SplitMix64 rng = SplitMix64::derive(seed, stream::kTrain);
    AwrInputs in;
    prepare_awr_inputs(fx.batch, fx.policy, fx.critics, fx.hp, rng, in);
    GaussPolicyGrads gated = make_policy_grads(fx.policy);
    GaussPolicyGrads branch = make_policy_grads(fx.policy);
    GateRealization gate;
    gate.mode = GateMode::PerStep;
    bool ok = true;
    for (int b = 0; b < 2; ++b) {
      gate.draws.assign(1, static_cast<std::uint8_t>(b));
      const double gl = gated_awr_loss(fx.batch, fx.policy, in, fx.hp, gate, gated);
      branch.zero();
      const double bl =
          b != 0
              ? awr_branch_loss(fx.policy, fx.batch.states, in.policy_actions, in.w_pol, 1.0,
                                branch)
              : awr_branch_loss(fx.policy, fx.batch.states, fx.batch.actions, in.w_data, 1.0,
                                branch);
      ok = ok && gl == bl && theorydetail::grads_equal(gated, branch);
    }
    rep.perstep_bitwise = ok;
  }
  return rep;
}

}  // namespace isep
