#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace isep {

/// Scalar knobs of the interpolated value loss, the gated policy losses, the
/// guided sampler and the optimizer loop.
struct HyperParams {
  double p = 0.5;        // expansion weight / gate probability, in [0,1]
  double tau = 0.7;      // expectile level, in (0,1)
  double beta = 1.0;     // advantage temperature, >= 0
  double w = 1.0;        // guidance weight at sampling time, >= 0
  double gamma = 0.99;   // discount, in [0,1)
  double rho = 0.995;    // Polyak coefficient for target tracking, in (0,1)
  double lr_v = 3e-4;
  double lr_q = 3e-4;
  double lr_pi = 3e-4;
  std::size_t batch_size = 256;
  double omega_max = 100.0;     // advantage-weight clip, > 0
  std::size_t flow_steps = 10;  // Euler steps when integrating the velocity field
  double token_dropout = 0.10;  // probability of the unconditioned token
};

inline void check_range(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("hyperparameter out of range: " + what);
}

inline void validate(const HyperParams& hp) {
  check_range(hp.p >= 0.0 && hp.p <= 1.0, "p must be in [0,1]");
  check_range(hp.tau > 0.0 && hp.tau < 1.0, "tau must be in (0,1)");
  check_range(hp.beta >= 0.0, "beta must be >= 0");
  check_range(hp.w >= 0.0, "w must be >= 0");
  check_range(hp.gamma >= 0.0 && hp.gamma < 1.0, "gamma must be in [0,1)");
  check_range(hp.rho > 0.0 && hp.rho < 1.0, "rho must be in (0,1)");
  check_range(hp.lr_v >= 0.0, "lr_v must be >= 0");
  check_range(hp.lr_q >= 0.0, "lr_q must be >= 0");
  check_range(hp.lr_pi >= 0.0, "lr_pi must be >= 0");
  check_range(hp.batch_size >= 1, "batch_size must be >= 1");
  check_range(hp.omega_max > 0.0, "omega_max must be > 0");
  check_range(hp.flow_steps >= 1, "flow_steps must be >= 1");
  check_range(hp.token_dropout >= 0.0 && hp.token_dropout <= 1.0,
              "token_dropout must be in [0,1]");
}

}  // namespace isep
