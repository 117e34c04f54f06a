#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace isep {

enum class EnvId { DangerBandit, MultimodalBandit, TabularChain };

inline std::string env_name(EnvId id) {
  switch (id) {
    case EnvId::DangerBandit: return "danger_bandit";
    case EnvId::MultimodalBandit: return "multimodal_bandit";
    case EnvId::TabularChain: return "tabular_chain";
  }
  return "?";
}

inline EnvId parse_env(const std::string& name) {
  if (name == "danger_bandit") return EnvId::DangerBandit;
  if (name == "multimodal_bandit") return EnvId::MultimodalBandit;
  if (name == "tabular_chain") return EnvId::TabularChain;
  throw std::invalid_argument("unknown env '" + name +
                              "' (expected danger_bandit, multimodal_bandit or tabular_chain)");
}

// ---------------------------------------------------------------------------
// Both bandits are single-step problems over 2-D actions. The observed state
// is the constant [0]; an episode is one action, one reward, done.
//
// Danger bandit: smooth quadratic bowl peaking at (2,2) with reward 100,
// and a hard -1000 circle of radius 1 around (4,4) just outside the data
// support. Dataset actions are uniform on the box [-2,2]^2.
//
// Multimodal bandit: two reward islands of radius 1 (peak 100 at (2,2),
// peak 40 at (-2,-2)) over a -5 background. Dataset actions are drawn inside
// the islands, 90% in the suboptimal one.
// ---------------------------------------------------------------------------

/// Parameters of one 2-D reward landscape.
struct RewardField {
  EnvId env_id = EnvId::DangerBandit;
  double opt_cx = 2.0, opt_cy = 2.0;       // optimum / optimal island center
  double opt_peak = 100.0;
  double subopt_cx = -2.0, subopt_cy = -2.0;
  double subopt_peak = 40.0;
  double island_radius = 1.0;
  double danger_cx = 4.0, danger_cy = 4.0;
  double danger_radius = 1.0;
  double danger_reward = -1000.0;
  double background = -5.0;
};

inline double danger_bandit_reward(double x, double y) {
  const double dx = x - 4.0, dy = y - 4.0;
  if (dx * dx + dy * dy <= 1.0) return -1000.0;
  const double ex = x - 2.0, ey = y - 2.0;
  return -10.0 * (ex * ex + ey * ey) + 100.0;
}

inline double multimodal_bandit_reward(double x, double y) {
  const double ox = x - 2.0, oy = y - 2.0;
  const double d2_opt = ox * ox + oy * oy;
  if (d2_opt <= 1.0) return 100.0 * (1.0 - d2_opt);
  const double sx = x + 2.0, sy = y + 2.0;
  const double d2_sub = sx * sx + sy * sy;
  if (d2_sub <= 1.0) return 40.0 * (1.0 - d2_sub);
  return -5.0;
}

inline double bandit_reward(EnvId id, double x, double y) {
  switch (id) {
    case EnvId::DangerBandit: return danger_bandit_reward(x, y);
    case EnvId::MultimodalBandit: return multimodal_bandit_reward(x, y);
    case EnvId::TabularChain: break;
  }
  throw std::invalid_argument("bandit_reward: not a 2-D bandit env");
}

inline RewardField reward_field(EnvId id) {
  RewardField f;
  f.env_id = id;
  return f;
}

// Region membership used by evaluation metrics.

inline bool in_danger_zone(double x, double y) {
  const double dx = x - 4.0, dy = y - 4.0;
  return dx * dx + dy * dy <= 1.0;
}

inline bool in_opt_island(double x, double y) {
  const double dx = x - 2.0, dy = y - 2.0;
  return dx * dx + dy * dy <= 1.0;
}

inline bool in_subopt_island(double x, double y) {
  const double dx = x + 2.0, dy = y + 2.0;
  return dx * dx + dy * dy <= 1.0;
}

inline bool in_background(double x, double y) {
  return !in_opt_island(x, y) && !in_subopt_island(x, y);
}

/// Largest reward magnitude over the ordinary (non-danger) landscape; both
/// bandits peak at 100. The -1000 danger override is a failure signal, not a
/// value the critics should track, so the cap derives from the peak.
inline constexpr double kBanditRMax = 100.0;

/// Bandits are single-step (gamma never enters), so the value cap is 2*R_max.
inline constexpr double kBanditVMax = 2.0 * kBanditRMax;

/// Action box the environment accepts. Wider than the data support on purpose:
/// the danger circle at (4,4) must be reachable by a straying policy.
inline constexpr double kActionBox = 10.0;

/// Encoding of the bandits' single state. Must be nonzero: the value nets use
/// ReLU hidden layers with zero-initialized biases, and a constant-zero input
/// freezes every hidden unit (zero activations and zero gradients), collapsing
/// V to its final-layer bias — which under Adam can only move by about one
/// learning rate per step regardless of how large the value error is.
inline constexpr double kBanditStateValue = 1.0;

inline double clamp_to_action_box(double v) {
  if (v < -kActionBox) return -kActionBox;
  if (v > kActionBox) return kActionBox;
  return v;
}

}  // namespace isep
