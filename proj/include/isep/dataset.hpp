#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "isep/bandit.hpp"
#include "isep/matrix.hpp"
#include "isep/rng.hpp"

namespace isep {

struct Transition {
  std::vector<double> state;
  std::vector<double> action;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;
};

struct OfflineDataset {
  std::vector<Transition> transitions;
  EnvId env_id = EnvId::DangerBandit;
  std::uint64_t rng_seed = 0;

  std::size_t size() const { return transitions.size(); }
  std::size_t state_dim() const { return transitions.front().state.size(); }
  std::size_t action_dim() const { return transitions.front().action.size(); }
};

inline Transition make_bandit_transition(EnvId env, double x, double y) {
  Transition t;
  t.state = {kBanditStateValue};
  t.action = {x, y};
  t.reward = bandit_reward(env, x, y);
  t.next_state = {kBanditStateValue};
  t.done = true;
  return t;
}

/// n actions uniform on [-2,2]^2, scored by the danger-bandit field.
inline OfflineDataset generate_danger_dataset(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("generate_danger_dataset: n must be >= 1");
  OfflineDataset ds;
  ds.env_id = EnvId::DangerBandit;
  ds.rng_seed = seed;
  ds.transitions.reserve(n);
  SplitMix64 rng = SplitMix64::derive(seed, stream::kDataset);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(-2.0, 2.0);
    const double y = rng.uniform(-2.0, 2.0);
    ds.transitions.push_back(make_bandit_transition(EnvId::DangerBandit, x, y));
  }
  return ds;
}

/// floor(0.9 n) actions uniform in the suboptimal island, the rest uniform in
/// the optimal island. The suboptimal block comes first in draw order.
inline OfflineDataset generate_multimodal_dataset(std::size_t n, std::uint64_t seed) {
  if (n < 10) throw std::invalid_argument("generate_multimodal_dataset: n must be >= 10");
  OfflineDataset ds;
  ds.env_id = EnvId::MultimodalBandit;
  ds.rng_seed = seed;
  ds.transitions.reserve(n);
  SplitMix64 rng = SplitMix64::derive(seed, stream::kDataset);
  const std::size_t n_sub = static_cast<std::size_t>(0.9 * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double x, y;
    if (i < n_sub)
      rng.in_disk(-2.0, -2.0, 1.0, x, y);
    else
      rng.in_disk(2.0, 2.0, 1.0, x, y);
    ds.transitions.push_back(make_bandit_transition(EnvId::MultimodalBandit, x, y));
  }
  return ds;
}

inline OfflineDataset generate_dataset(EnvId env, std::size_t n, std::uint64_t seed) {
  switch (env) {
    case EnvId::DangerBandit: return generate_danger_dataset(n, seed);
    case EnvId::MultimodalBandit: return generate_multimodal_dataset(n, seed);
    case EnvId::TabularChain: break;
  }
  throw std::invalid_argument("generate_dataset: no offline generator for this env");
}

// ---------------------------------------------------------------------------
// Dataset file: header `isep-dataset v1 <env_id> <n> <seed>` then one CSV row
// per transition (s0,a0,a1,r,done). Doubles use %.17g so a load/save cycle is
// byte-stable.
// ---------------------------------------------------------------------------

inline void save_dataset(const OfflineDataset& ds, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "isep-dataset v1 " << env_name(ds.env_id) << ' ' << ds.size() << ' ' << ds.rng_seed
    << '\n';
  char buf[128];
  for (const Transition& t : ds.transitions) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%d\n", t.state[0], t.action[0],
                  t.action[1], t.reward, t.done ? 1 : 0);
    f << buf;
  }
  if (!f) throw std::runtime_error("short write to " + path);
}

inline OfflineDataset load_dataset(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string tag, version, env;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  f >> tag >> version >> env >> n >> seed;
  if (!f || tag != "isep-dataset" || version != "v1")
    throw std::runtime_error(path + ": not an isep-dataset v1 file");
  std::string line;
  std::getline(f, line);  // rest of the header line
  OfflineDataset ds;
  ds.env_id = parse_env(env);
  ds.rng_seed = seed;
  ds.transitions.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(f, line))
      throw std::runtime_error(path + ": expected " + std::to_string(n) + " rows, got " +
                               std::to_string(i));
    Transition t;
    double s0, a0, a1, r;
    int done;
    if (std::sscanf(line.c_str(), "%lg,%lg,%lg,%lg,%d", &s0, &a0, &a1, &r, &done) != 5)
      throw std::runtime_error(path + ": malformed row at line " + std::to_string(i + 2));
    t.state = {s0};
    t.action = {a0, a1};
    t.reward = r;
    t.next_state = {s0};
    t.done = done != 0;
    ds.transitions.push_back(std::move(t));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Minibatch view used by every loss. Gathered once per step into flat
// matrices so the network kernels see contiguous input.
// ---------------------------------------------------------------------------

struct Batch {
  Matrix2D states;
  Matrix2D actions;
  Matrix2D next_states;
  std::vector<double> rewards;
  std::vector<double> not_done;

  std::size_t size() const { return states.rows; }
};

inline void gather_batch(const OfflineDataset& ds, const std::vector<std::size_t>& idx,
                         Batch& out) {
  const std::size_t b = idx.size();
  const std::size_t sd = ds.state_dim(), ad = ds.action_dim();
  out.states.resize(b, sd);
  out.actions.resize(b, ad);
  out.next_states.resize(b, sd);
  out.rewards.resize(b);
  out.not_done.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    const Transition& t = ds.transitions[idx[i]];
    for (std::size_t j = 0; j < sd; ++j) out.states(i, j) = t.state[j];
    for (std::size_t j = 0; j < ad; ++j) out.actions(i, j) = t.action[j];
    for (std::size_t j = 0; j < sd; ++j) out.next_states(i, j) = t.next_state[j];
    out.rewards[i] = t.reward;
    out.not_done[i] = t.done ? 0.0 : 1.0;
  }
}

inline void sample_batch(const OfflineDataset& ds, std::size_t batch_size, SplitMix64& rng,
                         std::vector<std::size_t>& idx, Batch& out) {
  idx.resize(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) idx[i] = rng.uniform_index(ds.size());
  gather_batch(ds, idx, out);
}

}  // namespace isep
