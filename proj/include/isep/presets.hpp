#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "isep/trainer.hpp"

namespace isep {

struct Preset {
  std::string name;
  std::string note;
  std::function<void(TrainConfig&)> apply;
};

namespace detail {

inline void bandit_defaults(TrainConfig& c, EnvId env, PolicyKind kind) {
  c.env_id = env;
  c.policy_kind = kind;
  c.total_steps = 30000;
  c.eval_every = 1000;
  c.eval_rollouts = 1000;
  c.dataset_n = 10000;
  c.hidden_critic = 32;
  c.hidden_policy = is_flow_kind(kind) ? 64 : 32;
}

/// Reference hyperparameters for the standard continuous-control task names.
/// These set (p, tau, beta) or (p, tau, w) only; running them needs an
/// externally supplied dataset file.
inline Preset task_gauss(const std::string& task, double p, double tau, double beta) {
  return {task, "reference hyperparameters (gaussian policy); bring your own dataset",
          [=](TrainConfig& c) {
            c.policy_kind = PolicyKind::Gaussian;
            c.hp.p = p;
            c.hp.tau = tau;
            c.hp.beta = beta;
          }};
}

inline Preset task_flow(const std::string& task, double p, double tau, double w) {
  return {task + "-fm", "reference hyperparameters (flow policy); bring your own dataset",
          [=](TrainConfig& c) {
            c.policy_kind = PolicyKind::Flow;
            c.hp.p = p;
            c.hp.tau = tau;
            c.hp.w = w;
          }};
}

}  // namespace detail

inline std::vector<Preset> all_presets() {
  using detail::bandit_defaults;
  std::vector<Preset> out;

  out.push_back({"danger-gauss", "gaussian policy on the danger bandit", [](TrainConfig& c) {
                   bandit_defaults(c, EnvId::DangerBandit, PolicyKind::Gaussian);
                   // Narrower nets sharpen the contrast between moderate and
                   // full expansion on this task; wide critics smooth it away.
                   c.hidden_critic = 16;
                   c.hidden_policy = 16;
                   c.hp.p = 0.5;
                   c.hp.tau = 0.7;
                   c.hp.beta = 0.05;
                 }});
  out.push_back({"multimodal-flow", "flow policy on the multimodal bandit", [](TrainConfig& c) {
                   bandit_defaults(c, EnvId::MultimodalBandit, PolicyKind::Flow);
                   c.hp.p = 0.5;
                   c.hp.tau = 0.8;
                   c.hp.beta = 1.0;
                   c.hp.w = 2.0;
                 }});
  out.push_back({"multimodal-gauss", "gaussian policy on the multimodal bandit",
                 [](TrainConfig& c) {
                   bandit_defaults(c, EnvId::MultimodalBandit, PolicyKind::Gaussian);
                   c.hp.p = 0.5;
                   c.hp.tau = 0.8;
                   c.hp.beta = 0.1;
                 }});
  out.push_back({"multimodal-flow-det",
                 "deterministic-interpolation flow baseline on the multimodal bandit",
                 [](TrainConfig& c) {
                   bandit_defaults(c, EnvId::MultimodalBandit, PolicyKind::FlowDetInterp);
                   c.hp.p = 0.5;
                   c.hp.tau = 0.8;
                   c.hp.beta = 1.0;
                   c.hp.w = 2.0;
                 }});

  using detail::task_flow;
  using detail::task_gauss;
  out.push_back(task_gauss("halfcheetah-medium", 0.5, 0.8, 5.0));
  out.push_back(task_gauss("hopper-medium", 0.5, 0.8, 3.0));
  out.push_back(task_gauss("walker2d-medium", 0.3, 0.8, 5.0));
  out.push_back(task_gauss("halfcheetah-medium-replay", 0.5, 0.8, 5.0));
  out.push_back(task_gauss("hopper-medium-replay", 0.3, 0.8, 3.0));
  out.push_back(task_gauss("walker2d-medium-replay", 0.5, 0.8, 5.0));
  out.push_back(task_gauss("halfcheetah-medium-expert", 0.3, 0.8, 3.0));
  out.push_back(task_gauss("hopper-medium-expert", 0.3, 0.8, 3.0));
  out.push_back(task_gauss("walker2d-medium-expert", 0.3, 0.8, 3.0));
  out.push_back(task_gauss("pen-human", 0.2, 0.7, 0.5));
  out.push_back(task_gauss("pen-cloned", 0.5, 0.7, 0.5));
  out.push_back(task_gauss("kitchen-complete", 0.5, 0.7, 0.05));
  out.push_back(task_gauss("kitchen-partial", 0.2, 0.8, 0.1));
  out.push_back(task_gauss("kitchen-mixed", 0.3, 0.8, 0.1));
  out.push_back(task_flow("halfcheetah-medium", 0.3, 0.7, 2.0));
  out.push_back(task_flow("hopper-medium", 0.2, 0.7, 1.0));
  out.push_back(task_flow("walker2d-medium", 0.3, 0.8, 2.0));
  out.push_back(task_flow("halfcheetah-medium-replay", 0.3, 0.8, 2.0));
  out.push_back(task_flow("hopper-medium-replay", 0.5, 0.8, 3.0));
  out.push_back(task_flow("walker2d-medium-replay", 0.3, 0.8, 3.0));
  out.push_back(task_flow("halfcheetah-medium-expert", 0.3, 0.8, 3.0));
  out.push_back(task_flow("hopper-medium-expert", 0.2, 0.7, 3.0));
  out.push_back(task_flow("walker2d-medium-expert", 0.3, 0.7, 2.0));
  out.push_back(task_flow("pen-human", 0.2, 0.7, 3.0));
  out.push_back(task_flow("pen-cloned", 0.2, 0.7, 1.0));
  out.push_back(task_flow("kitchen-complete", 0.2, 0.8, 0.5));
  out.push_back(task_flow("kitchen-partial", 0.2, 0.8, 1.0));
  out.push_back(task_flow("kitchen-mixed", 0.2, 0.8, 0.2));
  return out;
}

inline void apply_preset(const std::string& name, TrainConfig& cfg) {
  for (const Preset& p : all_presets()) {
    if (p.name == name) {
      p.apply(cfg);
      return;
    }
  }
  throw std::invalid_argument("unknown preset '" + name + "' (see list-presets)");
}

}  // namespace isep
