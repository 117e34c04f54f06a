#include "isep/critic.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "isep/dataset.hpp"
#include "isep/hyperparams.hpp"
#include "isep/rng.hpp"
#include "isep/tabular.hpp"

using namespace isep;

namespace {

// Zeroes every weight and sets the output bias, making the net the constant c.
void make_constant(MlpParams& net, double c) {
  for (auto& w : net.weights) w.fill(0.0);
  for (auto& b : net.biases) b.assign(b.size(), 0.0);
  net.biases.back()[0] = c;
}

// Wires a (state, a0, a1) -> a0 pass-through assuming a0 >= 0 at call sites.
void make_first_action_passthrough(MlpParams& net) {
  for (auto& w : net.weights) w.fill(0.0);
  for (auto& b : net.biases) b.assign(b.size(), 0.0);
  net.weights[0](0, 1) = 1.0;  // hidden0[0] = a0
  net.weights[1](0, 0) = 1.0;  // hidden1[0] = hidden0[0]
  net.weights[2](0, 0) = 1.0;  // out = hidden1[0]
}

Batch single_bandit_batch(double a0, double a1, double reward) {
  OfflineDataset ds;
  ds.env_id = EnvId::DangerBandit;
  Transition t;
  t.state = {0.0};
  t.action = {a0, a1};
  t.reward = reward;
  t.next_state = {0.0};
  t.done = true;
  ds.transitions.push_back(t);
  Batch b;
  gather_batch(ds, {0}, b);
  return b;
}

}  // namespace

TEST(Expectile, WeightAndLoss) {
  EXPECT_DOUBLE_EQ(expectile_weight(2.0, 0.7), 0.7);
  EXPECT_DOUBLE_EQ(expectile_weight(-2.0, 0.7), 0.3);
  EXPECT_DOUBLE_EQ(expectile_weight(0.0, 0.7), 0.7);  // u >= 0 side
  EXPECT_DOUBLE_EQ(expectile_loss(2.0, 0.7), 2.8);
  EXPECT_DOUBLE_EQ(expectile_loss(-2.0, 0.7), 1.2);
  EXPECT_DOUBLE_EQ(expectile_loss(3.0, 0.5), 4.5);
}

TEST(Expectile, MeanAtHalf) {
  EXPECT_DOUBLE_EQ(expectile_fixed_point({1.0, 2.0, 4.0, 9.0}, 0.5), 4.0);
  EXPECT_DOUBLE_EQ(expectile_fixed_point({-3.0, 3.0}, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(expectile_fixed_point({7.0}, 0.5), 7.0);
}

TEST(Expectile, TwoPointClosedForm) {
  // For {0,1} the tau-expectile solves tau(1-v) = (1-tau)v, i.e. v = tau.
  for (double tau : {0.2, 0.5, 0.7, 0.8, 0.9})
    EXPECT_NEAR(expectile_fixed_point({0.0, 1.0}, tau), tau, 1e-12) << "tau " << tau;
}

TEST(Expectile, AgreesWithGoldenSectionOracle) {
  SplitMix64 g(41);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> xs(17);
    for (double& x : xs) x = g.uniform(-50.0, 120.0);
    for (double tau : {0.2, 0.5, 0.7, 0.8, 0.9}) {
      const double fp = expectile_fixed_point(xs, tau);
      const double oracle = expectile_of(xs, tau);
      ASSERT_NEAR(fp, oracle, 1e-8) << "tau " << tau;
      // First-order optimality: tau * sum(x-v)+ equals (1-tau) * sum(v-x)+.
      ASSERT_NEAR(expectile_gradient_residual(xs, tau, fp), 0.0, 1e-8);
    }
  }
}

TEST(Expectile, MonotoneInTauAndBounded) {
  const std::vector<double> xs = {-10.0, -2.0, 0.0, 3.0, 50.0};
  double prev = -1e300;
  for (double tau : {0.1, 0.3, 0.5, 0.7, 0.9, 0.99}) {
    const double v = expectile_fixed_point(xs, tau);
    ASSERT_GT(v, prev);
    ASSERT_GE(v, -10.0);
    ASSERT_LE(v, 50.0);
    prev = v;
  }
  EXPECT_THROW(expectile_fixed_point({}, 0.5), std::invalid_argument);
}

TEST(Critics, ConstructionShapes) {
  SplitMix64 g(42);
  const CriticSet c = make_critics(1, 2, 16, 200.0, g);
  EXPECT_EQ(c.state_dim(), 1u);
  EXPECT_EQ(c.action_dim(), 2u);
  EXPECT_EQ(c.v_net.in_dim(), 1u);
  EXPECT_EQ(c.q_nets[0].in_dim(), 3u);
  EXPECT_EQ(c.v_max, 200.0);
  // Targets start as exact copies of the live twins.
  for (int t = 0; t < 2; ++t)
    for (std::size_t l = 0; l < c.q_nets[t].n_layers(); ++l)
      ASSERT_EQ(c.target_q_nets[t].weights[l].data, c.q_nets[t].weights[l].data);
  // The twins differ from each other (independent init).
  EXPECT_NE(c.q_nets[0].weights[0].data, c.q_nets[1].weights[0].data);
}

TEST(Critics, CroppedTwinMin) {
  SplitMix64 g(43);
  CriticSet c = make_critics(1, 2, 8, 4.0, g);
  make_constant(c.target_q_nets[0], 5.0);
  make_constant(c.target_q_nets[1], 3.0);
  make_constant(c.q_nets[0], -7.0);
  make_constant(c.q_nets[1], -6.0);
  const std::vector<double> s = {0.0}, a = {1.0, 1.0};
  // Twin-min then symmetric crop at +-v_max.
  EXPECT_DOUBLE_EQ(q_cropped(c, s, a, /*use_target=*/true), 3.0);
  EXPECT_DOUBLE_EQ(q_cropped(c, s, a, /*use_target=*/false), -4.0);
  make_constant(c.target_q_nets[1], 9.0);
  EXPECT_DOUBLE_EQ(q_cropped(c, s, a, true), 4.0);  // min(5,9) crops to 4
}

TEST(ValueLoss, ScalarMinimizerWithInterpolation) {
  // Q reads the first action through the target twins, so the dataset action 1
  // gives Q_data = 1 and the policy draw 3 gives Q_pol = 3. With p = 0.5 and
  // tau = 0.5 the objective is 0.25 (1-V)^2 + 0.5 (3-V)^2, minimized at 7/3.
  SplitMix64 g(44);
  CriticSet c = make_critics(1, 2, 8, 200.0, g);
  make_first_action_passthrough(c.target_q_nets[0]);
  make_first_action_passthrough(c.target_q_nets[1]);
  Batch batch = single_bandit_batch(1.0, 0.0, 0.0);
  Matrix2D pol(1, 2);
  pol(0, 0) = 3.0;
  HyperParams hp;
  hp.p = 0.5;
  hp.tau = 0.5;

  MlpGrads vg = make_grads(c.v_net);
  auto loss_at = [&](double v0) {
    make_constant(c.v_net, v0);
    return interpolated_value_loss(batch, pol, c, hp, vg);
  };
  const double at_min = loss_at(7.0 / 3.0);
  EXPECT_NEAR(at_min, 2.0 / 3.0, 1e-12);
  // Output-bias gradient of the value net is exactly dL/dV.
  EXPECT_NEAR(vg.biases.back()[0], 0.0, 1e-12);
  loss_at(2.0);
  EXPECT_NEAR(vg.biases.back()[0], -0.5, 1e-12);  // still pulled up toward 7/3
  EXPECT_GT(loss_at(2.0), at_min);
  EXPECT_GT(loss_at(2.5), at_min);
}

TEST(ValueLoss, PureExpectileAtPZero) {
  SplitMix64 g(45);
  CriticSet c = make_critics(1, 2, 8, 200.0, g);
  make_first_action_passthrough(c.target_q_nets[0]);
  make_first_action_passthrough(c.target_q_nets[1]);
  OfflineDataset ds;
  ds.env_id = EnvId::DangerBandit;
  for (double a0 : {1.0, 3.0}) {
    Transition t;
    t.state = {0.0};
    t.action = {a0, 0.0};
    t.reward = 0.0;
    t.next_state = {0.0};
    t.done = true;
    ds.transitions.push_back(t);
  }
  Batch batch;
  gather_batch(ds, {0, 1}, batch);
  HyperParams hp;
  hp.p = 0.0;
  hp.tau = 0.7;
  Matrix2D empty_pol;
  MlpGrads vg = make_grads(c.v_net);
  // Stationary point of the 0.7-expectile of {1, 3}: 0.7(3-v) = 0.3(v-1).
  make_constant(c.v_net, 2.4);
  interpolated_value_loss(batch, empty_pol, c, hp, vg);
  EXPECT_NEAR(vg.biases.back()[0], 0.0, 1e-12);
  make_constant(c.v_net, 2.0);
  interpolated_value_loss(batch, empty_pol, c, hp, vg);
  EXPECT_LT(vg.biases.back()[0], 0.0);
}

TEST(ValueLoss, ReadsTargetTwinsNotLive) {
  SplitMix64 g(46);
  CriticSet c = make_critics(1, 2, 8, 200.0, g);
  make_constant(c.target_q_nets[0], 2.0);
  make_constant(c.target_q_nets[1], 2.0);
  make_constant(c.v_net, 0.5);
  Batch batch = single_bandit_batch(0.3, -0.4, 0.0);
  Matrix2D pol(1, 2);
  HyperParams hp;
  hp.p = 0.5;
  MlpGrads vg = make_grads(c.v_net);
  const double before = interpolated_value_loss(batch, pol, c, hp, vg);
  // Mangling the live twins must not change the read-out.
  make_constant(c.q_nets[0], 55.0);
  make_constant(c.q_nets[1], -55.0);
  const double after = interpolated_value_loss(batch, pol, c, hp, vg);
  EXPECT_EQ(before, after);
}

TEST(ValueLoss, GradMatchesFiniteDifferences) {
  SplitMix64 g(47);
  CriticSet c = make_critics(1, 2, 8, 200.0, g);
  const OfflineDataset ds = generate_danger_dataset(16, 5);
  std::vector<std::size_t> idx(16);
  for (std::size_t i = 0; i < 16; ++i) idx[i] = i;
  Batch batch;
  gather_batch(ds, idx, batch);
  Matrix2D pol(16, 2);
  SplitMix64 gp(48);
  for (double& v : pol.data) v = gp.uniform(-2.0, 2.0);
  HyperParams hp;
  hp.p = 0.3;
  hp.tau = 0.8;

  MlpGrads vg = make_grads(c.v_net);
  const double base = interpolated_value_loss(batch, pol, c, hp, vg);
  ASSERT_TRUE(std::isfinite(base));
  const double h = 1e-5;
  for (std::size_t l = 0; l < c.v_net.n_layers(); ++l) {
    for (std::size_t i = 0; i < c.v_net.weights[l].size(); i += 7) {
      double& theta = c.v_net.weights[l].data[i];
      const double orig = theta;
      MlpGrads tmp = make_grads(c.v_net);
      theta = orig + h;
      const double up = interpolated_value_loss(batch, pol, c, hp, tmp);
      theta = orig - h;
      const double dn = interpolated_value_loss(batch, pol, c, hp, tmp);
      theta = orig;
      const double fd = (up - dn) / (2.0 * h);
      ASSERT_NEAR(vg.weights[l].data[i], fd, 1e-4 * std::max(1.0, std::fabs(fd)))
          << "layer " << l << " index " << i;
    }
  }
}

TEST(BellmanLoss, HandComputedTargets) {
  SplitMix64 g(49);
  CriticSet c = make_critics(1, 2, 8, 200.0, g);
  make_constant(c.v_net, 2.0);
  make_constant(c.q_nets[0], 7.8);
  make_constant(c.q_nets[1], 7.8);
  HyperParams hp;
  hp.gamma = 0.99;
  std::array<MlpGrads, 2> qg = {make_grads(c.q_nets[0]), make_grads(c.q_nets[1])};

  // Terminal transition: target is the reward alone; each twin misses by 2.8.
  Batch batch = single_bandit_batch(0.0, 0.0, 5.0);
  EXPECT_NEAR(bellman_q_loss(batch, c, hp, qg), 7.84, 1e-12);

  // Non-terminal: target = r + gamma * V(s') = 5 + 0.5 * 2 = 6.
  batch.not_done[0] = 1.0;
  hp.gamma = 0.5;
  const double e = 7.8 - 6.0;
  EXPECT_NEAR(bellman_q_loss(batch, c, hp, qg), e * e, 1e-12);
  // Output-bias gradient per twin is e / B.
  EXPECT_NEAR(qg[0].biases.back()[0], e, 1e-12);
  EXPECT_NEAR(qg[1].biases.back()[0], e, 1e-12);
}

TEST(BellmanLoss, TargetDetachedFromValueNet) {
  SplitMix64 g(50);
  CriticSet c = make_critics(1, 2, 8, 200.0, g);
  Batch batch = single_bandit_batch(0.5, -0.5, 3.0);
  batch.not_done[0] = 1.0;
  HyperParams hp;
  std::array<MlpGrads, 2> qg = {make_grads(c.q_nets[0]), make_grads(c.q_nets[1])};
  bellman_q_loss(batch, c, hp, qg);
  // Only q gradients exist; nothing is propagated into V by construction. The
  // observable contract: the loss depends on V(s') only through the target
  // value, so scaling V shifts the loss but the gradient path stays in Q.
  for (int t = 0; t < 2; ++t) EXPECT_GT(grad_norm(qg[t]), 0.0);
}

TEST(BellmanLoss, GradMatchesFiniteDifferences) {
  SplitMix64 g(51);
  CriticSet c = make_critics(1, 2, 8, 200.0, g);
  const OfflineDataset ds = generate_danger_dataset(12, 6);
  std::vector<std::size_t> idx(12);
  for (std::size_t i = 0; i < 12; ++i) idx[i] = i;
  Batch batch;
  gather_batch(ds, idx, batch);
  HyperParams hp;
  std::array<MlpGrads, 2> qg = {make_grads(c.q_nets[0]), make_grads(c.q_nets[1])};
  bellman_q_loss(batch, c, hp, qg);
  const double h = 1e-5;
  for (int t = 0; t < 2; ++t) {
    for (std::size_t i = 0; i < c.q_nets[t].weights[0].size(); i += 5) {
      double& theta = c.q_nets[t].weights[0].data[i];
      const double orig = theta;
      std::array<MlpGrads, 2> tmp = {make_grads(c.q_nets[0]), make_grads(c.q_nets[1])};
      theta = orig + h;
      const double up = bellman_q_loss(batch, c, hp, tmp);
      theta = orig - h;
      const double dn = bellman_q_loss(batch, c, hp, tmp);
      theta = orig;
      const double fd = (up - dn) / (2.0 * h);
      ASSERT_NEAR(qg[t].weights[0].data[i], fd, 1e-4 * std::max(1.0, std::fabs(fd)))
          << "twin " << t << " index " << i;
    }
  }
}

TEST(AdvantageWeights, ExponentialWithClip) {
  SplitMix64 g(52);
  CriticSet c = make_critics(1, 2, 8, 200.0, g);
  make_constant(c.v_net, 1.0);
  make_constant(c.target_q_nets[0], 2.0);
  make_constant(c.target_q_nets[1], 2.0);
  const std::vector<double> s = {0.0}, a = {0.0, 0.0};
  EXPECT_NEAR(advantage_weight(c, s, a, 1.0, 100.0), std::exp(1.0), 1e-12);
  EXPECT_NEAR(advantage_weight(c, s, a, 2.0, 100.0), std::exp(2.0), 1e-12);
  EXPECT_DOUBLE_EQ(advantage_weight(c, s, a, 0.0, 100.0), 1.0);
  // Clip: beta (Q - V) = 11 would give e^11 > 100.
  make_constant(c.target_q_nets[0], 12.0);
  make_constant(c.target_q_nets[1], 12.0);
  EXPECT_DOUBLE_EQ(advantage_weight(c, s, a, 1.0, 100.0), 100.0);
  // Negative advantage decays toward zero, never clipped from below.
  make_constant(c.target_q_nets[0], -3.0);
  make_constant(c.target_q_nets[1], -3.0);
  EXPECT_NEAR(advantage_weight(c, s, a, 1.0, 100.0), std::exp(-4.0), 1e-14);
}

TEST(AdvantageWeights, UsesTargetTwinsAndLiveV) {
  SplitMix64 g(53);
  CriticSet c = make_critics(1, 2, 8, 200.0, g);
  make_constant(c.v_net, 0.0);
  make_constant(c.target_q_nets[0], 1.0);
  make_constant(c.target_q_nets[1], 1.0);
  make_constant(c.q_nets[0], 50.0);  // live twins must not be read
  make_constant(c.q_nets[1], 50.0);
  const std::vector<double> s = {0.0}, a = {0.0, 0.0};
  EXPECT_NEAR(advantage_weight(c, s, a, 1.0, 100.0), std::exp(1.0), 1e-12);
  make_constant(c.v_net, 1.0);  // live V moves the weight immediately
  EXPECT_NEAR(advantage_weight(c, s, a, 1.0, 100.0), 1.0, 1e-12);
}

TEST(CriticSet, PolyakMovesTargetsOnly) {
  SplitMix64 g(54);
  CriticSet c = make_critics(1, 2, 8, 200.0, g);
  for (int t = 0; t < 2; ++t) {
    for (auto& w : c.q_nets[t].weights) w.fill(1.0);
    for (auto& b : c.q_nets[t].biases) b.assign(b.size(), 1.0);
  }
  const auto v_before = c.v_net.weights[0].data;
  CriticSet snapshot = c;
  polyak_update(c, 0.9);
  for (int t = 0; t < 2; ++t)
    for (std::size_t l = 0; l < c.q_nets[t].n_layers(); ++l)
      for (std::size_t i = 0; i < c.target_q_nets[t].weights[l].size(); ++i)
        ASSERT_NEAR(c.target_q_nets[t].weights[l].data[i],
                    0.9 * snapshot.target_q_nets[t].weights[l].data[i] + 0.1, 1e-15);
  EXPECT_EQ(c.v_net.weights[0].data, v_before);
}

TEST(CriticLosses, ScratchReuseIsTransparent) {
  SplitMix64 g(55);
  CriticSet c = make_critics(1, 2, 8, 200.0, g);
  const OfflineDataset ds = generate_danger_dataset(32, 7);
  std::vector<std::size_t> idx(32);
  for (std::size_t i = 0; i < 32; ++i) idx[i] = i;
  Batch batch;
  gather_batch(ds, idx, batch);
  Matrix2D pol(32, 2);
  SplitMix64 gp(56);
  for (double& v : pol.data) v = gp.uniform(-2.0, 2.0);
  HyperParams hp;
  hp.p = 0.4;

  CriticScratch scr;
  MlpGrads a = make_grads(c.v_net), b = make_grads(c.v_net);
  const double l1 = interpolated_value_loss(batch, pol, c, hp, a, &scr);
  const double l2 = interpolated_value_loss(batch, pol, c, hp, b, nullptr);
  EXPECT_EQ(l1, l2);
  for (std::size_t l = 0; l < a.weights.size(); ++l)
    ASSERT_EQ(a.weights[l].data, b.weights[l].data);
  // Second pass through the same scratch is identical too.
  const double l3 = interpolated_value_loss(batch, pol, c, hp, a, &scr);
  EXPECT_EQ(l1, l3);
}

TEST(CriticLosses, EmptyBatchRejected) {
  SplitMix64 g(57);
  CriticSet c = make_critics(1, 2, 8, 200.0, g);
  Batch empty;
  Matrix2D pol;
  HyperParams hp;
  MlpGrads vg = make_grads(c.v_net);
  std::array<MlpGrads, 2> qg = {make_grads(c.q_nets[0]), make_grads(c.q_nets[1])};
  EXPECT_THROW(interpolated_value_loss(empty, pol, c, hp, vg), std::invalid_argument);
  EXPECT_THROW(bellman_q_loss(empty, c, hp, qg), std::invalid_argument);
}
