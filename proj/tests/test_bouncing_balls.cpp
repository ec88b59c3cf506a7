#include <doctest.h>

#include <cmath>

#include "dard/bouncing_balls.hpp"
#include "test_support.hpp"

using namespace dard;
using namespace dard::balls;
using dard::testing::desk_config;

namespace {

/// Agent at (ax, ay) at rest, goal at (gx, gy), other balls parked apart and at rest.
VectorXd make_state(const BallWorldConfig& cfg, double ax, double ay, double gx, double gy) {
  VectorXd s = VectorXd::Zero(cfg.state_dim());
  s[0] = ax;
  s[1] = ay;
  for (int b = 1; b < cfg.n_balls; ++b) {
    s[pos_index(b)] = 2.0 + 4.0 * b;
    s[pos_index(b) + 1] = 18.0;
  }
  s[goal_index(cfg)] = gx;
  s[goal_index(cfg) + 1] = gy;
  return s;
}

bool inside(const BallWorldConfig& cfg, const VectorXd& s) {
  for (int b = 0; b < cfg.n_balls; ++b) {
    for (int k = 0; k < 2; ++k) {
      const double x = s[pos_index(b) + k];
      if (x < cfg.lo() || x > cfg.hi()) return false;
    }
  }
  return true;
}

int goals_reached(const Policy& policy, int episodes, std::uint64_t seed) {
  const BouncingBalls env(desk_config());
  Rng rng(seed);
  int hits = 0;
  for (int e = 0; e < episodes; ++e) {
    VectorXd s = env.reset(rng);
    for (int t = 0; t < desk_config().horizon; ++t) {
      const auto res = env.step(s, policy.act(s, rng), rng);
      hits += res.reward > 0.0 ? 1 : 0;
      s = res.continuation;
    }
  }
  return hits;
}

}  // namespace

TEST_SUITE("bouncing_balls") {
  TEST_CASE("config validation and json round trip") {
    BallWorldConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.state_dim() == 18);
    CHECK(BallWorldConfig::from_json(cfg.to_json()) == cfg);
    CHECK(BallWorldConfig::from_json(cfg.to_json()).hash() == cfg.hash());
    BallWorldConfig other = cfg;
    other.dt = 0.05;
    CHECK(other.hash() != cfg.hash());
    other.max_speed = 0.0;
    CHECK_THROWS_AS(other.validate(), std::invalid_argument);
  }

  TEST_CASE("reflection mirrors and flips velocity") {
    double x = 20.0;
    double v = 3.0;
    reflect(x, v, 0.5, 19.5);
    CHECK(x == doctest::Approx(19.0));
    CHECK(v == -3.0);
    x = -0.5;
    v = -1.0;
    reflect(x, v, 0.5, 19.5);
    CHECK(x == doctest::Approx(1.5));
    CHECK(v == 1.0);
    x = 4.0;
    v = 2.0;
    reflect(x, v, 0.5, 19.5);
    CHECK(x == 4.0);
    CHECK(v == 2.0);
  }

  TEST_CASE("balls stay inside the arena and under the speed limit") {
    const BouncingBalls env(desk_config());
    const UniformPolicy policy(desk_config());
    Rng rng(5);
    VectorXd s = env.reset(rng);
    for (int t = 0; t < 5000; ++t) {
      const auto res = env.step(s, policy.act(s, rng), rng);
      REQUIRE(inside(desk_config(), res.next_state));
      for (int b = 0; b < desk_config().n_balls; ++b) {
        const double speed = std::hypot(res.next_state[vel_index(b)], res.next_state[vel_index(b) + 1]);
        CHECK(speed <= desk_config().max_speed + 1e-12);
      }
      s = res.continuation;
    }
  }

  TEST_CASE("step is deterministic given the rng state") {
    const BouncingBalls env(desk_config());
    Rng r1(9);
    Rng r2(9);
    const VectorXd s1 = env.reset(r1);
    const VectorXd s2 = env.reset(r2);
    CHECK(s1 == s2);
    VectorXd a(2);
    a << 1.0, -2.0;
    const auto x = env.step(s1, a, r1);
    const auto y = env.step(s2, a, r2);
    CHECK(x.next_state == y.next_state);
    CHECK(x.continuation == y.continuation);
  }

  TEST_CASE("agent at rest with zero action does not move") {
    const BouncingBalls env(desk_config());
    Rng rng(2);
    const VectorXd s = make_state(desk_config(), 5.0, 5.0, 15.0, 5.0);
    const auto res = env.step(s, VectorXd::Zero(2), rng);
    CHECK(res.next_state[0] == 5.0);
    CHECK(res.next_state[1] == 5.0);
    CHECK(res.reward == 0.0);
  }

  TEST_CASE("out of bounds action is rejected") {
    const BouncingBalls env(desk_config());
    Rng rng(2);
    const VectorXd s = make_state(desk_config(), 5.0, 5.0, 15.0, 5.0);
    VectorXd a(2);
    a << 6.0, 0.0;
    CHECK_THROWS_AS(env.step(s, a, rng), OutOfBoundsAction);
  }

  TEST_CASE("reaching the goal pays one and respawns only the continuation") {
    const BouncingBalls env(desk_config());
    Rng rng(4);
    const VectorXd s = make_state(desk_config(), 5.0, 5.0, 5.5, 5.0);
    const auto res = env.step(s, VectorXd::Zero(2), rng);
    CHECK(res.reward == 1.0);
    CHECK(goal_distance(desk_config(), res.next_state) <= desk_config().goal_threshold);
    CHECK(goal_distance(desk_config(), res.continuation) > desk_config().goal_threshold);
    CHECK(res.continuation[2] == 0.0);
    CHECK(res.continuation[3] == 0.0);

    TransitionBatch batch(desk_config().schema(), 1);
    batch.s.row(0) = s.transpose();
    batch.a.row(0).setZero();
    batch.s_next.row(0) = res.next_state.transpose();
    CHECK(GroundTruthReward(desk_config()).evaluate(batch)[0] == 1.0);
  }

  TEST_CASE("uniform policy is centred") {
    const UniformPolicy policy(desk_config());
    Rng rng(8);
    const VectorXd s = VectorXd::Zero(desk_config().state_dim());
    Eigen::Vector2d sum = Eigen::Vector2d::Zero();
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      const VectorXd a = policy.act(s, rng);
      CHECK(desk_config().action_box().contains(a));
      sum += a;
    }
    CHECK(std::abs(sum[0] / n) <= 0.1);
    CHECK(std::abs(sum[1] / n) <= 0.1);
  }

  TEST_CASE("expert accelerates toward the goal") {
    const ScriptedExpert expert(desk_config());
    const VectorXd s = make_state(desk_config(), 5.0, 5.0, 15.0, 5.0);
    const VectorXd a = expert.act(s);
    CHECK(a[0] > 0.0);
    CHECK(std::abs(a[1]) < 1e-12);
    CHECK(desk_config().action_box().contains(a));
  }

  TEST_CASE("expert reaches goals far more often than uniform") {
    const int expert = goals_reached(ScriptedExpert(desk_config()), 100, 31);
    const int uniform = goals_reached(UniformPolicy(desk_config()), 100, 31);
    MESSAGE("goals reached: expert " << expert << ", uniform " << uniform);
    CHECK(expert >= 5 * std::max(uniform, 1));
  }

  TEST_CASE("uniform goal rate is small but nonzero") {
    const auto& data = dard::testing::uniform_data();
    double hits = 0.0;
    for (const auto& t : data.transitions) hits += t.r_gt;
    const double rate = hits / static_cast<double>(data.size());
    MESSAGE("uniform goal rate " << rate);
    CHECK(rate >= 0.001);
    CHECK(rate <= 0.05);
  }

  TEST_CASE("sqrt goal potential") {
    const SqrtGoalPotential phi(desk_config());
    RowMatrix states(2, desk_config().state_dim());
    states.row(0) = make_state(desk_config(), 5.0, 5.0, 9.0, 5.0).transpose();
    states.row(1) = make_state(desk_config(), 5.0, 5.0, 5.0, 5.0).transpose();
    const auto v = phi.evaluate(states);
    CHECK(v[0] == doctest::Approx(-2.0).epsilon(1e-15));
    CHECK(v[1] == 0.0);
  }

  TEST_CASE("constant velocity dynamics stays in the arena and ignores rng") {
    const ConstantVelocityDynamics dyn(desk_config());
    const auto& data = dard::testing::uniform_data();
    const auto batch = data.batch();
    Rng r1(1);
    Rng r2(2);
    const RowMatrix a = dyn.sample(batch.s.topRows(500), batch.a.topRows(500), r1);
    const RowMatrix b = dyn.sample(batch.s.topRows(500), batch.a.topRows(500), r2);
    CHECK(a == b);
    for (Eigen::Index i = 0; i < a.rows(); ++i) CHECK(inside(desk_config(), a.row(i).transpose()));
    // The agent's own motion is reproduced exactly.
    for (Eigen::Index i = 0; i < 500; ++i) {
      CHECK(a(i, 0) == doctest::Approx(batch.s_next(i, 0)).epsilon(1e-12));
      CHECK(a(i, 1) == doctest::Approx(batch.s_next(i, 1)).epsilon(1e-12));
    }
  }
}
