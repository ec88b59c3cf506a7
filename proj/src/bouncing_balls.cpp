#include "dard/bouncing_balls.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace dard::balls {

void BallWorldConfig::validate() const {
  if (!(arena > 2.0 * ball_radius) || ball_radius < 0.0) {
    throw std::invalid_argument("BallWorldConfig: arena must exceed ball diameter");
  }
  if (n_balls < 1) throw std::invalid_argument("BallWorldConfig: need at least the agent ball");
  if (!(dt > 0.0)) throw std::invalid_argument("BallWorldConfig: dt must be positive");
  if (!(accel_bound > 0.0)) throw std::invalid_argument("BallWorldConfig: accel bound must be positive");
  if (!(goal_threshold > 0.0)) throw std::invalid_argument("BallWorldConfig: goal_threshold must be positive");
  if (horizon <= 0) throw std::invalid_argument("BallWorldConfig: horizon must be positive");
  if (!(max_speed > 0.0)) throw std::invalid_argument("BallWorldConfig: max_speed must be positive");
  if (other_accel_std < 0.0) throw std::invalid_argument("BallWorldConfig: negative accel std");
}

Schema BallWorldConfig::schema() const {
  return make_schema("bouncing_balls", state_dim(), action_dim());
}

ActionBox BallWorldConfig::action_box() const {
  ActionBox box;
  box.lo = VectorXd::Constant(2, -accel_bound);
  box.hi = VectorXd::Constant(2, accel_bound);
  return box;
}

nlohmann::json BallWorldConfig::to_json() const {
  return {{"arena", arena},
          {"n_balls", n_balls},
          {"ball_radius", ball_radius},
          {"dt", dt},
          {"accel_bound", accel_bound},
          {"other_accel_std", other_accel_std},
          {"goal_threshold", goal_threshold},
          {"horizon", horizon},
          {"max_speed", max_speed}};
}

BallWorldConfig BallWorldConfig::from_json(const nlohmann::json& j) {
  BallWorldConfig cfg;
  cfg.arena = j.value("arena", cfg.arena);
  cfg.n_balls = j.value("n_balls", cfg.n_balls);
  cfg.ball_radius = j.value("ball_radius", cfg.ball_radius);
  cfg.dt = j.value("dt", cfg.dt);
  cfg.accel_bound = j.value("accel_bound", cfg.accel_bound);
  cfg.other_accel_std = j.value("other_accel_std", cfg.other_accel_std);
  cfg.goal_threshold = j.value("goal_threshold", cfg.goal_threshold);
  cfg.horizon = j.value("horizon", cfg.horizon);
  cfg.max_speed = j.value("max_speed", cfg.max_speed);
  cfg.validate();
  return cfg;
}

std::string BallWorldConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(to_json().dump())));
  return buf;
}

double goal_distance(const BallWorldConfig& cfg, const Eigen::Ref<const VectorXd>& state) {
  const int g = goal_index(cfg);
  return std::hypot(state[0] - state[g], state[1] - state[g + 1]);
}

void reflect(double& x, double& vel, double lo, double hi) {
  while (x < lo || x > hi) {
    if (x < lo) {
      x = 2.0 * lo - x;
    } else {
      x = 2.0 * hi - x;
    }
    vel = -vel;
  }
}

namespace {

// Semi-implicit Euler for one ball in place: v <- clamp(v + a dt), p <- p + v dt, reflect.
template <class Row>
void advance_ball(const BallWorldConfig& cfg, Row&& row, int ball, double ax, double ay) {
  const int p = pos_index(ball);
  const int v = vel_index(ball);
  double vx = row[v] + ax * cfg.dt;
  double vy = row[v + 1] + ay * cfg.dt;
  const double speed = std::hypot(vx, vy);
  if (speed > cfg.max_speed) {
    const double scale = cfg.max_speed / speed;
    vx *= scale;
    vy *= scale;
  }
  double px = row[p] + vx * cfg.dt;
  double py = row[p + 1] + vy * cfg.dt;
  reflect(px, vx, cfg.lo(), cfg.hi());
  reflect(py, vy, cfg.lo(), cfg.hi());
  row[p] = px;
  row[p + 1] = py;
  row[v] = vx;
  row[v + 1] = vy;
}

}  // namespace

BouncingBalls::BouncingBalls(BallWorldConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

VectorXd BouncingBalls::reset(Rng& rng) const {
  VectorXd state = VectorXd::Zero(cfg_.state_dim());
  for (int b = 0; b < cfg_.n_balls; ++b) {
    state[pos_index(b)] = rng.uniform(cfg_.lo(), cfg_.hi());
    state[pos_index(b) + 1] = rng.uniform(cfg_.lo(), cfg_.hi());
    if (b > 0) {
      const double half = 0.5 * cfg_.max_speed / std::sqrt(2.0);
      state[vel_index(b)] = rng.uniform(-half, half);
      state[vel_index(b) + 1] = rng.uniform(-half, half);
    }
  }
  respawn(state, rng);
  return state;
}

void BouncingBalls::respawn(VectorXd& state, Rng& rng) const {
  const int g = goal_index(cfg_);
  state[vel_index(0)] = 0.0;
  state[vel_index(0) + 1] = 0.0;
  // Redraw until the agent does not start on the goal.
  for (int attempt = 0; attempt < 1000; ++attempt) {
    state[0] = rng.uniform(cfg_.lo(), cfg_.hi());
    state[1] = rng.uniform(cfg_.lo(), cfg_.hi());
    state[g] = rng.uniform(cfg_.lo(), cfg_.hi());
    state[g + 1] = rng.uniform(cfg_.lo(), cfg_.hi());
    if (goal_distance(cfg_, state) > cfg_.goal_threshold) return;
  }
}

StepResult BouncingBalls::step(const VectorXd& state, const VectorXd& action, Rng& rng) const {
  if (state.size() != cfg_.state_dim()) throw SchemaMismatch("bouncing_balls: bad state length");
  if (!cfg_.action_box().contains(action)) {
    throw OutOfBoundsAction("bouncing_balls: action outside acceleration bounds");
  }
  StepResult out;
  out.next_state = state;
  advance_ball(cfg_, out.next_state, 0, action[0], action[1]);
  for (int b = 1; b < cfg_.n_balls; ++b) {
    const double ax = std::clamp(rng.normal(0.0, cfg_.other_accel_std), -cfg_.accel_bound, cfg_.accel_bound);
    const double ay = std::clamp(rng.normal(0.0, cfg_.other_accel_std), -cfg_.accel_bound, cfg_.accel_bound);
    advance_ball(cfg_, out.next_state, b, ax, ay);
  }
  out.reward = goal_distance(cfg_, out.next_state) <= cfg_.goal_threshold ? 1.0 : 0.0;
  out.continuation = out.next_state;
  if (out.reward > 0.0) respawn(out.continuation, rng);
  return out;
}

std::vector<double> GroundTruthReward::evaluate(const TransitionBatch& batch) const {
  batch.check_schema(schema_);
  std::vector<double> out(static_cast<std::size_t>(batch.size()));
  const int g = goal_index(cfg_);
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    const double dx = batch.s_next(i, 0) - batch.s_next(i, g);
    const double dy = batch.s_next(i, 1) - batch.s_next(i, g + 1);
    out[static_cast<std::size_t>(i)] = std::hypot(dx, dy) <= cfg_.goal_threshold ? 1.0 : 0.0;
  }
  return out;
}

std::vector<double> SqrtGoalPotential::evaluate(const RowMatrix& states) const {
  if (states.cols() != cfg_.state_dim()) throw SchemaMismatch("sqrt_goal: bad state width");
  std::vector<double> out(static_cast<std::size_t>(states.rows()));
  const int g = goal_index(cfg_);
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    const double d = std::hypot(states(i, 0) - states(i, g), states(i, 1) - states(i, g + 1));
    out[static_cast<std::size_t>(i)] = -std::sqrt(d);
  }
  return out;
}

RowMatrix ConstantVelocityDynamics::sample(const RowMatrix& states, const RowMatrix& actions,
                                           Rng& /*rng*/) const {
  if (states.cols() != cfg_.state_dim() || actions.cols() != 2 || states.rows() != actions.rows()) {
    throw SchemaMismatch("constant_velocity: bad input shape");
  }
  RowMatrix next = states;
  for (Eigen::Index i = 0; i < next.rows(); ++i) {
    auto row = next.row(i);
    advance_ball(cfg_, row, 0, actions(i, 0), actions(i, 1));
    for (int b = 1; b < cfg_.n_balls; ++b) advance_ball(cfg_, row, b, 0.0, 0.0);
  }
  return next;
}

VectorXd UniformPolicy::act(const VectorXd& /*state*/, Rng& rng) const {
  VectorXd a(2);
  a[0] = rng.uniform(-cfg_.accel_bound, cfg_.accel_bound);
  a[1] = rng.uniform(-cfg_.accel_bound, cfg_.accel_bound);
  return a;
}

VectorXd ScriptedExpert::act(const VectorXd& state, Rng& /*rng*/) const { return act(state); }

VectorXd ScriptedExpert::act(const VectorXd& state) const {
  const int g = goal_index(cfg_);
  Eigen::Vector2d p(state[0], state[1]);
  Eigen::Vector2d v(state[2], state[3]);
  Eigen::Vector2d goal(state[g], state[g + 1]);
  Eigen::Vector2d a = gains_.kp * (goal - p) - gains_.kd * v;
  for (int b = 1; b < cfg_.n_balls; ++b) {
    Eigen::Vector2d other(state[pos_index(b)], state[pos_index(b) + 1]);
    Eigen::Vector2d away = p - other;
    const double d = std::max(away.norm(), 1e-6);
    if (d < gains_.repulsion_radius) a += gains_.repulsion * away / (d * d * d);
  }
  VectorXd out(2);
  out[0] = std::clamp(a[0], -cfg_.accel_bound, cfg_.accel_bound);
  out[1] = std::clamp(a[1], -cfg_.accel_bound, cfg_.accel_bound);
  return out;
}

}  // namespace dard::balls
