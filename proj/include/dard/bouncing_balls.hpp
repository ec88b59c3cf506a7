#pragma once

#include <string>

#include "dard/core.hpp"

namespace dard::balls {

/// Desk-scale ball world. Every ball centre lives in [ball_radius, arena - ball_radius]^2.
struct BallWorldConfig {
  double arena = 20.0;
  int n_balls = 4;  // agent + others
  double ball_radius = 0.5;
  double dt = 0.1;
  double accel_bound = 5.0;
  double other_accel_std = 0.5;
  double goal_threshold = 1.0;
  int horizon = 400;
  double max_speed = 5.0;

  void validate() const;
  int state_dim() const { return 4 * n_balls + 2; }
  int action_dim() const { return 2; }
  Schema schema() const;
  ActionBox action_box() const;
  double lo() const { return ball_radius; }
  double hi() const { return arena - ball_radius; }

  nlohmann::json to_json() const;
  static BallWorldConfig from_json(const nlohmann::json& j);
  /// Stable hex digest of the JSON form.
  std::string hash() const;

  friend bool operator==(const BallWorldConfig&, const BallWorldConfig&) = default;
};

// State layout: [agent px, py, vx, vy, (other px, py, vx, vy) x (n_balls - 1), gx, gy].
inline int pos_index(int ball) { return 4 * ball; }
inline int vel_index(int ball) { return 4 * ball + 2; }
inline int goal_index(const BallWorldConfig& cfg) { return 4 * cfg.n_balls; }

/// Distance from agent to goal for one state row.
double goal_distance(const BallWorldConfig& cfg, const Eigen::Ref<const VectorXd>& state);

/// Mirror a coordinate back into [lo, hi]; flips `vel` once per bounce.
void reflect(double& x, double& vel, double lo, double hi);

struct StepResult {
  VectorXd next_state;  // s' as observed (agent may sit on the goal)
  double reward = 0.0;
  bool done = false;
  VectorXd continuation;  // state the next step starts from (after any respawn)
};

class BouncingBalls {
 public:
  explicit BouncingBalls(BallWorldConfig cfg);

  const BallWorldConfig& config() const { return cfg_; }
  VectorXd reset(Rng& rng) const;
  /// Semi-implicit Euler with wall reflection; respawns agent and goal on success.
  StepResult step(const VectorXd& state, const VectorXd& action, Rng& rng) const;

 private:
  void respawn(VectorXd& state, Rng& rng) const;
  BallWorldConfig cfg_;
};

/// Goal indicator evaluated on s'.
class GroundTruthReward : public RewardFunction {
 public:
  explicit GroundTruthReward(BallWorldConfig cfg) : cfg_(std::move(cfg)), schema_(cfg_.schema()) {}
  std::string name() const override { return "GT"; }
  std::vector<double> evaluate(const TransitionBatch& batch) const override;
  nlohmann::json to_json() const override { return {{"kind", "ground_truth"}}; }

 private:
  BallWorldConfig cfg_;
  Schema schema_;
};

/// Phi(s) = -sqrt(|agent - goal|).
class SqrtGoalPotential : public PotentialFunction {
 public:
  explicit SqrtGoalPotential(BallWorldConfig cfg) : cfg_(std::move(cfg)) {}
  std::string name() const override { return "sqrt_goal"; }
  std::vector<double> evaluate(const RowMatrix& states) const override;
  nlohmann::json to_json() const override { return {{"kind", "sqrt_goal"}}; }

 private:
  BallWorldConfig cfg_;
};

/// Deterministic next-state model used by DARD: the agent applies its acceleration,
/// every other ball keeps its velocity, walls reflect, the goal stays put.
class ConstantVelocityDynamics : public DynamicsModel {
 public:
  explicit ConstantVelocityDynamics(BallWorldConfig cfg) : cfg_(std::move(cfg)) {}
  std::string name() const override { return "constant_velocity"; }
  bool is_deterministic() const override { return true; }
  RowMatrix sample(const RowMatrix& states, const RowMatrix& actions, Rng& rng) const override;

 private:
  BallWorldConfig cfg_;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  virtual VectorXd act(const VectorXd& state, Rng& rng) const = 0;
};

/// i.i.d. uniform over the acceleration box.
class UniformPolicy : public Policy {
 public:
  explicit UniformPolicy(BallWorldConfig cfg) : cfg_(std::move(cfg)) {}
  std::string name() const override { return "uniform"; }
  VectorXd act(const VectorXd& state, Rng& rng) const override;

 private:
  BallWorldConfig cfg_;
};

/// PD controller toward the goal plus inverse-square repulsion from other balls.
class ScriptedExpert : public Policy {
 public:
  struct Gains {
    double kp = 4.0;
    double kd = 2.0;
    double repulsion = 6.0;
    double repulsion_radius = 2.5;
  };

  explicit ScriptedExpert(BallWorldConfig cfg) : cfg_(std::move(cfg)) {}
  ScriptedExpert(BallWorldConfig cfg, Gains gains) : cfg_(std::move(cfg)), gains_(gains) {}
  std::string name() const override { return "expert"; }
  VectorXd act(const VectorXd& state, Rng& rng) const override;
  VectorXd act(const VectorXd& state) const;

 private:
  BallWorldConfig cfg_;
  Gains gains_;
};

}  // namespace dard::balls
