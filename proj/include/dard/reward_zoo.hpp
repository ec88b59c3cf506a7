#pragma once

#include <string>
#include <vector>

#include "dard/bouncing_balls.hpp"
#include "dard/core.hpp"

namespace dard {

/// base + gamma * phi(s') - phi(s).
class ShapedReward : public RewardFunction {
 public:
  ShapedReward(RewardPtr base, PotentialPtr phi, double gamma, std::string name = "SHAPED");
  std::string name() const override { return name_; }
  std::vector<double> evaluate(const TransitionBatch& batch) const override;
  nlohmann::json to_json() const override;

 private:
  RewardPtr base_;
  PotentialPtr phi_;
  double gamma_;
  std::string name_;
};

/// lambda * base + c.
class AffineReward : public RewardFunction {
 public:
  AffineReward(RewardPtr base, double scale, double shift);
  std::string name() const override;
  std::vector<double> evaluate(const TransitionBatch& batch) const override;
  nlohmann::json to_json() const override;

 private:
  RewardPtr base_;
  double scale_;
  double shift_;
};

/// A ball-world transition is feasible when every ball moves at most
/// reach * max_speed * dt (+ tol), the goal stays put, and the action is in bounds.
/// Reflection and the dynamics models queried by DARD stay inside this bound.
struct FeasibilityParams {
  double reach = 3.0;
  double tol_per_arena = 1e-6;
};

bool feasibility_predicate(const balls::BallWorldConfig& cfg, const Transition& t,
                           const FeasibilityParams& params = {});
/// Row-wise predicate over a batch.
std::vector<char> feasible_mask(const balls::BallWorldConfig& cfg, const TransitionBatch& batch,
                                const FeasibilityParams& params = {});

/// base on feasible transitions, hash-seeded N(0, noise_std^2) elsewhere.
class FeasibilityReward : public RewardFunction {
 public:
  FeasibilityReward(RewardPtr base, balls::BallWorldConfig cfg, double noise_std = 1.0,
                    std::uint64_t seed = 0, FeasibilityParams params = {});
  std::string name() const override { return "FEASIBILITY"; }
  std::vector<double> evaluate(const TransitionBatch& batch) const override;
  nlohmann::json to_json() const override;

 private:
  RewardPtr base_;
  balls::BallWorldConfig cfg_;
  double noise_std_;
  std::uint64_t seed_;
  FeasibilityParams params_;
};

/// base + sigma * z(s, a, s'), z a hash-seeded standard normal.
class NoisyReward : public RewardFunction {
 public:
  NoisyReward(RewardPtr base, double sigma, std::uint64_t seed = 0);
  std::string name() const override;
  std::vector<double> evaluate(const TransitionBatch& batch) const override;
  nlohmann::json to_json() const override;

 private:
  RewardPtr base_;
  double sigma_;
  std::uint64_t seed_;
};

/// -w_dist * |agent - goal|(s') - w_act * |a| + w_goal * [goal reached](s').
class RandomLinearReward : public RewardFunction {
 public:
  RandomLinearReward(balls::BallWorldConfig cfg, double w_dist, double w_act, double w_goal);
  std::string name() const override { return "random_linear"; }
  std::vector<double> evaluate(const TransitionBatch& batch) const override;
  nlohmann::json to_json() const override;

  double w_dist() const { return w_dist_; }
  double w_act() const { return w_act_; }
  double w_goal() const { return w_goal_; }

 private:
  balls::BallWorldConfig cfg_;
  Schema schema_;
  double w_dist_;
  double w_act_;
  double w_goal_;
};

/// w_dist, w_act ~ U[0, 1]; w_goal ~ U[-1, 1].
RandomLinearReward sample_random_reward(const balls::BallWorldConfig& cfg, Rng& rng);

}  // namespace dard
