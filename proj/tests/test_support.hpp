#pragma once

#include <limits>
#include <string>
#include <vector>

#include "dard/bouncing_balls.hpp"
#include "dard/datasets.hpp"
#include "dard/metrics.hpp"

namespace dard::testing {

inline const balls::BallWorldConfig& desk_config() {
  static const balls::BallWorldConfig cfg;
  return cfg;
}

/// 20k uniform-policy steps, collected once per process.
inline const TransitionDataset& uniform_data() {
  static const TransitionDataset data = collect(desk_config(), balls::UniformPolicy(desk_config()), 20000, 11);
  return data;
}

inline const TransitionDataset& expert_data() {
  static const TransitionDataset data = collect(desk_config(), balls::ScriptedExpert(desk_config()), 20000, 12);
  return data;
}

class ConstantReward : public RewardFunction {
 public:
  explicit ConstantReward(double c) : c_(c) {}
  std::string name() const override { return "constant"; }
  std::vector<double> evaluate(const TransitionBatch& batch) const override {
    return std::vector<double>(static_cast<std::size_t>(batch.size()), c_);
  }

 private:
  double c_;
};

/// A dynamics model that returns a fixed malformed answer.
class BrokenDynamics : public DynamicsModel {
 public:
  explicit BrokenDynamics(bool wrong_shape) : wrong_shape_(wrong_shape) {}
  std::string name() const override { return "broken"; }
  bool is_deterministic() const override { return true; }
  RowMatrix sample(const RowMatrix& states, const RowMatrix&, Rng&) const override {
    if (wrong_shape_) return RowMatrix::Zero(states.rows(), states.cols() + 1);
    RowMatrix out = states;
    out(0, 0) = std::numeric_limits<double>::quiet_NaN();
    return out;
  }

 private:
  bool wrong_shape_;
};

}  // namespace dard::testing
