#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "dard/bouncing_balls.hpp"
#include "dard/core.hpp"
#include "dard/datasets.hpp"
#include "dard/mlp.hpp"

namespace dard {

/// Hand-built ball-world features, standardised with stored statistics:
/// [d(s), d(s'), d(s') - d(s), [goal reached](s'), |dp_b|^2 for each other ball, a_x, a_y].
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  explicit FeatureExtractor(balls::BallWorldConfig cfg);

  int dim() const { return cfg_.n_balls + 5; }
  const balls::BallWorldConfig& config() const { return cfg_; }

  nn::MatrixXd raw(const TransitionBatch& batch) const;
  /// Stores per-feature mean and std (std 0 is replaced by 1).
  void fit(const TransitionBatch& batch);
  nn::MatrixXd transform(const TransitionBatch& batch) const;
  bool fitted() const { return mean_.size() == dim(); }

  const VectorXd& mean() const { return mean_; }
  const VectorXd& stddev() const { return std_; }

  nlohmann::json to_json() const;
  static FeatureExtractor from_json(const nlohmann::json& j);

 private:
  balls::BallWorldConfig cfg_;
  VectorXd mean_;
  VectorXd std_;
};

struct TrainHyper {
  std::vector<int> hidden = {32, 32};
  double lr = 1e-3;
  int batch_size = 256;
  int max_epochs = 40;
  int patience = 5;
  double grad_clip = 1.0;
  // REGRESS-OOD
  int n_random_pairs = 10;
  // PREFERENCES
  int segment_len = 25;
  int pairs_per_epoch = 4000;
  int pair_batch = 32;
  int val_pairs = 1000;
  double reward_reg = 0.01;
  double gamma = kDefaultGamma;

  nlohmann::json to_json() const;
  static TrainHyper from_json(const nlohmann::json& j);
};

/// Training provenance stored with a checkpoint.
struct TrainingManifest {
  std::string method;
  std::uint64_t seed = 0;
  TrainHyper hyper;
  std::string dataset_hash;
  int epochs_run = 0;
  double best_val_loss = 0.0;

  nlohmann::json to_json() const;
  static TrainingManifest from_json(const nlohmann::json& j);
};

/// MLP over FeatureExtractor features; output = net(x) * target_scale + target_shift.
class LearnedReward : public RewardFunction {
 public:
  LearnedReward(std::string name, FeatureExtractor features, nn::Mlp net, double target_shift,
                double target_scale, TrainingManifest manifest);

  std::string name() const override { return name_; }
  std::vector<double> evaluate(const TransitionBatch& batch) const override;
  nlohmann::json to_json() const override;

  nlohmann::json checkpoint() const;
  static std::shared_ptr<LearnedReward> from_checkpoint(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static std::shared_ptr<LearnedReward> load(const std::filesystem::path& path);

  const nn::Mlp& net() const { return net_; }
  const FeatureExtractor& features() const { return features_; }
  const TrainingManifest& manifest() const { return manifest_; }

 private:
  std::string name_;
  FeatureExtractor features_;
  nn::Mlp net_;
  double target_shift_;
  double target_scale_;
  TrainingManifest manifest_;
};

/// MSE regression onto `target` with early stopping on the validation loss.
std::shared_ptr<LearnedReward> train_regress(const TransitionDataset& train, const TransitionDataset& val,
                                             const RewardFunction& target, const TrainHyper& hyper,
                                             std::uint64_t seed);

/// Each record contributes itself plus n_random_pairs records (s_i, a_j, s'_j), j random.
TransitionBatch recombine_pairs(const TransitionDataset& data, int n_random_pairs, Rng& rng);

std::shared_ptr<LearnedReward> train_regress_ood(const TransitionDataset& train, const TransitionDataset& val,
                                                 const RewardFunction& target, const TrainHyper& hyper,
                                                 std::uint64_t seed);

/// Contiguous window [begin, begin + length) of one episode.
struct Segment {
  std::size_t begin = 0;
  double ret = 0.0;
};

/// Non-overlapping windows of `length` steps inside episodes; returns are discounted GT returns.
std::vector<Segment> make_segments(const TransitionDataset& data, int length, double gamma);

/// Label P(first preferred): 1, 0, or 0.5 on ties.
double preference_label(double ret_first, double ret_second);

/// Bradley-Terry reward learning from synthetic preferences over GT returns.
std::shared_ptr<LearnedReward> train_preferences(const TransitionDataset& train, const TransitionDataset& val,
                                                 const TrainHyper& hyper, std::uint64_t seed);

// --- Dynamics ----------------------------------------------------------------

/// Per-ball linear model: dp = phi W_p, v' = phi W_v with phi = [v] or [v, a] for the agent.
class LsqDynamics : public DynamicsModel {
 public:
  LsqDynamics(balls::BallWorldConfig cfg, std::vector<Eigen::MatrixXd> weights);
  std::string name() const override { return "lsq"; }
  bool is_deterministic() const override { return true; }
  RowMatrix sample(const RowMatrix& states, const RowMatrix& actions, Rng& rng) const override;

  /// weights[b] is (2 or 4) x 4: columns dp_x, dp_y, v'_x, v'_y.
  const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
  nlohmann::json to_json() const;
  static std::shared_ptr<LsqDynamics> from_json(const nlohmann::json& j);

 private:
  balls::BallWorldConfig cfg_;
  std::vector<Eigen::MatrixXd> weights_;
};

/// Ridge-regularised normal equations (ridge 1e-8) per ball.
std::shared_ptr<LsqDynamics> fit_dynamics_lsq(const TransitionDataset& data, double ridge = 1e-8);

/// Per-ball MLPs predicting [dp, dv] from [v] (plus the action for the agent).
class MlpDynamics : public DynamicsModel {
 public:
  MlpDynamics(balls::BallWorldConfig cfg, nn::Mlp agent_net, nn::Mlp other_net);
  std::string name() const override { return "mlp"; }
  bool is_deterministic() const override { return true; }
  RowMatrix sample(const RowMatrix& states, const RowMatrix& actions, Rng& rng) const override;

  nlohmann::json to_json() const;
  static std::shared_ptr<MlpDynamics> from_json(const nlohmann::json& j);

 private:
  balls::BallWorldConfig cfg_;
  nn::Mlp agent_net_;
  nn::Mlp other_net_;
};

std::shared_ptr<MlpDynamics> fit_dynamics_mlp(const TransitionDataset& train, const TransitionDataset& val,
                                              const TrainHyper& hyper, std::uint64_t seed);

/// Loads either dynamics checkpoint kind.
DynamicsPtr load_dynamics(const std::filesystem::path& path);
void save_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json load_json(const std::filesystem::path& path);

}  // namespace dard
