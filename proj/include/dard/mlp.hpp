#pragma once

#include <functional>
#include <vector>

#include "dard/core.hpp"

namespace dard::nn {

using Eigen::MatrixXd;

/// Fully connected tanh network with a linear output layer. Parameters live in
/// one flat vector: for each layer, W (out x in, column-major) then b.
class Mlp {
 public:
  /// Per-layer post-activation values from the last forward pass (input first).
  struct Cache {
    std::vector<MatrixXd> activations;
  };

  Mlp() = default;
  /// Glorot-uniform weights, zero biases.
  Mlp(std::vector<int> sizes, Rng& rng);
  Mlp(std::vector<int> sizes, VectorXd params);

  const std::vector<int>& sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  Eigen::Index param_count() const { return params_.size(); }
  /// Zeroes the last layer so the network starts as the constant 0.
  void zero_output_layer();
  const VectorXd& params() const { return params_; }
  VectorXd& params() { return params_; }

  /// x is n x input_dim; result is n x output_dim.
  MatrixXd forward(const MatrixXd& x, Cache* cache = nullptr) const;
  /// Gradient of the loss w.r.t. params given dL/d(output) for the cached pass.
  VectorXd backward(const Cache& cache, const MatrixXd& grad_out) const;

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

 private:
  static Eigen::Index count_params(const std::vector<int>& sizes);
  std::vector<int> sizes_;
  VectorXd params_;
};

struct AdamState {
  VectorXd m;
  VectorXd v;
  long step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(Eigen::Index n = 0, double lr_in = 1e-3)
      : m(VectorXd::Zero(n)), v(VectorXd::Zero(n)), lr(lr_in) {}
  void step(VectorXd& params, const VectorXd& grad);
};

/// Rescales grad in place so its Euclidean norm is at most max_norm; returns the original norm.
double clip_grad_norm(VectorXd& grad, double max_norm);

/// mean((pred - target)^2); grad (if given) is dL/dpred.
double mse_loss(const MatrixXd& pred, const Eigen::Ref<const VectorXd>& target, MatrixXd* grad);

/// Bradley-Terry cross-entropy over segment pairs plus reg * mean(r^2).
/// pred holds per-step rewards ordered (pair, segment 0/1, step); labels[p] = P(segment 0 preferred).
double preference_loss(const MatrixXd& pred, const std::vector<double>& labels, int segment_len,
                       double reg, MatrixXd* grad);

/// P(segment 0 preferred) for each pair.
std::vector<double> preference_probabilities(const MatrixXd& pred, int segment_len);

/// Loss at params; writes the analytic gradient when grad is non-null.
using LossFn = std::function<double(const VectorXd& params, VectorXd* grad)>;

/// Max |analytic - numeric| / max(|analytic|, |numeric|, floor) over n_checks random
/// coordinates, numeric by central differences with step epsilon.
double grad_check(const LossFn& loss, const VectorXd& params, Rng& rng, int n_checks = 50,
                  double epsilon = 1e-5, double floor = 1e-6);

}  // namespace dard::nn
