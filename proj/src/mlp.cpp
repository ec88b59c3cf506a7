#include "dard/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dard::nn {

namespace {

using ConstMap = Eigen::Map<const MatrixXd>;
using ConstVecMap = Eigen::Map<const VectorXd>;
using Map = Eigen::Map<MatrixXd>;
using VecMap = Eigen::Map<VectorXd>;

double log_sigmoid(double x) { return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_sizes(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw std::invalid_argument("Mlp: need input and output sizes");
  for (int s : sizes) {
    if (s < 1) throw std::invalid_argument("Mlp: layer sizes must be positive");
  }
}

}  // namespace

Eigen::Index Mlp::count_params(const std::vector<int>& sizes) {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) n += static_cast<Eigen::Index>(sizes[l + 1]) * (sizes[l] + 1);
  return n;
}

Mlp::Mlp(std::vector<int> sizes, Rng& rng) : sizes_(std::move(sizes)) {
  check_sizes(sizes_);
  params_ = VectorXd::Zero(count_params(sizes_));
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const int in = sizes_[l];
    const int out = sizes_[l + 1];
    const double limit = std::sqrt(6.0 / (in + out));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(in) * out; ++i) params_[offset + i] = rng.uniform(-limit, limit);
    offset += static_cast<Eigen::Index>(in) * out + out;
  }
}

void Mlp::zero_output_layer() {
  const Eigen::Index last = static_cast<Eigen::Index>(sizes_.back()) * (sizes_[sizes_.size() - 2] + 1);
  params_.tail(last).setZero();
}

Mlp::Mlp(std::vector<int> sizes, VectorXd params) : sizes_(std::move(sizes)), params_(std::move(params)) {
  check_sizes(sizes_);
  if (params_.size() != count_params(sizes_)) throw std::invalid_argument("Mlp: parameter count does not match sizes");
}

MatrixXd Mlp::forward(const MatrixXd& x, Cache* cache) const {
  if (x.cols() != input_dim()) throw std::invalid_argument("Mlp::forward: input width mismatch");
  const std::size_t n_layers = sizes_.size() - 1;
  if (cache) {
    cache->activations.clear();
    cache->activations.reserve(n_layers + 1);
    cache->activations.push_back(x);
  }
  MatrixXd a;
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int in = sizes_[l];
    const int out = sizes_[l + 1];
    ConstMap w(params_.data() + offset, out, in);
    ConstVecMap b(params_.data() + offset + static_cast<Eigen::Index>(in) * out, out);
    offset += static_cast<Eigen::Index>(in) * out + out;
    MatrixXd z(x.rows(), out);
    if (l == 0) {
      z.noalias() = x * w.transpose();
    } else {
      z.noalias() = a * w.transpose();
    }
    z.rowwise() += b.transpose();
    // tanh through the vectorised exp; |error| <= 1e-15 against std::tanh.
    if (l + 1 < n_layers) z.array() = 1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0);
    a = std::move(z);
    if (cache) cache->activations.push_back(a);
  }
  return a;
}

VectorXd Mlp::backward(const Cache& cache, const MatrixXd& grad_out) const {
  const std::size_t n_layers = sizes_.size() - 1;
  if (cache.activations.size() != n_layers + 1) throw std::invalid_argument("Mlp::backward: cache does not match network");
  VectorXd grad = VectorXd::Zero(params_.size());
  std::vector<Eigen::Index> offsets(n_layers);
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    offsets[l] = offset;
    offset += static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1] + sizes_[l + 1];
  }
  MatrixXd delta = grad_out;
  for (std::size_t l = n_layers; l-- > 0;) {
    const int in = sizes_[l];
    const int out = sizes_[l + 1];
    const MatrixXd& a_in = cache.activations[l];
    Map gw(grad.data() + offsets[l], out, in);
    VecMap gb(grad.data() + offsets[l] + static_cast<Eigen::Index>(in) * out, out);
    gw.noalias() = delta.transpose() * a_in;
    gb = delta.colwise().sum().transpose();
    if (l > 0) {
      ConstMap w(params_.data() + offsets[l], out, in);
      MatrixXd next = delta * w;
      delta = (next.array() * (1.0 - a_in.array().square())).matrix();
    }
  }
  return grad;
}

nlohmann::json Mlp::to_json() const {
  return {{"sizes", sizes_}, {"params", std::vector<double>(params_.data(), params_.data() + params_.size())}};
}

Mlp Mlp::from_json(const nlohmann::json& j) {
  const auto sizes = j.at("sizes").get<std::vector<int>>();
  const auto flat = j.at("params").get<std::vector<double>>();
  return Mlp(sizes, Eigen::Map<const VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size())));
}

void AdamState::step(VectorXd& params, const VectorXd& grad) {
  if (grad.size() != params.size() || m.size() != params.size()) throw std::invalid_argument("AdamState: size mismatch");
  ++step_count;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

double clip_grad_norm(VectorXd& grad, double max_norm) {
  const double norm = grad.norm();
  if (norm > max_norm && norm > 0.0) grad *= max_norm / norm;
  return norm;
}

double mse_loss(const MatrixXd& pred, const Eigen::Ref<const VectorXd>& target, MatrixXd* grad) {
  if (pred.cols() != 1 || pred.rows() != target.size() || pred.rows() == 0) {
    throw std::invalid_argument("mse_loss: shape mismatch");
  }
  const VectorXd diff = pred.col(0) - target;
  const double n = static_cast<double>(diff.size());
  if (grad) *grad = (2.0 / n) * diff;
  return diff.squaredNorm() / n;
}

std::vector<double> preference_probabilities(const MatrixXd& pred, int segment_len) {
  if (segment_len < 1 || pred.cols() != 1 || pred.rows() % (2 * segment_len) != 0) {
    throw std::invalid_argument("preference_probabilities: shape mismatch");
  }
  const Eigen::Index pairs = pred.rows() / (2 * segment_len);
  std::vector<double> out(static_cast<std::size_t>(pairs));
  for (Eigen::Index p = 0; p < pairs; ++p) {
    const double s0 = pred.col(0).segment(2 * p * segment_len, segment_len).sum();
    const double s1 = pred.col(0).segment((2 * p + 1) * segment_len, segment_len).sum();
    out[static_cast<std::size_t>(p)] = sigmoid(s0 - s1);
  }
  return out;
}

double preference_loss(const MatrixXd& pred, const std::vector<double>& labels, int segment_len,
                       double reg, MatrixXd* grad) {
  if (segment_len < 1 || pred.cols() != 1 || pred.rows() != static_cast<Eigen::Index>(labels.size()) * 2 * segment_len ||
      labels.empty()) {
    throw std::invalid_argument("preference_loss: shape mismatch");
  }
  const auto pairs = static_cast<Eigen::Index>(labels.size());
  const double n_pairs = static_cast<double>(pairs);
  const double n_steps = static_cast<double>(pred.rows());
  if (grad) *grad = MatrixXd::Zero(pred.rows(), 1);
  double loss = 0.0;
  for (Eigen::Index p = 0; p < pairs; ++p) {
    const Eigen::Index o0 = 2 * p * segment_len;
    const Eigen::Index o1 = (2 * p + 1) * segment_len;
    const double logit = pred.col(0).segment(o0, segment_len).sum() - pred.col(0).segment(o1, segment_len).sum();
    const double y = labels[static_cast<std::size_t>(p)];
    loss -= y * log_sigmoid(logit) + (1.0 - y) * log_sigmoid(-logit);
    if (grad) {
      const double g = (sigmoid(logit) - y) / n_pairs;
      grad->col(0).segment(o0, segment_len).array() += g;
      grad->col(0).segment(o1, segment_len).array() -= g;
    }
  }
  loss /= n_pairs;
  loss += reg * pred.col(0).squaredNorm() / n_steps;
  if (grad) grad->col(0) += (2.0 * reg / n_steps) * pred.col(0);
  return loss;
}

double grad_check(const LossFn& loss, const VectorXd& params, Rng& rng, int n_checks, double epsilon,
                  double floor) {
  VectorXd analytic;
  loss(params, &analytic);
  if (analytic.size() != params.size()) throw std::invalid_argument("grad_check: gradient size mismatch");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(params.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  rng.shuffle(idx.begin(), idx.end());
  if (static_cast<std::size_t>(n_checks) < idx.size()) idx.resize(static_cast<std::size_t>(n_checks));

  double worst = 0.0;
  VectorXd probe = params;
  for (Eigen::Index i : idx) {
    probe[i] = params[i] + epsilon;
    const double up = loss(probe, nullptr);
    probe[i] = params[i] - epsilon;
    const double down = loss(probe, nullptr);
    probe[i] = params[i];
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace dard::nn
