#include "dard/reward_zoo.hpp"

#include <cmath>
#include <cstdio>

namespace dard {

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

double hashed_noise(const TransitionBatch& batch, Eigen::Index i, std::uint64_t seed) {
  const auto row = [&](const RowMatrix& m) {
    return std::span<const double>(m.row(i).data(), static_cast<std::size_t>(m.cols()));
  };
  return normal_from_hash(transition_hash(row(batch.s), row(batch.a), row(batch.s_next), seed));
}

bool feasible_row(const balls::BallWorldConfig& cfg, const ActionBox& box, double bound, double tol,
                  const Eigen::Ref<const VectorXd>& s, const Eigen::Ref<const VectorXd>& a,
                  const Eigen::Ref<const VectorXd>& s_next) {
  for (int b = 0; b < cfg.n_balls; ++b) {
    const int p = balls::pos_index(b);
    if (std::hypot(s_next[p] - s[p], s_next[p + 1] - s[p + 1]) > bound) return false;
  }
  const int g = balls::goal_index(cfg);
  if (std::hypot(s_next[g] - s[g], s_next[g + 1] - s[g + 1]) > tol) return false;
  return box.contains(a, tol);
}

}  // namespace

ShapedReward::ShapedReward(RewardPtr base, PotentialPtr phi, double gamma, std::string name)
    : base_(std::move(base)), phi_(std::move(phi)), gamma_(gamma), name_(std::move(name)) {
  require(base_ && phi_, "ShapedReward: null base or potential");
}

std::vector<double> ShapedReward::evaluate(const TransitionBatch& batch) const {
  std::vector<double> out = base_->evaluate(batch);
  const std::vector<double> phi_s = phi_->evaluate(batch.s);
  const std::vector<double> phi_next = phi_->evaluate(batch.s_next);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += gamma_ * phi_next[i] - phi_s[i];
  return out;
}

nlohmann::json ShapedReward::to_json() const {
  return {{"kind", "shaped"}, {"base", base_->to_json()}, {"potential", phi_->to_json()}, {"gamma", gamma_}};
}

AffineReward::AffineReward(RewardPtr base, double scale, double shift)
    : base_(std::move(base)), scale_(scale), shift_(shift) {
  require(base_ != nullptr, "AffineReward: null base");
}

std::string AffineReward::name() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g*%s%+g", scale_, base_->name().c_str(), shift_);
  return buf;
}

std::vector<double> AffineReward::evaluate(const TransitionBatch& batch) const {
  std::vector<double> out = base_->evaluate(batch);
  for (double& v : out) v = scale_ * v + shift_;
  return out;
}

nlohmann::json AffineReward::to_json() const {
  return {{"kind", "affine"}, {"base", base_->to_json()}, {"scale", scale_}, {"shift", shift_}};
}

bool feasibility_predicate(const balls::BallWorldConfig& cfg, const Transition& t,
                           const FeasibilityParams& params) {
  if (t.s.size() != cfg.state_dim() || t.s_next.size() != cfg.state_dim() || t.a.size() != cfg.action_dim()) {
    throw SchemaMismatch("feasibility_predicate: transition is not a ball-world transition");
  }
  const double tol = params.tol_per_arena * cfg.arena;
  return feasible_row(cfg, cfg.action_box(), params.reach * cfg.max_speed * cfg.dt + tol, tol, t.s, t.a, t.s_next);
}

std::vector<char> feasible_mask(const balls::BallWorldConfig& cfg, const TransitionBatch& batch,
                                const FeasibilityParams& params) {
  batch.check_schema(cfg.schema());
  const double tol = params.tol_per_arena * cfg.arena;
  const double bound = params.reach * cfg.max_speed * cfg.dt + tol;
  const ActionBox box = cfg.action_box();
  std::vector<char> mask(static_cast<std::size_t>(batch.size()));
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    mask[static_cast<std::size_t>(i)] = feasible_row(cfg, box, bound, tol, batch.s.row(i).transpose(),
                                                     batch.a.row(i).transpose(), batch.s_next.row(i).transpose());
  }
  return mask;
}

FeasibilityReward::FeasibilityReward(RewardPtr base, balls::BallWorldConfig cfg, double noise_std,
                                     std::uint64_t seed, FeasibilityParams params)
    : base_(std::move(base)), cfg_(std::move(cfg)), noise_std_(noise_std), seed_(seed), params_(params) {
  require(base_ != nullptr, "FeasibilityReward: null base");
  require(noise_std_ >= 0.0, "FeasibilityReward: negative noise_std");
  require(params_.reach > 0.0, "FeasibilityReward: reach must be positive");
}

std::vector<double> FeasibilityReward::evaluate(const TransitionBatch& batch) const {
  std::vector<double> out = base_->evaluate(batch);
  const std::vector<char> mask = feasible_mask(cfg_, batch, params_);
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) out[static_cast<std::size_t>(i)] = noise_std_ * hashed_noise(batch, i, seed_);
  }
  return out;
}

nlohmann::json FeasibilityReward::to_json() const {
  return {{"kind", "feasibility"},       {"base", base_->to_json()}, {"noise_std", noise_std_},
          {"seed", seed_},              {"reach", params_.reach},   {"tol_per_arena", params_.tol_per_arena}};
}

NoisyReward::NoisyReward(RewardPtr base, double sigma, std::uint64_t seed)
    : base_(std::move(base)), sigma_(sigma), seed_(seed) {
  require(base_ != nullptr, "NoisyReward: null base");
  require(sigma_ >= 0.0, "NoisyReward: negative sigma");
}

std::string NoisyReward::name() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s+noise(%g)", base_->name().c_str(), sigma_);
  return buf;
}

std::vector<double> NoisyReward::evaluate(const TransitionBatch& batch) const {
  std::vector<double> out = base_->evaluate(batch);
  if (sigma_ == 0.0) return out;
  for (Eigen::Index i = 0; i < batch.size(); ++i) out[static_cast<std::size_t>(i)] += sigma_ * hashed_noise(batch, i, seed_);
  return out;
}

nlohmann::json NoisyReward::to_json() const {
  return {{"kind", "noisy"}, {"base", base_->to_json()}, {"sigma", sigma_}, {"seed", seed_}};
}

RandomLinearReward::RandomLinearReward(balls::BallWorldConfig cfg, double w_dist, double w_act, double w_goal)
    : cfg_(std::move(cfg)), schema_(cfg_.schema()), w_dist_(w_dist), w_act_(w_act), w_goal_(w_goal) {
  require(w_dist_ >= 0.0 && w_dist_ <= 1.0, "RandomLinearReward: w_dist outside [0, 1]");
  require(w_act_ >= 0.0 && w_act_ <= 1.0, "RandomLinearReward: w_act outside [0, 1]");
  require(w_goal_ >= -1.0 && w_goal_ <= 1.0, "RandomLinearReward: w_goal outside [-1, 1]");
}

std::vector<double> RandomLinearReward::evaluate(const TransitionBatch& batch) const {
  batch.check_schema(schema_);
  const int g = balls::goal_index(cfg_);
  std::vector<double> out(static_cast<std::size_t>(batch.size()));
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    const double d = std::hypot(batch.s_next(i, 0) - batch.s_next(i, g), batch.s_next(i, 1) - batch.s_next(i, g + 1));
    const double reached = d <= cfg_.goal_threshold ? 1.0 : 0.0;
    out[static_cast<std::size_t>(i)] = -w_dist_ * d - w_act_ * batch.a.row(i).norm() + w_goal_ * reached;
  }
  return out;
}

nlohmann::json RandomLinearReward::to_json() const {
  return {{"kind", "random_linear"}, {"w_dist", w_dist_}, {"w_act", w_act_}, {"w_goal", w_goal_}};
}

RandomLinearReward sample_random_reward(const balls::BallWorldConfig& cfg, Rng& rng) {
  const double w_dist = rng.uniform();
  const double w_act = rng.uniform();
  const double w_goal = rng.uniform(-1.0, 1.0);
  return RandomLinearReward(cfg, w_dist, w_act, w_goal);
}

}  // namespace dard
