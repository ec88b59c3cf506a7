#include "dard/learners.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dard {

using nn::MatrixXd;
using json = nlohmann::json;

namespace {

std::vector<double> to_std(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

VectorXd from_std(const std::vector<double>& v) {
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

MatrixXd gather_rows(const MatrixXd& m, std::span<const Eigen::Index> rows) {
  MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

void check_finite_loss(double loss, const char* what) {
  if (!std::isfinite(loss)) throw DivergenceDetected(std::string(what) + ": training loss became non-finite");
}

/// Mean over all entries of (pred - target)^2; grad is dL/dpred.
double mse_all(const MatrixXd& pred, const MatrixXd& target, MatrixXd* grad) {
  const MatrixXd diff = pred - target;
  const double n = static_cast<double>(diff.size());
  if (grad) *grad = (2.0 / n) * diff;
  return diff.squaredNorm() / n;
}

void apply_update(nn::Mlp& net, nn::AdamState& adam, VectorXd grad, double clip) {
  nn::clip_grad_norm(grad, clip);
  adam.step(net.params(), grad);
}

struct Outcome {
  int epochs = 0;
  double best_val = 0.0;
};

/// Epoch loop with early stopping; restores the best parameters seen.
template <class EpochFn, class ValFn>
Outcome run_training(nn::Mlp& net, const TrainHyper& h, const char* what, EpochFn&& epoch, ValFn&& val) {
  if (h.max_epochs < 1 || h.patience < 1 || h.batch_size < 1 || !(h.lr > 0.0)) {
    throw std::invalid_argument(std::string(what) + ": invalid hyperparameters");
  }
  nn::AdamState adam(net.param_count(), h.lr);
  VectorXd best = net.params();
  Outcome out;
  out.best_val = val();
  int since_best = 0;
  for (int e = 0; e < h.max_epochs; ++e) {
    check_finite_loss(epoch(adam), what);
    const double v = val();
    check_finite_loss(v, what);
    ++out.epochs;
    if (v < out.best_val) {
      out.best_val = v;
      best = net.params();
      since_best = 0;
    } else if (++since_best >= h.patience) {
      break;
    }
  }
  net.params() = best;
  return out;
}

/// Minibatch MSE epoch over rows of (x, y).
double mse_epoch(nn::Mlp& net, nn::AdamState& adam, const MatrixXd& x, const MatrixXd& y,
                 const TrainHyper& h, Rng& rng) {
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(x.rows()));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  rng.shuffle(perm.begin(), perm.end());
  CompensatedSum total;
  nn::Mlp::Cache cache;
  MatrixXd grad_out;
  for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(h.batch_size)) {
    const std::size_t count = std::min(perm.size() - start, static_cast<std::size_t>(h.batch_size));
    std::span<const Eigen::Index> rows(perm.data() + start, count);
    const MatrixXd xb = gather_rows(x, rows);
    const MatrixXd yb = gather_rows(y, rows);
    const MatrixXd pred = net.forward(xb, &cache);
    const double loss = mse_all(pred, yb, &grad_out);
    check_finite_loss(loss, "mse");
    total.add(loss * static_cast<double>(count));
    apply_update(net, adam, net.backward(cache, grad_out), h.grad_clip);
  }
  return total.value() / static_cast<double>(perm.size());
}

std::vector<int> layer_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

std::shared_ptr<LearnedReward> fit_reward_regression(const std::string& method, const std::string& name,
                                                     const balls::BallWorldConfig& cfg, const TransitionBatch& train,
                                                     const TransitionBatch& val, const RewardFunction& target,
                                                     const TrainHyper& h, std::uint64_t seed,
                                                     const std::string& dataset_hash) {
  if (train.size() == 0 || val.size() == 0) throw std::invalid_argument(method + ": empty train or validation data");
  Rng rng(seed);
  FeatureExtractor fe(cfg);
  fe.fit(train);
  const MatrixXd x = fe.transform(train);
  const MatrixXd xv = fe.transform(val);
  const std::vector<double> y_raw = target.evaluate(train);
  const std::vector<double> yv_raw = target.evaluate(val);
  const MeanStdErr stats = mean_std_err(y_raw);
  const double shift = stats.mean;
  const double sd = stats.std_err * std::sqrt(static_cast<double>(y_raw.size()));
  const double scale = sd > 0.0 ? sd : 1.0;
  MatrixXd y(static_cast<Eigen::Index>(y_raw.size()), 1);
  MatrixXd yv(static_cast<Eigen::Index>(yv_raw.size()), 1);
  for (std::size_t i = 0; i < y_raw.size(); ++i) y(static_cast<Eigen::Index>(i), 0) = (y_raw[i] - shift) / scale;
  for (std::size_t i = 0; i < yv_raw.size(); ++i) yv(static_cast<Eigen::Index>(i), 0) = (yv_raw[i] - shift) / scale;

  Rng init = rng.child("init");
  nn::Mlp net(layer_sizes(fe.dim(), h.hidden, 1), init);
  net.zero_output_layer();
  Rng order = rng.child("order");
  const Outcome out = run_training(
      net, h, method.c_str(), [&](nn::AdamState& adam) { return mse_epoch(net, adam, x, y, h, order); },
      [&] { return mse_all(net.forward(xv), yv, nullptr); });

  TrainingManifest manifest{method, seed, h, dataset_hash, out.epochs, out.best_val};
  return std::make_shared<LearnedReward>(name, std::move(fe), std::move(net), shift, scale, std::move(manifest));
}

balls::BallWorldConfig config_of(const TransitionDataset& d) {
  return balls::BallWorldConfig::from_json(d.manifest.env_config);
}

}  // namespace

// ---------------------------------------------------------------------------

FeatureExtractor::FeatureExtractor(balls::BallWorldConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

MatrixXd FeatureExtractor::raw(const TransitionBatch& batch) const {
  batch.check_schema(cfg_.schema());
  const int g = balls::goal_index(cfg_);
  MatrixXd f(batch.size(), dim());
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    const double d0 = std::hypot(batch.s(i, 0) - batch.s(i, g), batch.s(i, 1) - batch.s(i, g + 1));
    const double d1 = std::hypot(batch.s_next(i, 0) - batch.s_next(i, g), batch.s_next(i, 1) - batch.s_next(i, g + 1));
    f(i, 0) = d0;
    f(i, 1) = d1;
    f(i, 2) = d1 - d0;
    f(i, 3) = d1 <= cfg_.goal_threshold ? 1.0 : 0.0;
    for (int b = 1; b < cfg_.n_balls; ++b) {
      const int p = balls::pos_index(b);
      const double dx = batch.s_next(i, p) - batch.s(i, p);
      const double dy = batch.s_next(i, p + 1) - batch.s(i, p + 1);
      f(i, 3 + b) = dx * dx + dy * dy;
    }
    f(i, cfg_.n_balls + 3) = batch.a(i, 0);
    f(i, cfg_.n_balls + 4) = batch.a(i, 1);
  }
  return f;
}

void FeatureExtractor::fit(const TransitionBatch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("FeatureExtractor::fit: empty batch");
  const MatrixXd f = raw(batch);
  mean_ = f.colwise().mean().transpose();
  std_ = ((f.rowwise() - mean_.transpose()).array().square().colwise().mean()).sqrt().transpose();
  for (Eigen::Index j = 0; j < std_.size(); ++j) {
    if (!(std_[j] > 0.0)) std_[j] = 1.0;
  }
}

MatrixXd FeatureExtractor::transform(const TransitionBatch& batch) const {
  if (!fitted()) throw std::logic_error("FeatureExtractor: transform before fit");
  MatrixXd f = raw(batch);
  f.rowwise() -= mean_.transpose();
  f.array().rowwise() /= std_.transpose().array();
  return f;
}

json FeatureExtractor::to_json() const {
  return {{"env_config", cfg_.to_json()}, {"mean", to_std(mean_)}, {"std", to_std(std_)}};
}

FeatureExtractor FeatureExtractor::from_json(const json& j) {
  FeatureExtractor fe(balls::BallWorldConfig::from_json(j.at("env_config")));
  fe.mean_ = from_std(j.at("mean").get<std::vector<double>>());
  fe.std_ = from_std(j.at("std").get<std::vector<double>>());
  if (fe.mean_.size() != fe.dim() || fe.std_.size() != fe.dim()) {
    throw SchemaMismatch("FeatureExtractor: stored statistics have the wrong width");
  }
  return fe;
}

json TrainHyper::to_json() const {
  return {{"hidden", hidden},         {"lr", lr},
          {"batch_size", batch_size}, {"max_epochs", max_epochs},
          {"patience", patience},     {"grad_clip", grad_clip},
          {"n_random_pairs", n_random_pairs}, {"segment_len", segment_len},
          {"pairs_per_epoch", pairs_per_epoch}, {"pair_batch", pair_batch},
          {"val_pairs", val_pairs},   {"reward_reg", reward_reg},
          {"gamma", gamma}};
}

TrainHyper TrainHyper::from_json(const json& j) {
  TrainHyper h;
  h.hidden = j.value("hidden", h.hidden);
  h.lr = j.value("lr", h.lr);
  h.batch_size = j.value("batch_size", h.batch_size);
  h.max_epochs = j.value("max_epochs", h.max_epochs);
  h.patience = j.value("patience", h.patience);
  h.grad_clip = j.value("grad_clip", h.grad_clip);
  h.n_random_pairs = j.value("n_random_pairs", h.n_random_pairs);
  h.segment_len = j.value("segment_len", h.segment_len);
  h.pairs_per_epoch = j.value("pairs_per_epoch", h.pairs_per_epoch);
  h.pair_batch = j.value("pair_batch", h.pair_batch);
  h.val_pairs = j.value("val_pairs", h.val_pairs);
  h.reward_reg = j.value("reward_reg", h.reward_reg);
  h.gamma = j.value("gamma", h.gamma);
  return h;
}

json TrainingManifest::to_json() const {
  return {{"method", method},           {"seed", seed},
          {"hyper", hyper.to_json()},   {"dataset_hash", dataset_hash},
          {"epochs_run", epochs_run},   {"best_val_loss", best_val_loss}};
}

TrainingManifest TrainingManifest::from_json(const json& j) {
  TrainingManifest m;
  m.method = j.at("method").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.hyper = TrainHyper::from_json(j.at("hyper"));
  m.dataset_hash = j.value("dataset_hash", std::string());
  m.epochs_run = j.value("epochs_run", 0);
  m.best_val_loss = j.value("best_val_loss", 0.0);
  return m;
}

// ---------------------------------------------------------------------------

LearnedReward::LearnedReward(std::string name, FeatureExtractor features, nn::Mlp net, double target_shift,
                             double target_scale, TrainingManifest manifest)
    : name_(std::move(name)),
      features_(std::move(features)),
      net_(std::move(net)),
      target_shift_(target_shift),
      target_scale_(target_scale),
      manifest_(std::move(manifest)) {
  if (net_.input_dim() != features_.dim() || net_.output_dim() != 1) {
    throw SchemaMismatch("LearnedReward: network shape does not match features");
  }
}

std::vector<double> LearnedReward::evaluate(const TransitionBatch& batch) const {
  const MatrixXd out = net_.forward(features_.transform(batch));
  std::vector<double> r(static_cast<std::size_t>(out.rows()));
  for (Eigen::Index i = 0; i < out.rows(); ++i) r[static_cast<std::size_t>(i)] = out(i, 0) * target_scale_ + target_shift_;
  return r;
}

json LearnedReward::to_json() const {
  return {{"kind", "learned"}, {"name", name_}, {"method", manifest_.method}, {"seed", manifest_.seed}};
}

json LearnedReward::checkpoint() const {
  return {{"kind", "learned_reward"},        {"name", name_},
          {"features", features_.to_json()}, {"mlp", net_.to_json()},
          {"target_shift", target_shift_},   {"target_scale", target_scale_},
          {"manifest", manifest_.to_json()}};
}

std::shared_ptr<LearnedReward> LearnedReward::from_checkpoint(const json& j) {
  if (j.value("kind", std::string()) != "learned_reward") throw SchemaMismatch("not a learned reward checkpoint");
  return std::make_shared<LearnedReward>(j.at("name").get<std::string>(), FeatureExtractor::from_json(j.at("features")),
                                         nn::Mlp::from_json(j.at("mlp")), j.at("target_shift").get<double>(),
                                         j.at("target_scale").get<double>(), TrainingManifest::from_json(j.at("manifest")));
}

void LearnedReward::save(const std::filesystem::path& path) const { save_json(checkpoint(), path); }

std::shared_ptr<LearnedReward> LearnedReward::load(const std::filesystem::path& path) {
  return from_checkpoint(load_json(path));
}

// ---------------------------------------------------------------------------

std::shared_ptr<LearnedReward> train_regress(const TransitionDataset& train, const TransitionDataset& val,
                                             const RewardFunction& target, const TrainHyper& hyper,
                                             std::uint64_t seed) {
  return fit_reward_regression("regress", "REGRESS", config_of(train), train.batch(), val.batch(), target, hyper,
                               seed, dataset_hash(train));
}

TransitionBatch recombine_pairs(const TransitionDataset& data, int n_random_pairs, Rng& rng) {
  if (n_random_pairs < 0) throw std::invalid_argument("recombine_pairs: negative pair count");
  const TransitionBatch src = data.batch();
  const Eigen::Index n = src.size();
  const Eigen::Index per = 1 + n_random_pairs;
  TransitionBatch out(src.schema, n * per);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.s.row(i * per) = src.s.row(i);
    out.a.row(i * per) = src.a.row(i);
    out.s_next.row(i * per) = src.s_next.row(i);
    for (Eigen::Index k = 1; k < per; ++k) {
      const auto j = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
      out.s.row(i * per + k) = src.s.row(i);
      out.a.row(i * per + k) = src.a.row(j);
      out.s_next.row(i * per + k) = src.s_next.row(j);
    }
  }
  return out;
}

std::shared_ptr<LearnedReward> train_regress_ood(const TransitionDataset& train, const TransitionDataset& val,
                                                 const RewardFunction& target, const TrainHyper& hyper,
                                                 std::uint64_t seed) {
  Rng rng = Rng(seed).child("pairs");
  const TransitionBatch tb = recombine_pairs(train, hyper.n_random_pairs, rng);
  const TransitionBatch vb = recombine_pairs(val, hyper.n_random_pairs, rng);
  return fit_reward_regression("regress_ood", "REGRESS-OOD", config_of(train), tb, vb, target, hyper, seed,
                               dataset_hash(train));
}

std::vector<Segment> make_segments(const TransitionDataset& data, int length, double gamma) {
  if (length < 1) throw std::invalid_argument("make_segments: length must be >= 1");
  std::vector<Segment> out;
  const auto& ts = data.transitions;
  const auto len = static_cast<std::size_t>(length);
  std::size_t run_start = 0;
  std::vector<double> rewards(len);
  for (std::size_t i = 1; i <= ts.size(); ++i) {
    const bool breaks = i == ts.size() || ts[i].episode != ts[i - 1].episode || ts[i].t != ts[i - 1].t + 1;
    if (!breaks) continue;
    for (std::size_t b = run_start; b + len <= i; b += len) {
      for (std::size_t k = 0; k < len; ++k) rewards[k] = ts[b + k].r_gt;
      out.push_back({b, discounted_return(rewards, gamma)});
    }
    run_start = i;
  }
  return out;
}

double preference_label(double ret_first, double ret_second) {
  if (ret_first > ret_second) return 1.0;
  if (ret_first < ret_second) return 0.0;
  return 0.5;
}

namespace {

struct PairSet {
  std::vector<Eigen::Index> rows;  // (pair, segment, step)
  std::vector<double> labels;
};

PairSet draw_pairs(const std::vector<Segment>& segs, std::size_t count, int len, Rng& rng) {
  PairSet out;
  out.rows.reserve(count * 2 * static_cast<std::size_t>(len));
  for (std::size_t p = 0; p < count; ++p) {
    const std::size_t i = rng.index(segs.size());
    std::size_t j = rng.index(segs.size() - 1);
    if (j >= i) ++j;
    for (std::size_t which : {i, j}) {
      for (int t = 0; t < len; ++t) out.rows.push_back(static_cast<Eigen::Index>(segs[which].begin) + t);
    }
    out.labels.push_back(preference_label(segs[i].ret, segs[j].ret));
  }
  return out;
}

}  // namespace

std::shared_ptr<LearnedReward> train_preferences(const TransitionDataset& train, const TransitionDataset& val,
                                                 const TrainHyper& h, std::uint64_t seed) {
  const auto segs = make_segments(train, h.segment_len, h.gamma);
  if (segs.size() < 2) throw std::invalid_argument("train_preferences: fewer than two training segments");
  auto val_segs = make_segments(val, h.segment_len, h.gamma);
  const bool val_own = val_segs.size() >= 2;
  if (h.pair_batch < 1 || h.pairs_per_epoch < 1 || h.val_pairs < 1) {
    throw std::invalid_argument("train_preferences: invalid pair counts");
  }

  Rng rng(seed);
  FeatureExtractor fe(config_of(train));
  fe.fit(train.batch());
  const MatrixXd x = fe.transform(train.batch());
  const MatrixXd xv = val_own ? fe.transform(val.batch()) : x;

  Rng val_rng = rng.child("val_pairs");
  const PairSet val_set = draw_pairs(val_own ? val_segs : segs, static_cast<std::size_t>(h.val_pairs), h.segment_len, val_rng);
  const MatrixXd xv_pairs = gather_rows(xv, val_set.rows);

  Rng init = rng.child("init");
  nn::Mlp net(layer_sizes(fe.dim(), h.hidden, 1), init);
  net.zero_output_layer();
  Rng pair_rng = rng.child("pairs");
  nn::Mlp::Cache cache;
  MatrixXd grad_out;

  auto epoch = [&](nn::AdamState& adam) {
    CompensatedSum total;
    int batches = 0;
    for (int done = 0; done < h.pairs_per_epoch; done += h.pair_batch) {
      const auto count = static_cast<std::size_t>(std::min(h.pair_batch, h.pairs_per_epoch - done));
      const PairSet set = draw_pairs(segs, count, h.segment_len, pair_rng);
      const MatrixXd pred = net.forward(gather_rows(x, set.rows), &cache);
      const double loss = nn::preference_loss(pred, set.labels, h.segment_len, h.reward_reg, &grad_out);
      check_finite_loss(loss, "preferences");
      total.add(loss);
      ++batches;
      apply_update(net, adam, net.backward(cache, grad_out), h.grad_clip);
    }
    return total.value() / batches;
  };
  auto validate = [&] {
    return nn::preference_loss(net.forward(xv_pairs), val_set.labels, h.segment_len, h.reward_reg, nullptr);
  };
  const Outcome out = run_training(net, h, "preferences", epoch, validate);

  TrainingManifest manifest{"preferences", seed, h, dataset_hash(train), out.epochs, out.best_val};
  return std::make_shared<LearnedReward>("PREF", std::move(fe), std::move(net), 0.0, 1.0, std::move(manifest));
}

// ---------------------------------------------------------------------------

namespace {

int ball_inputs(int ball) { return ball == 0 ? 4 : 2; }

void ball_features(const RowMatrix& states, const RowMatrix& actions, Eigen::Index row, int ball,
                   Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> phi) {
  const int v = balls::vel_index(ball);
  phi[0] = states(row, v);
  phi[1] = states(row, v + 1);
  if (ball == 0) {
    phi[2] = actions(row, 0);
    phi[3] = actions(row, 1);
  }
}

void check_dynamics_inputs(const balls::BallWorldConfig& cfg, const RowMatrix& states, const RowMatrix& actions) {
  if (states.cols() != cfg.state_dim() || actions.cols() != cfg.action_dim() || states.rows() != actions.rows()) {
    throw SchemaMismatch("dynamics model: bad input shape");
  }
}

}  // namespace

LsqDynamics::LsqDynamics(balls::BallWorldConfig cfg, std::vector<Eigen::MatrixXd> weights)
    : cfg_(std::move(cfg)), weights_(std::move(weights)) {
  if (static_cast<int>(weights_.size()) != cfg_.n_balls) throw SchemaMismatch("LsqDynamics: one weight block per ball");
  for (int b = 0; b < cfg_.n_balls; ++b) {
    if (weights_[static_cast<std::size_t>(b)].rows() != ball_inputs(b) || weights_[static_cast<std::size_t>(b)].cols() != 4) {
      throw SchemaMismatch("LsqDynamics: weight block has the wrong shape");
    }
  }
}

RowMatrix LsqDynamics::sample(const RowMatrix& states, const RowMatrix& actions, Rng& /*rng*/) const {
  check_dynamics_inputs(cfg_, states, actions);
  RowMatrix next = states;
  Eigen::RowVectorXd phi(4);
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    for (int b = 0; b < cfg_.n_balls; ++b) {
      const int k = ball_inputs(b);
      ball_features(states, actions, i, b, phi.head(k));
      const Eigen::RowVectorXd out = phi.head(k) * weights_[static_cast<std::size_t>(b)];
      const int p = balls::pos_index(b);
      const int v = balls::vel_index(b);
      next(i, p) = states(i, p) + out[0];
      next(i, p + 1) = states(i, p + 1) + out[1];
      next(i, v) = out[2];
      next(i, v + 1) = out[3];
    }
  }
  return next;
}

json LsqDynamics::to_json() const {
  json blocks = json::array();
  for (const auto& w : weights_) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < w.rows(); ++r) rows.push_back(to_std(w.row(r).transpose()));
    blocks.push_back(rows);
  }
  return {{"kind", "lsq_dynamics"}, {"env_config", cfg_.to_json()}, {"weights", blocks}};
}

std::shared_ptr<LsqDynamics> LsqDynamics::from_json(const json& j) {
  if (j.value("kind", std::string()) != "lsq_dynamics") throw SchemaMismatch("not an lsq dynamics checkpoint");
  std::vector<Eigen::MatrixXd> weights;
  for (const auto& block : j.at("weights")) {
    Eigen::MatrixXd w(static_cast<Eigen::Index>(block.size()), 4);
    for (std::size_t r = 0; r < block.size(); ++r) {
      const auto row = block[r].get<std::vector<double>>();
      if (row.size() != 4) throw SchemaMismatch("lsq dynamics: weight row must have 4 entries");
      for (int c = 0; c < 4; ++c) w(static_cast<Eigen::Index>(r), c) = row[static_cast<std::size_t>(c)];
    }
    weights.push_back(std::move(w));
  }
  return std::make_shared<LsqDynamics>(balls::BallWorldConfig::from_json(j.at("env_config")), std::move(weights));
}

std::shared_ptr<LsqDynamics> fit_dynamics_lsq(const TransitionDataset& data, double ridge) {
  if (data.empty()) throw SingularSystem("fit_dynamics_lsq: no transitions");
  const auto cfg = config_of(data);
  const TransitionBatch batch = data.batch();
  batch.check_schema(cfg.schema());
  const Eigen::Index n = batch.size();
  std::vector<Eigen::MatrixXd> weights;
  for (int b = 0; b < cfg.n_balls; ++b) {
    const int k = ball_inputs(b);
    Eigen::MatrixXd phi(n, k);
    Eigen::MatrixXd y(n, 4);
    const int p = balls::pos_index(b);
    const int v = balls::vel_index(b);
    for (Eigen::Index i = 0; i < n; ++i) {
      ball_features(batch.s, batch.a, i, b, phi.row(i));
      y(i, 0) = batch.s_next(i, p) - batch.s(i, p);
      y(i, 1) = batch.s_next(i, p + 1) - batch.s(i, p + 1);
      y(i, 2) = batch.s_next(i, v);
      y(i, 3) = batch.s_next(i, v + 1);
    }
    Eigen::MatrixXd gram = phi.transpose() * phi;
    gram.diagonal().array() += ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-13)) {
      throw SingularSystem("fit_dynamics_lsq: design matrix is rank deficient for ball " + std::to_string(b));
    }
    weights.push_back(ldlt.solve(phi.transpose() * y));
  }
  return std::make_shared<LsqDynamics>(cfg, std::move(weights));
}

// ---------------------------------------------------------------------------

namespace {

/// Inputs scaled by max_speed / accel_bound; outputs [dp, dv] scaled by 1 / (max_speed * dt).
void ball_training_rows(const balls::BallWorldConfig& cfg, const TransitionBatch& batch, bool agent, MatrixXd& x,
                        MatrixXd& y) {
  const Eigen::Index n = batch.size();
  const int per = agent ? 1 : cfg.n_balls - 1;
  const int k = agent ? 4 : 2;
  x.resize(n * per, k);
  y.resize(n * per, 4);
  const double out_scale = 1.0 / (cfg.max_speed * cfg.dt);
  Eigen::Index row = 0;
  Eigen::RowVectorXd phi(4);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int b = agent ? 0 : 1; b < (agent ? 1 : cfg.n_balls); ++b) {
      ball_features(batch.s, batch.a, i, b, phi.head(k));
      x.row(row) = phi.head(k);
      x.row(row).head(2) /= cfg.max_speed;
      if (agent) x.row(row).tail(2) /= cfg.accel_bound;
      const int p = balls::pos_index(b);
      const int v = balls::vel_index(b);
      y(row, 0) = (batch.s_next(i, p) - batch.s(i, p)) * out_scale;
      y(row, 1) = (batch.s_next(i, p + 1) - batch.s(i, p + 1)) * out_scale;
      y(row, 2) = (batch.s_next(i, v) - batch.s(i, v)) * out_scale;
      y(row, 3) = (batch.s_next(i, v + 1) - batch.s(i, v + 1)) * out_scale;
      ++row;
    }
  }
}

}  // namespace

MlpDynamics::MlpDynamics(balls::BallWorldConfig cfg, nn::Mlp agent_net, nn::Mlp other_net)
    : cfg_(std::move(cfg)), agent_net_(std::move(agent_net)), other_net_(std::move(other_net)) {
  if (agent_net_.input_dim() != 4 || agent_net_.output_dim() != 4 || other_net_.input_dim() != 2 ||
      other_net_.output_dim() != 4) {
    throw SchemaMismatch("MlpDynamics: unexpected network shapes");
  }
}

RowMatrix MlpDynamics::sample(const RowMatrix& states, const RowMatrix& actions, Rng& /*rng*/) const {
  check_dynamics_inputs(cfg_, states, actions);
  const Eigen::Index n = states.rows();
  RowMatrix next = states;
  const double out_scale = cfg_.max_speed * cfg_.dt;
  for (int b = 0; b < cfg_.n_balls; ++b) {
    const int k = ball_inputs(b);
    MatrixXd x(n, k);
    Eigen::RowVectorXd phi(4);
    for (Eigen::Index i = 0; i < n; ++i) {
      ball_features(states, actions, i, b, phi.head(k));
      x.row(i) = phi.head(k);
      x.row(i).head(2) /= cfg_.max_speed;
      if (b == 0) x.row(i).tail(2) /= cfg_.accel_bound;
    }
    const MatrixXd out = (b == 0 ? agent_net_ : other_net_).forward(x) * out_scale;
    const int p = balls::pos_index(b);
    const int v = balls::vel_index(b);
    next.col(p) += out.col(0);
    next.col(p + 1) += out.col(1);
    next.col(v) += out.col(2);
    next.col(v + 1) += out.col(3);
  }
  return next;
}

json MlpDynamics::to_json() const {
  return {{"kind", "mlp_dynamics"}, {"env_config", cfg_.to_json()}, {"agent", agent_net_.to_json()},
          {"other", other_net_.to_json()}};
}

std::shared_ptr<MlpDynamics> MlpDynamics::from_json(const json& j) {
  if (j.value("kind", std::string()) != "mlp_dynamics") throw SchemaMismatch("not an mlp dynamics checkpoint");
  return std::make_shared<MlpDynamics>(balls::BallWorldConfig::from_json(j.at("env_config")),
                                       nn::Mlp::from_json(j.at("agent")), nn::Mlp::from_json(j.at("other")));
}

std::shared_ptr<MlpDynamics> fit_dynamics_mlp(const TransitionDataset& train, const TransitionDataset& val,
                                              const TrainHyper& h, std::uint64_t seed) {
  if (train.empty() || val.empty()) throw std::invalid_argument("fit_dynamics_mlp: empty train or validation data");
  const auto cfg = config_of(train);
  if (cfg.n_balls < 2) throw std::invalid_argument("fit_dynamics_mlp: need at least one non-agent ball");
  const TransitionBatch tb = train.batch();
  const TransitionBatch vb = val.batch();
  Rng rng(seed);
  std::vector<nn::Mlp> nets;
  for (bool agent : {true, false}) {
    MatrixXd x, y, xv, yv;
    ball_training_rows(cfg, tb, agent, x, y);
    ball_training_rows(cfg, vb, agent, xv, yv);
    Rng init = rng.child(agent ? "agent_init" : "other_init");
    nn::Mlp net(layer_sizes(agent ? 4 : 2, h.hidden, 4), init);
    Rng order = rng.child(agent ? "agent_order" : "other_order");
    run_training(
        net, h, "dynamics", [&](nn::AdamState& adam) { return mse_epoch(net, adam, x, y, h, order); },
        [&] { return mse_all(net.forward(xv), yv, nullptr); });
    nets.push_back(std::move(net));
  }
  return std::make_shared<MlpDynamics>(cfg, std::move(nets[0]), std::move(nets[1]));
}

DynamicsPtr load_dynamics(const std::filesystem::path& path) {
  const json j = load_json(path);
  const std::string kind = j.value("kind", std::string());
  if (kind == "lsq_dynamics") return LsqDynamics::from_json(j);
  if (kind == "mlp_dynamics") return MlpDynamics::from_json(j);
  throw SchemaMismatch("unknown dynamics checkpoint kind '" + kind + "'");
}

void save_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << j.dump(1) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

json load_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw IoError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace dard
