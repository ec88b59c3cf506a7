#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "dard/learners.hpp"
#include "dard/mlp.hpp"
#include "dard/reward_spec.hpp"
#include "dard/reward_zoo.hpp"
#include "test_support.hpp"

using namespace dard;
using dard::testing::desk_config;
using dard::testing::uniform_data;
using nn::MatrixXd;

namespace {

MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

nn::LossFn mse_objective(const std::vector<int>& sizes, const MatrixXd& x, const VectorXd& y) {
  return [=](const VectorXd& params, VectorXd* grad) {
    const nn::Mlp net(sizes, params);
    nn::Mlp::Cache cache;
    const MatrixXd pred = net.forward(x, &cache);
    MatrixXd g;
    const double loss = nn::mse_loss(pred, y, grad ? &g : nullptr);
    if (grad) *grad = net.backward(cache, g);
    return loss;
  };
}

std::vector<std::size_t> first_episodes(const TransitionDataset& data, std::int64_t episodes) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.transitions[i].episode < episodes) idx.push_back(i);
  }
  return idx;
}

struct SmallSplits {
  TransitionDataset train;
  TransitionDataset val;
};

SmallSplits small_splits(const TransitionDataset& data) {
  const auto s = split(data, {0.8, 0.2, 0.0}, 3);
  return {s.train, s.val};
}

TrainHyper quick_hyper() {
  TrainHyper h;
  h.max_epochs = 15;
  h.patience = 15;
  return h;
}

}  // namespace

TEST_SUITE("learners") {
  TEST_CASE("gradient check: linear model") {
    Rng rng(1);
    const std::vector<int> sizes{3, 1};
    Rng init(2);
    const nn::Mlp net(sizes, init);
    const MatrixXd x = random_matrix(20, 3, rng);
    const VectorXd y = random_matrix(20, 1, rng).col(0);
    const double err = nn::grad_check(mse_objective(sizes, x, y), net.params(), rng, static_cast<int>(net.param_count()));
    CHECK(err <= 1e-7);
  }

  TEST_CASE("gradient check: tanh network under mse") {
    Rng rng(3);
    const std::vector<int> sizes{5, 8, 8, 1};
    Rng init(4);
    const nn::Mlp net(sizes, init);
    const MatrixXd x = random_matrix(32, 5, rng);
    const VectorXd y = random_matrix(32, 1, rng).col(0);
    CHECK(nn::grad_check(mse_objective(sizes, x, y), net.params(), rng, 100) <= 1e-4);
  }

  TEST_CASE("gradient check: preference loss") {
    Rng rng(5);
    const std::vector<int> sizes{4, 8, 1};
    Rng init(6);
    const nn::Mlp net(sizes, init);
    const int len = 3;
    const int pairs = 6;
    const MatrixXd x = random_matrix(pairs * 2 * len, 4, rng);
    const std::vector<double> labels{1.0, 0.0, 0.5, 1.0, 0.0, 1.0};
    auto loss = [&](const VectorXd& params, VectorXd* grad) {
      const nn::Mlp m(sizes, params);
      nn::Mlp::Cache cache;
      const MatrixXd pred = m.forward(x, &cache);
      MatrixXd g;
      const double l = nn::preference_loss(pred, labels, len, 0.01, grad ? &g : nullptr);
      if (grad) *grad = m.backward(cache, g);
      return l;
    };
    CHECK(nn::grad_check(loss, net.params(), rng, 100) <= 1e-4);
  }

  TEST_CASE("identical segments are equally preferred") {
    MatrixXd pred(4, 1);
    pred << 0.3, -1.0, 0.3, -1.0;
    const auto p = nn::preference_probabilities(pred, 2);
    REQUIRE(p.size() == 1);
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(preference_label(2.0, 1.0) == 1.0);
    CHECK(preference_label(1.0, 2.0) == 0.0);
    CHECK(preference_label(1.0, 1.0) == 0.5);
  }

  TEST_CASE("adam with zero gradient leaves parameters unchanged") {
    VectorXd p = VectorXd::LinSpaced(6, -1.0, 1.0);
    const VectorXd before = p;
    nn::AdamState adam(6, 0.1);
    for (int i = 0; i < 10; ++i) adam.step(p, VectorXd::Zero(6));
    CHECK(p == before);

    VectorXd g = VectorXd::Constant(4, 3.0);
    CHECK(nn::clip_grad_norm(g, 1.0) == doctest::Approx(6.0));
    CHECK(g.norm() == doctest::Approx(1.0));
  }

  TEST_CASE("feature standardisation") {
    FeatureExtractor fe(desk_config());
    const auto batch = uniform_data().batch();
    CHECK(fe.dim() == desk_config().n_balls + 5);
    CHECK_FALSE(fe.fitted());
    fe.fit(batch);
    CHECK(fe.fitted());
    const MatrixXd z = fe.transform(batch);
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      const double mean = z.col(c).mean();
      const double sd = std::sqrt((z.col(c).array() - mean).square().mean());
      CHECK(std::abs(mean) <= 1e-9);
      CHECK(sd == doctest::Approx(1.0).epsilon(1e-9));
    }
    const auto again = FeatureExtractor::from_json(fe.to_json());
    CHECK(again.mean() == fe.mean());
    CHECK(again.stddev() == fe.stddev());
  }

  TEST_CASE("regression onto a zero target predicts zero") {
    const auto s = small_splits(uniform_data());
    const dard::testing::ConstantReward zero(0.0);
    const auto model = train_regress(s.train, s.val, zero, TrainHyper{}, 1);
    const auto pred = model->evaluate(s.val.batch());
    double worst = 0.0;
    for (double v : pred) worst = std::max(worst, std::abs(v));
    MESSAGE("zero target: max |prediction| " << worst << " after " << model->manifest().epochs_run << " epochs");
    CHECK(worst <= 0.01);
  }

  TEST_CASE("regression fits a target that is linear in the features") {
    const auto s = small_splits(uniform_data().subset(first_episodes(uniform_data(), 20)));
    const RandomLinearReward target(desk_config(), 1.0, 0.0, 0.0);
    TrainHyper h = quick_hyper();
    h.hidden = {};
    h.lr = 1e-2;
    h.max_epochs = 60;
    h.patience = 60;
    const auto model = train_regress(s.train, s.val, target, h, 2);
    const auto vb = s.val.batch();
    const auto pred = model->evaluate(vb);
    const auto truth = target.evaluate(vb);
    double mse = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) mse += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    mse /= static_cast<double>(pred.size());
    MESSAGE("linear target validation mse " << mse);
    CHECK(mse <= 1e-3);
  }

  TEST_CASE("recombined pairs keep s and borrow (a, s') from one record") {
    const auto data = uniform_data().subset(first_episodes(uniform_data(), 1));
    Rng rng(4);
    const auto none = recombine_pairs(data, 0, rng);
    const auto batch = data.batch();
    CHECK(none.s == batch.s);
    CHECK(none.a == batch.a);
    CHECK(none.s_next == batch.s_next);

    const auto many = recombine_pairs(data, 3, rng);
    CHECK(many.size() == 4 * batch.size());
    for (Eigen::Index i = 0; i < many.size(); ++i) {
      CHECK(many.s.row(i) == batch.s.row(i / 4));
      bool found = false;
      for (Eigen::Index j = 0; j < batch.size() && !found; ++j) {
        found = many.a.row(i) == batch.a.row(j) && many.s_next.row(i) == batch.s_next.row(j);
      }
      CHECK(found);
    }
    CHECK_THROWS_AS(recombine_pairs(data, -1, rng), std::invalid_argument);
  }

  TEST_CASE("segments tile episodes without crossing boundaries") {
    const auto segs = make_segments(uniform_data(), 25, 0.95);
    const auto& ts = uniform_data().transitions;
    CHECK(segs.size() == uniform_data().size() / 25);
    for (const auto& seg : segs) {
      CHECK(ts[seg.begin].episode == ts[seg.begin + 24].episode);
      std::vector<double> r;
      for (std::size_t k = 0; k < 25; ++k) r.push_back(ts[seg.begin + k].r_gt);
      CHECK(seg.ret == discounted_return(r, 0.95));
    }
  }

  TEST_CASE("preference learning ranks held-out segments") {
    // Relabel returns with a quantity that is one of the extracted features: -|agent - goal|(s').
    TransitionDataset data = uniform_data();
    for (auto& t : data.transitions) t.r_gt = -balls::goal_distance(desk_config(), t.s_next);
    const auto s = small_splits(data);
    TrainHyper h = quick_hyper();
    h.pairs_per_epoch = 2000;
    h.max_epochs = 10;
    const auto model = train_preferences(s.train, s.val, h, 3);
    const auto segs = make_segments(s.val, h.segment_len, h.gamma);
    const auto pred = model->evaluate(s.val.batch());
    auto predicted_return = [&](const Segment& seg) {
      std::vector<double> r(pred.begin() + static_cast<std::ptrdiff_t>(seg.begin),
                            pred.begin() + static_cast<std::ptrdiff_t>(seg.begin) + h.segment_len);
      return discounted_return(r, h.gamma);
    };
    int correct = 0;
    int total = 0;
    for (std::size_t i = 0; i < segs.size(); ++i) {
      for (std::size_t j = i + 1; j < segs.size(); ++j) {
        if (segs[i].ret == segs[j].ret) continue;
        ++total;
        correct += (segs[i].ret > segs[j].ret) == (predicted_return(segs[i]) > predicted_return(segs[j])) ? 1 : 0;
      }
    }
    REQUIRE(total > 100);
    const double acc = static_cast<double>(correct) / total;
    MESSAGE("held-out preference accuracy " << acc);
    CHECK(acc >= 0.9);
  }

  TEST_CASE("least squares dynamics recovers the integrator") {
    // Keep steps where the agent neither bounced nor hit the speed limit.
    const auto& data = uniform_data();
    const double dt = desk_config().dt;
    std::vector<std::size_t> clean;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& t = data.transitions[i];
      const double vx = t.s[2] + t.a[0] * dt;
      const double vy = t.s[3] + t.a[1] * dt;
      if (t.s_next[2] == vx && t.s_next[3] == vy) clean.push_back(i);
    }
    REQUIRE(clean.size() > 1000);
    const auto model = fit_dynamics_lsq(data.subset(clean));
    const auto& w = model->weights()[0];  // rows vx, vy, ax, ay; cols dpx, dpy, v'x, v'y
    CHECK(w(0, 2) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(std::abs(w(2, 2) - dt) <= 1e-6);
    CHECK(std::abs(w(3, 3) - dt) <= 1e-6);
    CHECK(std::abs(w(0, 0) - dt) <= 1e-6);
    CHECK(std::abs(w(2, 0) - dt * dt) <= 1e-6);
    CHECK(std::abs(w(2, 3)) <= 1e-6);

    const auto again = LsqDynamics::from_json(model->to_json());
    Rng rng(1);
    const auto b = data.batch();
    CHECK(again->sample(b.s.topRows(50), b.a.topRows(50), rng) == model->sample(b.s.topRows(50), b.a.topRows(50), rng));
  }

  TEST_CASE("reward checkpoints round trip") {
    const auto s = small_splits(uniform_data().subset(first_episodes(uniform_data(), 5)));
    TrainHyper h = quick_hyper();
    h.max_epochs = 2;
    const auto gt = make_ground_truth(desk_config());
    const auto model = train_regress(s.train, s.val, *make_shaped(desk_config(), kDefaultGamma), h, 9);
    const auto dir = std::filesystem::temp_directory_path() / "dard_learner_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "reward.json";
    model->save(path);
    const auto loaded = LearnedReward::load(path);
    const auto batch = s.val.batch();
    CHECK(loaded->evaluate(batch) == model->evaluate(batch));
    CHECK(loaded->manifest().method == "regress");
    CHECK(loaded->manifest().seed == 9u);

    const RewardContext ctx{desk_config(), kDefaultGamma, dir};
    const auto via_spec = make_reward({{"kind", "learned"}, {"path", "reward.json"}}, ctx);
    CHECK(via_spec->evaluate(batch) == model->evaluate(batch));
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(LearnedReward::load(path), IoError);
  }

  TEST_CASE("training is deterministic in the seed") {
    const auto s = small_splits(uniform_data().subset(first_episodes(uniform_data(), 5)));
    TrainHyper h = quick_hyper();
    h.max_epochs = 3;
    const auto target = make_shaped(desk_config(), kDefaultGamma);
    const auto a = train_regress_ood(s.train, s.val, *target, h, 4);
    const auto b = train_regress_ood(s.train, s.val, *target, h, 4);
    const auto c = train_regress_ood(s.train, s.val, *target, h, 5);
    CHECK(a->net().params() == b->net().params());
    CHECK(a->net().params() != c->net().params());
  }
}
