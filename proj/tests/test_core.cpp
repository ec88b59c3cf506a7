#include <doctest.h>

#include <cmath>
#include <vector>

#include "dard/core.hpp"

using namespace dard;

TEST_SUITE("core") {
  TEST_CASE("discounted_return") {
    CHECK(discounted_return(std::vector<double>{1, 1, 1}, 0.0) == 1.0);
    CHECK(discounted_return(std::vector<double>{}, 0.95) == 0.0);
    CHECK(discounted_return(std::vector<double>{2, 3, 5}, 0.5) == doctest::Approx(4.75).epsilon(1e-15));
  }

  TEST_CASE("rng is reproducible and children ignore parent consumption") {
    Rng a(42);
    Rng b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng fresh(7);
    Rng used(7);
    for (int i = 0; i < 13; ++i) used.normal();
    Rng c1 = fresh.child("x");
    Rng c2 = used.child("x");
    for (int i = 0; i < 20; ++i) CHECK(c1.uniform() == c2.uniform());

    Rng d1 = fresh.child("x");
    Rng d2 = fresh.child("y");
    CHECK(d1.next_u64() != d2.next_u64());
    CHECK(fresh.child(3).seed() != fresh.child(4).seed());
  }

  TEST_CASE("rng ranges") {
    Rng r(1);
    for (int i = 0; i < 10000; ++i) {
      const double u = r.uniform();
      CHECK(u >= 0.0);
      CHECK(u < 1.0);
      CHECK(r.index(7) < 7u);
    }
  }

  TEST_CASE("rng normal moments") {
    Rng r(3);
    std::vector<double> x(200000);
    for (double& v : x) v = r.normal();
    const auto ms = mean_std_err(x);
    CHECK(std::abs(ms.mean) < 0.01);
    const double sd = ms.std_err * std::sqrt(static_cast<double>(x.size()));
    CHECK(sd == doctest::Approx(1.0).epsilon(0.01));
  }

  TEST_CASE("hash noise is a pure function of content") {
    const std::vector<double> s{1.0, 2.0};
    const std::vector<double> a{0.5};
    const std::vector<double> s2{1.5, 2.0};
    const auto h1 = transition_hash(s, a, s2, 9);
    CHECK(h1 == transition_hash(s, a, s2, 9));
    CHECK(h1 != transition_hash(s, a, s2, 10));
    CHECK(h1 != transition_hash(s2, a, s, 9));
    CHECK(normal_from_hash(h1) == normal_from_hash(h1));

    std::vector<double> z;
    for (std::uint64_t k = 0; k < 100000; ++k) z.push_back(normal_from_hash(splitmix64(k)));
    const auto ms = mean_std_err(z);
    CHECK(std::abs(ms.mean) < 0.02);
    CHECK(ms.std_err * std::sqrt(1e5) == doctest::Approx(1.0).epsilon(0.02));
  }

  TEST_CASE("action box containment") {
    ActionBox box{VectorXd::Constant(2, -5.0), VectorXd::Constant(2, 5.0)};
    CHECK(box.dim() == 2);
    CHECK(box.contains(VectorXd::Zero(2)));
    CHECK(box.contains(VectorXd::Constant(2, 5.0)));
    CHECK_FALSE(box.contains(VectorXd::Constant(2, 5.1)));
    CHECK(box.contains(VectorXd::Constant(2, 5.1), 0.2));
  }

  TEST_CASE("batch from transitions and schema checks") {
    const Schema sch = make_schema("toy", 2, 1);
    CHECK(sch == make_schema("toy", 2, 1));
    CHECK_FALSE(sch.id == make_schema("toy", 3, 1).id);
    std::vector<Transition> ts(3);
    for (int i = 0; i < 3; ++i) {
      ts[static_cast<std::size_t>(i)].s = VectorXd::Constant(2, i);
      ts[static_cast<std::size_t>(i)].a = VectorXd::Constant(1, -i);
      ts[static_cast<std::size_t>(i)].s_next = VectorXd::Constant(2, i + 1);
    }
    const auto batch = TransitionBatch::from_transitions(sch, ts);
    CHECK(batch.size() == 3);
    CHECK(batch.s(2, 1) == 2.0);
    CHECK(batch.a(1, 0) == -1.0);
    CHECK(batch.s_next(0, 0) == 1.0);
    CHECK_NOTHROW(batch.check_schema(sch));
    CHECK_THROWS_AS(batch.check_schema(make_schema("other", 2, 1)), SchemaMismatch);

    ts[1].s = VectorXd::Constant(3, 0.0);
    CHECK_THROWS(TransitionBatch::from_transitions(sch, ts));
  }

  TEST_CASE("compensated summation") {
    std::vector<double> v{1e16, 1.0, -1e16, 1.0};
    CHECK(stable_sum(v) == 2.0);
    CHECK(stable_mean(v) == 0.5);
  }

  TEST_CASE("mean and standard error") {
    const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
    const auto ms = mean_std_err(v);
    CHECK(ms.mean == 2.5);
    CHECK(ms.std_err == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
    CHECK(mean_std_err(std::vector<double>{7.0}).std_err == 0.0);
  }
}
