#include "dard/oracle_mdp.hpp"

#include <algorithm>
#include <cmath>

#include "dard/metrics.hpp"

namespace dard::oracle {

namespace {

void check_sizes(int n_states, int n_actions) {
  if (n_states < 1 || n_states > kMaxStates || n_actions < 1 || n_actions > kMaxActions) {
    throw std::invalid_argument("tabular MDP size outside 1..12 states, 1..5 actions");
  }
}

void check_distribution(const Distribution& d, int n, const char* what) {
  if (static_cast<int>(d.size()) != n) throw std::invalid_argument(std::string(what) + ": wrong length");
  double total = 0.0;
  for (double p : d) {
    if (!(p >= 0.0)) throw std::invalid_argument(std::string(what) + ": negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument(std::string(what) + ": does not sum to 1");
}

void check_reward(const TabularReward& r, const TabularMdp& mdp) {
  if (r.n_states != mdp.n_states || r.n_actions != mdp.n_actions) {
    throw std::invalid_argument("reward table does not match MDP shape");
  }
}

void normalize(std::span<double> row) {
  double total = 0.0;
  for (double v : row) total += v;
  for (double& v : row) v /= total;
}

int to_index(double v, int n, const char* what) {
  const double r = std::round(v);
  if (!(r >= 0.0 && r < n)) throw SchemaMismatch(std::string("tabular ") + what + " index out of range");
  return static_cast<int>(r);
}

}  // namespace

void TabularMdp::validate() const {
  check_sizes(n_states, n_actions);
  if (transition.size() != static_cast<std::size_t>(n_states * n_actions * n_states)) {
    throw std::invalid_argument("TabularMdp: transition table has wrong size");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("TabularMdp: gamma outside [0, 1]");
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      CompensatedSum total;
      for (int x = 0; x < n_states; ++x) {
        const double p = prob(s, a, x);
        if (!(p >= 0.0)) throw std::invalid_argument("TabularMdp: negative probability");
        total.add(p);
      }
      if (std::abs(total.value() - 1.0) > 1e-12) {
        throw std::invalid_argument("TabularMdp: transition row does not sum to 1");
      }
    }
  }
}

bool TabularMdp::is_deterministic() const {
  return std::all_of(transition.begin(), transition.end(), [](double p) { return p == 0.0 || p == 1.0; });
}

TabularMdp TabularMdp::random(int n_states, int n_actions, double gamma, Rng& rng) {
  check_sizes(n_states, n_actions);
  TabularMdp mdp{n_states, n_actions, std::vector<double>(static_cast<std::size_t>(n_states * n_actions * n_states)), gamma};
  for (std::size_t row = 0; row < static_cast<std::size_t>(n_states * n_actions); ++row) {
    std::span<double> probs(mdp.transition.data() + row * static_cast<std::size_t>(n_states),
                            static_cast<std::size_t>(n_states));
    for (double& p : probs) p = rng.uniform(0.05, 1.0);
    normalize(probs);
  }
  return mdp;
}

TabularMdp TabularMdp::random_deterministic(int n_states, int n_actions, double gamma, Rng& rng) {
  check_sizes(n_states, n_actions);
  TabularMdp mdp{n_states, n_actions, std::vector<double>(static_cast<std::size_t>(n_states * n_actions * n_states), 0.0), gamma};
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      mdp.prob(s, a, static_cast<int>(rng.index(static_cast<std::size_t>(n_states)))) = 1.0;
    }
  }
  return mdp;
}

TabularMdp TabularMdp::chain(int n_states, double gamma) {
  check_sizes(n_states, 1);
  TabularMdp mdp{n_states, 1, std::vector<double>(static_cast<std::size_t>(n_states * n_states), 0.0), gamma};
  for (int s = 0; s < n_states; ++s) mdp.prob(s, 0, (s + 1) % n_states) = 1.0;
  return mdp;
}

TabularReward::TabularReward(int n_states_in, int n_actions_in, double fill)
    : n_states(n_states_in),
      n_actions(n_actions_in),
      values(static_cast<std::size_t>(n_states_in * n_actions_in * n_states_in), fill) {}

TabularReward TabularReward::random(int n_states, int n_actions, Rng& rng) {
  TabularReward r(n_states, n_actions);
  for (double& v : r.values) v = rng.normal();
  return r;
}

TabularReward TabularReward::shaping(int n_states, int n_actions, const std::vector<double>& phi,
                                     double gamma) {
  if (static_cast<int>(phi.size()) != n_states) throw std::invalid_argument("shaping: phi has wrong length");
  TabularReward r(n_states, n_actions);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      for (int x = 0; x < n_states; ++x) r(s, a, x) = gamma * phi[static_cast<std::size_t>(x)] - phi[static_cast<std::size_t>(s)];
    }
  }
  return r;
}

TabularReward TabularReward::plus(const TabularReward& other) const {
  if (other.n_states != n_states || other.n_actions != n_actions) {
    throw std::invalid_argument("TabularReward::plus: shape mismatch");
  }
  TabularReward out = *this;
  for (std::size_t i = 0; i < values.size(); ++i) out.values[i] += other.values[i];
  return out;
}

TabularReward TabularReward::affine(double lambda, double c) const {
  TabularReward out = *this;
  for (double& v : out.values) v = lambda * v + c;
  return out;
}

TabularReward add_hash_noise(const TabularReward& r, double sigma, std::uint64_t seed) {
  TabularReward out = r;
  for (int s = 0; s < r.n_states; ++s) {
    for (int a = 0; a < r.n_actions; ++a) {
      for (int x = 0; x < r.n_states; ++x) {
        const double ds = s;
        const double da = a;
        const double dx = x;
        out(s, a, x) += sigma * normal_from_hash(transition_hash({&ds, 1}, {&da, 1}, {&dx, 1}, seed));
      }
    }
  }
  return out;
}

Distribution uniform_distribution(int n) {
  if (n < 1) throw std::invalid_argument("uniform_distribution: n must be >= 1");
  return Distribution(static_cast<std::size_t>(n), 1.0 / n);
}

Distribution stationary_distribution(const TabularMdp& mdp) {
  mdp.validate();
  const int n = mdp.n_states;
  Distribution p = uniform_distribution(n);
  Distribution next(static_cast<std::size_t>(n));
  // Lazy chain (half self-loop) has the same fixed point and converges for periodic chains.
  for (int iter = 0; iter < 1000000; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int s = 0; s < n; ++s) {
      for (int a = 0; a < mdp.n_actions; ++a) {
        for (int x = 0; x < n; ++x) next[static_cast<std::size_t>(x)] += p[static_cast<std::size_t>(s)] * mdp.prob(s, a, x) / mdp.n_actions;
      }
    }
    double change = 0.0;
    for (int s = 0; s < n; ++s) {
      const double v = 0.5 * p[static_cast<std::size_t>(s)] + 0.5 * next[static_cast<std::size_t>(s)];
      change += std::abs(v - p[static_cast<std::size_t>(s)]);
      next[static_cast<std::size_t>(s)] = v;
    }
    p.swap(next);
    normalize(p);
    if (change < 1e-12) break;
  }
  return p;
}

std::vector<double> uniform_policy_coverage(const TabularMdp& mdp) {
  const Distribution d = stationary_distribution(mdp);
  std::vector<double> cov(mdp.transition.size());
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      for (int x = 0; x < mdp.n_states; ++x) {
        cov[static_cast<std::size_t>((s * mdp.n_actions + a) * mdp.n_states + x)] =
            d[static_cast<std::size_t>(s)] * mdp.prob(s, a, x) / mdp.n_actions;
      }
    }
  }
  return cov;
}

Distribution state_marginal(const TabularMdp& mdp, const std::vector<double>& coverage) {
  Distribution d(static_cast<std::size_t>(mdp.n_states), 0.0);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      for (int x = 0; x < mdp.n_states; ++x) {
        d[static_cast<std::size_t>(s)] += coverage[static_cast<std::size_t>((s * mdp.n_actions + a) * mdp.n_states + x)];
      }
    }
  }
  return d;
}

Distribution action_marginal(const TabularMdp& mdp, const std::vector<double>& coverage) {
  Distribution d(static_cast<std::size_t>(mdp.n_actions), 0.0);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      for (int x = 0; x < mdp.n_states; ++x) {
        d[static_cast<std::size_t>(a)] += coverage[static_cast<std::size_t>((s * mdp.n_actions + a) * mdp.n_states + x)];
      }
    }
  }
  return d;
}

TabularReward exact_epic_canonicalize(const TabularReward& r, const Distribution& d_s,
                                      const Distribution& d_a, double gamma) {
  const int ns = r.n_states;
  const int na = r.n_actions;
  check_distribution(d_s, ns, "state distribution");
  check_distribution(d_a, na, "action distribution");
  // m[x] = E[R(x, U, X')]
  std::vector<double> m(static_cast<std::size_t>(ns), 0.0);
  for (int x = 0; x < ns; ++x) {
    CompensatedSum acc;
    for (int u = 0; u < na; ++u) {
      for (int y = 0; y < ns; ++y) acc.add(d_a[static_cast<std::size_t>(u)] * d_s[static_cast<std::size_t>(y)] * r(x, u, y));
    }
    m[static_cast<std::size_t>(x)] = acc.value();
  }
  CompensatedSum c_acc;
  for (int x = 0; x < ns; ++x) c_acc.add(d_s[static_cast<std::size_t>(x)] * m[static_cast<std::size_t>(x)]);
  const double c = c_acc.value();

  TabularReward out(ns, na);
  for (int s = 0; s < ns; ++s) {
    for (int a = 0; a < na; ++a) {
      for (int x = 0; x < ns; ++x) {
        out(s, a, x) = r(s, a, x) + gamma * m[static_cast<std::size_t>(x)] - m[static_cast<std::size_t>(s)] - gamma * c;
      }
    }
  }
  return out;
}

TabularReward exact_dard_transform(const TabularReward& r, const TabularMdp& mdp,
                                   const Distribution& d_a) {
  mdp.validate();
  check_reward(r, mdp);
  const int ns = mdp.n_states;
  const int na = mdp.n_actions;
  check_distribution(d_a, na, "action distribution");
  const auto pa = [&](int u) { return d_a[static_cast<std::size_t>(u)]; };

  // step[x] = E[R(x, A, X'')], X'' ~ P(.|x, A)
  std::vector<double> step(static_cast<std::size_t>(ns), 0.0);
  for (int x = 0; x < ns; ++x) {
    CompensatedSum acc;
    for (int u = 0; u < na; ++u) {
      for (int y = 0; y < ns; ++y) acc.add(pa(u) * mdp.prob(x, u, y) * r(x, u, y));
    }
    step[static_cast<std::size_t>(x)] = acc.value();
  }

  // cross[s][s'] = E[R(X', A2, X'')], X' ~ P(.|s, A1), X'' ~ P(.|s', A2)
  std::vector<double> cross(static_cast<std::size_t>(ns * ns), 0.0);
  for (int s = 0; s < ns; ++s) {
    for (int sn = 0; sn < ns; ++sn) {
      CompensatedSum acc;
      for (int u1 = 0; u1 < na; ++u1) {
        for (int x1 = 0; x1 < ns; ++x1) {
          const double w1 = pa(u1) * mdp.prob(s, u1, x1);
          if (w1 == 0.0) continue;
          for (int u2 = 0; u2 < na; ++u2) {
            for (int x2 = 0; x2 < ns; ++x2) {
              const double w2 = pa(u2) * mdp.prob(sn, u2, x2);
              if (w2 == 0.0) continue;
              acc.add(w1 * w2 * r(x1, u2, x2));
            }
          }
        }
      }
      cross[static_cast<std::size_t>(s * ns + sn)] = acc.value();
    }
  }

  TabularReward out(ns, na);
  const double g = mdp.gamma;
  for (int s = 0; s < ns; ++s) {
    for (int a = 0; a < na; ++a) {
      for (int x = 0; x < ns; ++x) {
        out(s, a, x) = r(s, a, x) + g * step[static_cast<std::size_t>(x)] - step[static_cast<std::size_t>(s)] -
                       g * cross[static_cast<std::size_t>(s * ns + x)];
      }
    }
  }
  return out;
}

double exact_distance(const TabularReward& ra, const TabularReward& rb, Transform which,
                      const TabularMdp& mdp, const std::vector<double>& coverage) {
  check_reward(ra, mdp);
  check_reward(rb, mdp);
  if (coverage.size() != ra.size()) throw std::invalid_argument("exact_distance: coverage has wrong size");
  check_distribution(coverage, static_cast<int>(coverage.size()), "coverage");
  switch (which) {
    case Transform::kEpic: {
      const Distribution d_s = state_marginal(mdp, coverage);
      const Distribution d_a = action_marginal(mdp, coverage);
      return weighted_pearson_distance(exact_epic_canonicalize(ra, d_s, d_a, mdp.gamma).values,
                                       exact_epic_canonicalize(rb, d_s, d_a, mdp.gamma).values, coverage);
    }
    case Transform::kDard: {
      const Distribution d_a = uniform_distribution(mdp.n_actions);
      return weighted_pearson_distance(exact_dard_transform(ra, mdp, d_a).values,
                                       exact_dard_transform(rb, mdp, d_a).values, coverage);
    }
    case Transform::kPearson:
      return weighted_pearson_distance(ra.values, rb.values, coverage);
  }
  throw std::invalid_argument("exact_distance: unknown transform");
}

Schema tabular_schema() { return make_schema("tabular", 1, 1); }

std::vector<double> TabularRewardFunction::evaluate(const TransitionBatch& batch) const {
  batch.check_schema(tabular_schema());
  std::vector<double> out(static_cast<std::size_t>(batch.size()));
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    out[static_cast<std::size_t>(i)] = table_(to_index(batch.s(i, 0), table_.n_states, "state"),
                                              to_index(batch.a(i, 0), table_.n_actions, "action"),
                                              to_index(batch.s_next(i, 0), table_.n_states, "state"));
  }
  return out;
}

TabularDynamics::TabularDynamics(TabularMdp mdp) : mdp_(std::move(mdp)) {
  mdp_.validate();
  deterministic_ = mdp_.is_deterministic();
}

RowMatrix TabularDynamics::sample(const RowMatrix& states, const RowMatrix& actions, Rng& rng) const {
  if (states.cols() != 1 || actions.cols() != 1 || states.rows() != actions.rows()) {
    throw SchemaMismatch("tabular dynamics: bad input shape");
  }
  RowMatrix next(states.rows(), 1);
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    const int s = to_index(states(i, 0), mdp_.n_states, "state");
    const int a = to_index(actions(i, 0), mdp_.n_actions, "action");
    int chosen = mdp_.n_states - 1;
    if (deterministic_) {
      for (int x = 0; x < mdp_.n_states; ++x) {
        if (mdp_.prob(s, a, x) == 1.0) chosen = x;
      }
    } else {
      double u = rng.uniform();
      for (int x = 0; x < mdp_.n_states; ++x) {
        u -= mdp_.prob(s, a, x);
        if (u < 0.0) {
          chosen = x;
          break;
        }
      }
    }
    next(i, 0) = chosen;
  }
  return next;
}

TransitionBatch sample_coverage(const TabularMdp& mdp, const std::vector<double>& coverage,
                                std::size_t n, Rng& rng) {
  if (coverage.size() != mdp.transition.size()) throw std::invalid_argument("sample_coverage: coverage has wrong size");
  std::vector<double> cdf(coverage.size());
  double total = 0.0;
  for (std::size_t i = 0; i < coverage.size(); ++i) {
    total += coverage[i];
    cdf[i] = total;
  }
  TransitionBatch batch(tabular_schema(), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    // Skip zero-weight cells that share the same cumulative value.
    auto flat = static_cast<int>(std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1));
    while (coverage[static_cast<std::size_t>(flat)] == 0.0 && flat > 0) --flat;
    const auto row = static_cast<Eigen::Index>(i);
    batch.s_next(row, 0) = flat % mdp.n_states;
    batch.a(row, 0) = (flat / mdp.n_states) % mdp.n_actions;
    batch.s(row, 0) = flat / (mdp.n_states * mdp.n_actions);
  }
  return batch;
}

std::vector<VectorXd> all_actions(const TabularMdp& mdp) {
  std::vector<VectorXd> out;
  for (int a = 0; a < mdp.n_actions; ++a) out.push_back(VectorXd::Constant(1, a));
  return out;
}

}  // namespace dard::oracle
