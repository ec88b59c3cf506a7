#pragma once

#include <vector>

#include "dard/core.hpp"

namespace dard::oracle {

inline constexpr int kMaxStates = 12;
inline constexpr int kMaxActions = 5;

/// Probability vector over a finite set.
using Distribution = std::vector<double>;

/// Finite MDP with table P[s][a][s'] stored flat.
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> transition;  // index (s * n_actions + a) * n_states + s'
  double gamma = kDefaultGamma;

  double prob(int s, int a, int s_next) const {
    return transition[static_cast<std::size_t>((s * n_actions + a) * n_states + s_next)];
  }
  double& prob(int s, int a, int s_next) {
    return transition[static_cast<std::size_t>((s * n_actions + a) * n_states + s_next)];
  }
  /// Throws std::invalid_argument on a bad size or a row not summing to 1 within 1e-12.
  void validate() const;
  bool is_deterministic() const;

  /// Dense random rows; every entry is positive.
  static TabularMdp random(int n_states, int n_actions, double gamma, Rng& rng);
  /// Each (s, a) moves to one uniformly chosen successor.
  static TabularMdp random_deterministic(int n_states, int n_actions, double gamma, Rng& rng);
  /// s -> s + 1 mod n with a single action.
  static TabularMdp chain(int n_states, double gamma);
};

/// Reward table R[s][a][s'], same flat layout as TabularMdp::transition.
struct TabularReward {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> values;

  TabularReward() = default;
  TabularReward(int n_states_in, int n_actions_in, double fill = 0.0);

  double operator()(int s, int a, int s_next) const {
    return values[static_cast<std::size_t>((s * n_actions + a) * n_states + s_next)];
  }
  double& operator()(int s, int a, int s_next) {
    return values[static_cast<std::size_t>((s * n_actions + a) * n_states + s_next)];
  }
  std::size_t size() const { return values.size(); }

  static TabularReward random(int n_states, int n_actions, Rng& rng);
  /// gamma * phi[s'] - phi[s].
  static TabularReward shaping(int n_states, int n_actions, const std::vector<double>& phi, double gamma);
  /// this + other, elementwise.
  TabularReward plus(const TabularReward& other) const;
  /// lambda * this + c.
  TabularReward affine(double lambda, double c) const;
};

/// Same table plus sigma * z, with z the per-entry hash noise used by NoisyReward.
TabularReward add_hash_noise(const TabularReward& r, double sigma, std::uint64_t seed);

Distribution uniform_distribution(int n);
/// Stationary state distribution under uniformly random actions (power iteration to 1e-12).
Distribution stationary_distribution(const TabularMdp& mdp);
/// Joint weights over (s, a, s'): stationary(s) * uniform(a) * P(s'|s, a).
std::vector<double> uniform_policy_coverage(const TabularMdp& mdp);
Distribution state_marginal(const TabularMdp& mdp, const std::vector<double>& coverage);
Distribution action_marginal(const TabularMdp& mdp, const std::vector<double>& coverage);

TabularReward exact_epic_canonicalize(const TabularReward& r, const Distribution& d_s,
                                      const Distribution& d_a, double gamma);
/// Literal enumeration: x' ~ P(.|s, u1), u2, x'' ~ P(.|s', u2).
TabularReward exact_dard_transform(const TabularReward& r, const TabularMdp& mdp,
                                   const Distribution& d_a);

enum class Transform { kEpic, kDard, kPearson };

/// Population pseudometric under the coverage weights. EPIC uses the coverage
/// marginals for its state and action distributions; DARD uses uniform actions.
double exact_distance(const TabularReward& ra, const TabularReward& rb, Transform which,
                      const TabularMdp& mdp, const std::vector<double>& coverage);

// --- Adapters for the sampled estimators ------------------------------------
// A tabular state or action is a length-1 vector holding its index.

Schema tabular_schema();

class TabularRewardFunction : public RewardFunction {
 public:
  TabularRewardFunction(TabularReward table, std::string name = "tabular")
      : table_(std::move(table)), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  std::vector<double> evaluate(const TransitionBatch& batch) const override;
  const TabularReward& table() const { return table_; }

 private:
  TabularReward table_;
  std::string name_;
};

class TabularDynamics : public DynamicsModel {
 public:
  explicit TabularDynamics(TabularMdp mdp);
  std::string name() const override { return "tabular"; }
  bool is_deterministic() const override { return deterministic_; }
  RowMatrix sample(const RowMatrix& states, const RowMatrix& actions, Rng& rng) const override;

 private:
  TabularMdp mdp_;
  bool deterministic_;
};

/// n i.i.d. transitions from the joint coverage weights.
TransitionBatch sample_coverage(const TabularMdp& mdp, const std::vector<double>& coverage,
                                std::size_t n, Rng& rng);

/// Every action of the MDP as a grid for the sampled DARD estimator.
std::vector<VectorXd> all_actions(const TabularMdp& mdp);

}  // namespace dard::oracle
