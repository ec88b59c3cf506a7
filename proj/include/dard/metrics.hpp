#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dard/core.hpp"
#include "dard/datasets.hpp"

namespace dard {

/// Cross product of per-dimension linearly spaced values.
struct ActionGrid {
  std::vector<VectorXd> actions;
  int per_dim_count = 0;

  /// per_dim_count == 1 places the single value at the box centre.
  static ActionGrid linspace(const ActionBox& box, int per_dim_count);
  /// Explicit action list (e.g. every action of a tabular MDP).
  static ActionGrid from_actions(std::vector<VectorXd> actions);
  std::size_t size() const { return actions.size(); }
};

/// How the E[R(S', A, S'')] term pairs its samples.
enum class DardPairing {
  kAllPairs,       // every (x') against every (u, x''): O(N_A^2 N_T^2) per transition
  kRandomMatched,  // one random (u, x'') per x': O(N_A N_T) per transition
};

struct MetricConfig {
  int n_v = 10000;
  int n_m = 1024;
  int n_t = 1;
  double gamma = kDefaultGamma;
  std::uint64_t seed = 0;
  DardPairing pairing = DardPairing::kAllPairs;

  void validate() const;
};

/// Joint coverage transitions plus the state/action marginals used by EPIC.
struct CoverageBatch {
  TransitionBatch transitions;
  RowMatrix state_pool;
  RowMatrix action_pool;

  void validate() const;
  /// Up to n_v transitions drawn without replacement; pools span the whole dataset.
  static CoverageBatch from_dataset(const TransitionDataset& dataset, int n_v, Rng& rng);
  /// All transitions; pools built from the same transitions.
  static CoverageBatch from_batch(TransitionBatch batch);
};

/// sqrt(1 - rho) / sqrt(2), computed as half the distance between the standardised
/// vectors. Throws DegenerateVariance if either input is constant.
double pearson_distance(std::span<const double> x, std::span<const double> y);
/// Population Pearson distance under non-negative weights.
double weighted_pearson_distance(std::span<const double> x, std::span<const double> y,
                                 std::span<const double> weights);

// --- EPIC -------------------------------------------------------------------

/// Indices into the pools for the n_m canonicalisation samples (X, U, X').
struct EpicDraws {
  std::vector<std::size_t> x;
  std::vector<std::size_t> u;
  std::vector<std::size_t> x_next;
};

EpicDraws draw_epic(const CoverageBatch& batch, const MetricConfig& cfg, Rng& rng);

/// Canonicalise several rewards with one shared set of draws.
std::vector<std::vector<double>> epic_canonicalize_many(std::span<const RewardFunction* const> rewards,
                                                        const CoverageBatch& batch,
                                                        const EpicDraws& draws, double gamma);
std::vector<double> epic_canonicalize(const RewardFunction& r, const CoverageBatch& batch,
                                      const MetricConfig& cfg, Rng& rng);
double epic_distance(const RewardFunction& ra, const RewardFunction& rb, const CoverageBatch& batch,
                     const MetricConfig& cfg, Rng& rng);

// --- DARD -------------------------------------------------------------------

/// Transform several rewards with identical sampled actions and next states.
std::vector<std::vector<double>> dard_transform_many(std::span<const RewardFunction* const> rewards,
                                                     const DynamicsModel& dyn,
                                                     const CoverageBatch& batch,
                                                     const ActionGrid& grid,
                                                     const MetricConfig& cfg, Rng& rng);
std::vector<double> dard_transform(const RewardFunction& r, const DynamicsModel& dyn,
                                   const CoverageBatch& batch, const ActionGrid& grid,
                                   const MetricConfig& cfg, Rng& rng);
double dard_distance(const RewardFunction& ra, const RewardFunction& rb, const DynamicsModel& dyn,
                     const CoverageBatch& batch, const ActionGrid& grid, const MetricConfig& cfg,
                     Rng& rng);

/// Plain Pearson distance of the raw rewards on the coverage transitions.
double direct_pearson_distance(const RewardFunction& ra, const RewardFunction& rb,
                               const CoverageBatch& batch);

// --- Reports and resampling -------------------------------------------------

struct DistanceReport {
  std::string reference;
  std::string candidate;
  double d_epic = 0.0;
  double d_dard = 0.0;
  std::optional<double> d_dard_learned;
  double d_pearson = 0.0;
  std::vector<double> epic_per_seed;
  std::vector<double> dard_per_seed;
  std::vector<double> dard_learned_per_seed;
  std::vector<double> pearson_per_seed;
  double se_epic = 0.0;
  double se_dard = 0.0;
  double se_dard_learned = 0.0;
  double se_pearson = 0.0;

  /// Fill means and standard errors from the per-seed vectors.
  void summarize();
};

struct BootstrapCi {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double width = 0.0;
  std::vector<double> values;
};

/// Index-level bootstrap: `metric_fn` receives the drawn indices.
using SubsetMetric = std::function<double(std::span<const std::size_t> indices, Rng& rng)>;

/// k subsets of size n (without replacement within a subset); percentile CI.
/// A subset whose metric throws DegenerateVariance is redrawn up to 10 times.
BootstrapCi bootstrap_ci(const SubsetMetric& metric_fn, std::size_t population_size, std::size_t n,
                         int k, double confidence, Rng& rng);
BootstrapCi bootstrap_ci(const std::function<double(const TransitionDataset&, Rng&)>& metric_fn,
                         const TransitionDataset& population, std::size_t n, int k,
                         double confidence, Rng& rng);

/// Standard deviation of `replicates` re-estimates on with-replacement resamples.
double bootstrap_standard_error(const SubsetMetric& estimator, std::size_t population_size,
                                int replicates, Rng& rng);

/// Linear-interpolation quantile of an unsorted sample, q in [0, 1].
double quantile(std::vector<double> values, double q);

}  // namespace dard
