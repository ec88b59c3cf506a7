#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "dard/bouncing_balls.hpp"
#include "dard/datasets.hpp"
#include "dard/learners.hpp"
#include "dard/metrics.hpp"
#include "dard/oracle_mdp.hpp"

namespace dard::exp {

enum class Metric { kDard, kDardLearned, kEpic, kPearson };
inline constexpr std::array<Metric, 4> kAllMetrics = {Metric::kDard, Metric::kDardLearned, Metric::kEpic,
                                                      Metric::kPearson};
const char* metric_name(Metric m);

struct ExperimentConfig {
  balls::BallWorldConfig env;
  MetricConfig metric;
  int grid_per_dim = 4;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::size_t train_steps = 50000;
  std::size_t val_steps = 12500;
  std::size_t eval_steps = 12500;
  TrainHyper hyper;
  bool include_learned = true;
  int threads = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

/// d[i][j] between rewards i and j; NaN where a transformed reward was degenerate.
using DistanceMatrix = std::vector<std::vector<double>>;

struct PairwiseDistances {
  std::vector<std::string> names;
  DistanceMatrix dard;
  DistanceMatrix dard_learned;  // empty without a learned model
  DistanceMatrix epic;
  DistanceMatrix pearson;

  const DistanceMatrix& get(Metric m) const;
};

/// Every pairwise distance under every metric, with one set of shared draws per metric.
PairwiseDistances evaluate_all(std::span<const RewardPtr> rewards, const CoverageBatch& batch,
                               const DynamicsModel& dyn, const DynamicsModel* learned_dyn,
                               const ActionGrid& grid, const MetricConfig& cfg, Rng& rng);

/// reference vs each candidate, one coverage subsample and draw set per seed.
std::vector<DistanceReport> compare(const TransitionDataset& data, const RewardPtr& reference,
                                    std::span<const RewardPtr> candidates, const DynamicsModel& dyn,
                                    const DynamicsModel* learned_dyn, const ExperimentConfig& cfg);
std::string compare_csv(const std::vector<DistanceReport>& reports, bool with_learned);

// --- Table 1 ----------------------------------------------------------------

inline constexpr std::array<const char*, 2> kCoverages = {"uniform", "expert"};

struct SeedDatasets {
  DatasetSplits uniform;
  DatasetSplits expert;
};

/// Both coverage policies, split train/val/eval at the configured sizes.
SeedDatasets collect_seed_datasets(const ExperimentConfig& cfg, std::uint64_t seed);

struct SeedResult {
  std::uint64_t seed = 0;
  std::array<PairwiseDistances, 2> coverage;  // indexed like kCoverages
};

struct Table1Result {
  std::vector<std::string> rows;
  std::vector<SeedResult> seeds;  // sorted by seed

  /// Distance from row `reference` to row `candidate` for every seed.
  std::vector<double> values(int coverage, Metric m, const std::string& reference, const std::string& candidate) const;
  MeanStdErr cell(int coverage, Metric m, const std::string& reference, const std::string& candidate) const;
  std::string csv() const;
  std::string markdown() const;
};

/// Full pipeline per seed: collect, train, fit dynamics, evaluate. Seeds may run on
/// cfg.threads workers; results do not depend on the thread count.
Table1Result table1(const ExperimentConfig& cfg);
SeedResult table1_seed(const ExperimentConfig& cfg, std::uint64_t seed);

// --- Noise sweep -------------------------------------------------------------

struct NoiseRow {
  double sigma = 0.0;
  std::size_t n = 0;  // 0 for the full-batch distance rows
  Metric metric = Metric::kDard;
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double width = 0.0;
};

struct NoiseSweepConfig {
  std::vector<double> sigmas = {0.0, 0.1, 0.3, 1.0, 3.0};
  std::vector<std::size_t> sample_sizes = {1024, 4096};
  int k = 100;
  double confidence = 0.95;
  std::uint64_t noise_seed = 17;
};

/// Distances GT vs GT + sigma noise on a ball-world dataset, then bootstrap CIs per sample size.
std::vector<NoiseRow> noise_sweep(const TransitionDataset& data, const ExperimentConfig& cfg,
                                  const NoiseSweepConfig& sweep);

/// The same protocol on a tabular MDP: exact distances per sigma, sampled CIs per size.
struct OracleProblem {
  oracle::TabularMdp mdp;
  std::vector<double> coverage;
  oracle::TabularReward reward;
};
OracleProblem make_oracle_problem(int n_states, int n_actions, bool deterministic, std::uint64_t seed);
std::vector<NoiseRow> oracle_noise_sweep(const OracleProblem& problem, std::size_t population,
                                         const NoiseSweepConfig& sweep, std::uint64_t seed);
std::string noise_csv(const std::vector<NoiseRow>& rows);

// --- Randomised rewards ----------------------------------------------------

struct RandomRewardRow {
  int index = 0;
  double w_dist = 0.0;
  double w_act = 0.0;
  double w_goal = 0.0;
  std::array<double, 2> d_dard{};  // per coverage
  double return_proxy = 0.0;
};

std::vector<RandomRewardRow> random_rewards(const TransitionDataset& uniform_eval, const TransitionDataset& expert_eval,
                                            int count, const ExperimentConfig& cfg, std::uint64_t seed);
std::string random_rewards_csv(const std::vector<RandomRewardRow>& rows);

// --- Oracle checks -------------------------------------------------------------

struct OracleCheck {
  std::string name;
  bool pass = false;
  double value = 0.0;  // the worst observed error or the measured quantity
  double bound = 0.0;
};

/// Worst elementwise |T(R + shaping) - T(R)| over n_pairs random (R, phi) on a random MDP.
double max_shaping_invariance_error(oracle::Transform which, int n_states, int n_actions, int n_pairs,
                                    std::uint64_t seed);

/// Worst violations over a pool of random rewards: d(A, A), |d(A, B) - d(B, A)|,
/// and max(0, d(A, C) - d(A, B) - d(B, C)).
struct AxiomReport {
  double identity = 0.0;
  double symmetry = 0.0;
  double triangle = 0.0;
  int triples = 0;
};
AxiomReport pseudometric_axioms(oracle::Transform which, int pool, std::uint64_t seed);

/// Shaping invariance, pseudometric axioms, and exact-vs-sampled agreement on small MDPs.
std::vector<OracleCheck> oracle_check(std::uint64_t seed);

/// One sampled estimate, its exact value, and a bootstrap standard error.
struct ConsistencyTrial {
  double estimate = 0.0;
  double exact = 0.0;
  double std_err = 0.0;
  bool within(double k) const { return std::abs(estimate - exact) <= k * std_err; }
};

/// Sampled EPIC (n_v transitions, n_m draws) against exact EPIC.
ConsistencyTrial epic_consistency_trial(const OracleProblem& problem, const oracle::TabularReward& other,
                                        int n, int bootstrap_reps, std::uint64_t seed);
/// Sampled DARD with the true tabular dynamics against exact DARD.
ConsistencyTrial dard_consistency_trial(const OracleProblem& problem, const oracle::TabularReward& other,
                                        int n, int n_t, int bootstrap_reps, std::uint64_t seed);

/// Helpers shared with the CLI.
std::string format_x1000(double v);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace dard::exp
