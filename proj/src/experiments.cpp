#include "dard/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "dard/reward_spec.hpp"
#include "dard/reward_zoo.hpp"

namespace dard::exp {

using json = nlohmann::json;
using oracle::TabularReward;
using oracle::Transform;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

DistanceMatrix pairwise(const std::vector<std::vector<double>>& vecs) {
  const std::size_t n = vecs.size();
  DistanceMatrix d(n, std::vector<double>(n, kNaN));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      try {
        d[i][j] = pearson_distance(vecs[i], vecs[j]);
        d[j][i] = pearson_distance(vecs[j], vecs[i]);
      } catch (const DegenerateVariance&) {
        // left as NaN
      }
    }
  }
  return d;
}

std::vector<const RewardFunction*> raw_ptrs(std::span<const RewardPtr> rewards) {
  std::vector<const RewardFunction*> out;
  for (const auto& r : rewards) out.push_back(r.get());
  return out;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

/// n distinct indices out of [0, population), in draw order.
std::vector<std::size_t> draw_subset(std::size_t population, std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.index(population - i)]);
  idx.resize(n);
  return idx;
}

TransitionBatch batch_rows(const TransitionBatch& src, std::span<const std::size_t> rows) {
  TransitionBatch out(src.schema, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    const auto k = static_cast<Eigen::Index>(i);
    out.s.row(k) = src.s.row(r);
    out.a.row(k) = src.a.row(r);
    out.s_next.row(k) = src.s_next.row(r);
  }
  return out;
}

double as_x1000_or_nan(double v) { return 1000.0 * v; }

}  // namespace

const char* metric_name(Metric m) {
  switch (m) {
    case Metric::kDard:
      return "dard";
    case Metric::kDardLearned:
      return "dard_learned";
    case Metric::kEpic:
      return "epic";
    case Metric::kPearson:
      return "pearson";
  }
  return "?";
}

std::string format_x1000(double v) {
  if (std::isnan(v)) return "nan";
  return fmt("%.3f", as_x1000_or_nan(v));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  env.validate();
  metric.validate();
  if (seeds.empty()) throw std::invalid_argument("experiment config: seeds must be non-empty");
  if (grid_per_dim < 1) throw std::invalid_argument("experiment config: grid_per_dim must be >= 1");
  if (train_steps == 0 || val_steps == 0 || eval_steps == 0) {
    throw std::invalid_argument("experiment config: dataset sizes must be positive");
  }
  if (threads < 1) throw std::invalid_argument("experiment config: threads must be >= 1");
}

json ExperimentConfig::to_json() const {
  return {{"env", env.to_json()},
          {"metric",
           {{"n_v", metric.n_v},
            {"n_m", metric.n_m},
            {"n_t", metric.n_t},
            {"gamma", metric.gamma},
            {"pairing", metric.pairing == DardPairing::kAllPairs ? "all_pairs" : "random_matched"}}},
          {"grid_per_dim", grid_per_dim},
          {"seeds", seeds},
          {"train_steps", train_steps},
          {"val_steps", val_steps},
          {"eval_steps", eval_steps},
          {"hyper", hyper.to_json()},
          {"include_learned", include_learned},
          {"threads", threads}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  if (j.contains("env")) c.env = balls::BallWorldConfig::from_json(j.at("env"));
  if (j.contains("metric")) {
    const json& m = j.at("metric");
    c.metric.n_v = m.value("n_v", c.metric.n_v);
    c.metric.n_m = m.value("n_m", c.metric.n_m);
    c.metric.n_t = m.value("n_t", c.metric.n_t);
    c.metric.gamma = m.value("gamma", c.metric.gamma);
    const std::string pairing = m.value("pairing", std::string("all_pairs"));
    if (pairing == "all_pairs") {
      c.metric.pairing = DardPairing::kAllPairs;
    } else if (pairing == "random_matched") {
      c.metric.pairing = DardPairing::kRandomMatched;
    } else {
      throw std::invalid_argument("unknown pairing '" + pairing + "'");
    }
  }
  c.grid_per_dim = j.value("grid_per_dim", c.grid_per_dim);
  c.seeds = j.value("seeds", c.seeds);
  c.train_steps = j.value("train_steps", c.train_steps);
  c.val_steps = j.value("val_steps", c.val_steps);
  c.eval_steps = j.value("eval_steps", c.eval_steps);
  if (j.contains("hyper")) c.hyper = TrainHyper::from_json(j.at("hyper"));
  c.include_learned = j.value("include_learned", c.include_learned);
  c.threads = j.value("threads", c.threads);
  c.validate();
  return c;
}

const DistanceMatrix& PairwiseDistances::get(Metric m) const {
  switch (m) {
    case Metric::kDard:
      return dard;
    case Metric::kDardLearned:
      return dard_learned;
    case Metric::kEpic:
      return epic;
    case Metric::kPearson:
      return pearson;
  }
  throw std::invalid_argument("unknown metric");
}

PairwiseDistances evaluate_all(std::span<const RewardPtr> rewards, const CoverageBatch& batch,
                               const DynamicsModel& dyn, const DynamicsModel* learned_dyn,
                               const ActionGrid& grid, const MetricConfig& cfg, Rng& rng) {
  const auto ptrs = raw_ptrs(rewards);
  PairwiseDistances out;
  for (const auto& r : rewards) out.names.push_back(r->name());

  Rng dard_rng = rng.child("dard");
  out.dard = pairwise(dard_transform_many(ptrs, dyn, batch, grid, cfg, dard_rng));
  if (learned_dyn) {
    Rng learned_rng = rng.child("dard_learned");
    out.dard_learned = pairwise(dard_transform_many(ptrs, *learned_dyn, batch, grid, cfg, learned_rng));
  }
  Rng epic_rng = rng.child("epic");
  const EpicDraws draws = draw_epic(batch, cfg, epic_rng);
  out.epic = pairwise(epic_canonicalize_many(ptrs, batch, draws, cfg.gamma));

  std::vector<std::vector<double>> direct;
  for (const auto* r : ptrs) direct.push_back(r->evaluate(batch.transitions));
  out.pearson = pairwise(direct);
  return out;
}

std::vector<DistanceReport> compare(const TransitionDataset& data, const RewardPtr& reference,
                                    std::span<const RewardPtr> candidates, const DynamicsModel& dyn,
                                    const DynamicsModel* learned_dyn, const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<RewardPtr> all{reference};
  all.insert(all.end(), candidates.begin(), candidates.end());
  std::vector<DistanceReport> reports(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    reports[i].reference = reference->name();
    reports[i].candidate = candidates[i]->name();
  }
  const ActionGrid grid = ActionGrid::linspace(cfg.env.action_box(), cfg.grid_per_dim);
  std::vector<std::uint64_t> seeds = cfg.seeds;
  std::sort(seeds.begin(), seeds.end());
  for (std::uint64_t seed : seeds) {
    Rng rng(seed);
    Rng cov_rng = rng.child("coverage");
    const CoverageBatch batch = CoverageBatch::from_dataset(data, cfg.metric.n_v, cov_rng);
    const PairwiseDistances pd = evaluate_all(all, batch, dyn, learned_dyn, grid, cfg.metric, rng);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      reports[i].dard_per_seed.push_back(pd.dard[0][i + 1]);
      if (learned_dyn) reports[i].dard_learned_per_seed.push_back(pd.dard_learned[0][i + 1]);
      reports[i].epic_per_seed.push_back(pd.epic[0][i + 1]);
      reports[i].pearson_per_seed.push_back(pd.pearson[0][i + 1]);
    }
  }
  for (auto& r : reports) r.summarize();
  return reports;
}

std::string compare_csv(const std::vector<DistanceReport>& reports, bool with_learned) {
  std::ostringstream os;
  os << "reward_name,d_dard_x1000,d_dard_learned_x1000,d_epic_x1000,d_pearson_x1000,"
        "se_dard_x1000,se_dard_learned_x1000,se_epic_x1000,se_pearson_x1000,flag\n";
  for (const auto& r : reports) {
    const bool degenerate = std::isnan(r.d_dard) || std::isnan(r.d_epic) || std::isnan(r.d_pearson) ||
                            (with_learned && r.d_dard_learned && std::isnan(*r.d_dard_learned));
    os << r.candidate << ',' << format_x1000(r.d_dard) << ','
       << (with_learned && r.d_dard_learned ? format_x1000(*r.d_dard_learned) : "") << ',' << format_x1000(r.d_epic)
       << ',' << format_x1000(r.d_pearson) << ',' << format_x1000(r.se_dard) << ','
       << (with_learned ? format_x1000(r.se_dard_learned) : "") << ',' << format_x1000(r.se_epic) << ','
       << format_x1000(r.se_pearson) << ',' << (degenerate ? "degenerate" : "") << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

SeedDatasets collect_seed_datasets(const ExperimentConfig& cfg, std::uint64_t seed) {
  const std::size_t total = cfg.train_steps + cfg.val_steps + cfg.eval_steps;
  const double n = static_cast<double>(total);
  const std::array<double, 3> fractions = {static_cast<double>(cfg.train_steps) / n,
                                           static_cast<double>(cfg.val_steps) / n,
                                           1.0 - static_cast<double>(cfg.train_steps + cfg.val_steps) / n};
  const Rng root(seed);
  const balls::UniformPolicy uniform(cfg.env);
  const balls::ScriptedExpert expert(cfg.env);
  SeedDatasets out;
  out.uniform = split(collect(cfg.env, uniform, total, root.child("collect/uniform").seed()), fractions,
                      root.child("split/uniform").seed());
  out.expert = split(collect(cfg.env, expert, total, root.child("collect/expert").seed()), fractions,
                     root.child("split/expert").seed());
  return out;
}

SeedResult table1_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  const Rng root(seed);
  const SeedDatasets data = collect_seed_datasets(cfg, seed);
  const double gamma = cfg.metric.gamma;

  std::vector<RewardPtr> rewards = {make_ground_truth(cfg.env), make_shaped(cfg.env, gamma),
                                    make_feasibility(cfg.env, gamma)};
  std::vector<std::string> names = {"GT", "SHAPING", "FEASIBILITY"};
  if (cfg.include_learned) {
    const TransitionDataset train = concat(data.uniform.train, data.expert.train);
    const TransitionDataset val = concat(data.uniform.val, data.expert.val);
    const RewardPtr& shaped = rewards[1];
    TrainHyper hyper = cfg.hyper;
    hyper.gamma = gamma;
    rewards.push_back(train_regress(train, val, *shaped, hyper, root.child("regress").seed()));
    rewards.push_back(train_regress_ood(train, val, *shaped, hyper, root.child("regress_ood").seed()));
    rewards.push_back(train_preferences(train, val, hyper, root.child("preferences").seed()));
    names.insert(names.end(), {"REGRESS", "REGRESS-OOD", "PREF"});
  }

  const balls::ConstantVelocityDynamics cv(cfg.env);
  const auto lsq = fit_dynamics_lsq(data.uniform.train);
  const ActionGrid grid = ActionGrid::linspace(cfg.env.action_box(), cfg.grid_per_dim);

  SeedResult result;
  result.seed = seed;
  for (std::size_t c = 0; c < kCoverages.size(); ++c) {
    const TransitionDataset& eval = c == 0 ? data.uniform.eval : data.expert.eval;
    Rng rng = root.child(std::string("evaluate/") + kCoverages[c]);
    Rng cov_rng = rng.child("coverage");
    const CoverageBatch batch = CoverageBatch::from_dataset(eval, cfg.metric.n_v, cov_rng);
    result.coverage[c] = evaluate_all(rewards, batch, cv, lsq.get(), grid, cfg.metric, rng);
    result.coverage[c].names = names;
  }
  return result;
}

Table1Result table1(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<std::uint64_t> seeds = cfg.seeds;
  std::sort(seeds.begin(), seeds.end());
  std::vector<SeedResult> results(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        results[i] = table1_seed(cfg, seeds[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n_threads = std::min<int>(cfg.threads, static_cast<int>(seeds.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  Table1Result out;
  out.rows = results.front().coverage[0].names;
  out.seeds = std::move(results);
  return out;
}

std::vector<double> Table1Result::values(int coverage, Metric m, const std::string& reference,
                                         const std::string& candidate) const {
  const auto find = [&](const std::string& name) {
    const auto it = std::find(rows.begin(), rows.end(), name);
    if (it == rows.end()) throw std::invalid_argument("table1: unknown row '" + name + "'");
    return static_cast<std::size_t>(it - rows.begin());
  };
  const std::size_t i = find(reference);
  const std::size_t j = find(candidate);
  std::vector<double> v;
  for (const auto& s : seeds) {
    const DistanceMatrix& d = s.coverage[static_cast<std::size_t>(coverage)].get(m);
    v.push_back(d.empty() ? kNaN : d[i][j]);
  }
  return v;
}

MeanStdErr Table1Result::cell(int coverage, Metric m, const std::string& reference,
                              const std::string& candidate) const {
  return mean_std_err(values(coverage, m, reference, candidate));
}

std::string Table1Result::csv() const {
  std::ostringstream os;
  os << "coverage,reward";
  for (Metric m : kAllMetrics) os << ",d_" << metric_name(m) << "_x1000,se_" << metric_name(m) << "_x1000";
  os << '\n';
  for (int c = 0; c < static_cast<int>(kCoverages.size()); ++c) {
    for (const auto& row : rows) {
      os << kCoverages[static_cast<std::size_t>(c)] << ',' << row;
      for (Metric m : kAllMetrics) {
        const MeanStdErr v = cell(c, m, "GT", row);
        os << ',' << format_x1000(v.mean) << ',' << format_x1000(v.std_err);
      }
      os << '\n';
    }
  }
  return os.str();
}

std::string Table1Result::markdown() const {
  static const char* labels[] = {"DARD", "DARD-L", "EPIC", "Pearson"};
  std::ostringstream os;
  os << "| Reward |";
  for (const char* cov : {"uni", "exp"}) {
    for (const char* l : labels) os << ' ' << l << " (" << cov << ") |";
  }
  os << "\n|---|";
  for (int k = 0; k < 8; ++k) os << "---:|";
  os << '\n';
  for (const auto& row : rows) {
    os << "| " << row << " |";
    for (int c = 0; c < 2; ++c) {
      for (Metric m : kAllMetrics) {
        const MeanStdErr v = cell(c, m, "GT", row);
        if (std::isnan(v.mean)) {
          os << " nan |";
        } else {
          os << ' ' << fmt("%.2f", 1000.0 * v.mean) << " ± " << fmt("%.2f", 1000.0 * v.std_err) << " |";
        }
      }
    }
    os << '\n';
  }
  os << "\nDistances to GT x1000, mean ± standard error over " << seeds.size() << " seeds.\n";
  return os.str();
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::array<Metric, 3> kSweepMetrics = {Metric::kDard, Metric::kEpic, Metric::kPearson};

void push_ci_rows(std::vector<NoiseRow>& rows, double sigma, std::size_t n, Metric m, std::vector<double> values,
                  double confidence) {
  NoiseRow row{sigma, n, m};
  const double tail = 0.5 * (1.0 - confidence);
  row.mean = stable_mean(values);
  row.lo = quantile(values, tail);
  row.hi = quantile(values, 1.0 - tail);
  row.width = row.hi - row.lo;
  rows.push_back(row);
}

}  // namespace

std::vector<NoiseRow> noise_sweep(const TransitionDataset& data, const ExperimentConfig& cfg,
                                  const NoiseSweepConfig& sweep) {
  cfg.validate();
  if (sweep.k < 2) throw std::invalid_argument("noise_sweep: k must be >= 2");
  const RewardPtr gt = make_ground_truth(cfg.env);
  std::vector<RewardPtr> rewards{gt};
  for (double sigma : sweep.sigmas) rewards.push_back(std::make_shared<NoisyReward>(gt, sigma, sweep.noise_seed));
  const balls::ConstantVelocityDynamics cv(cfg.env);
  const ActionGrid grid = ActionGrid::linspace(cfg.env.action_box(), cfg.grid_per_dim);
  const std::uint64_t seed = cfg.seeds.front();

  std::vector<NoiseRow> rows;
  {
    Rng rng = Rng(seed).child("full");
    Rng cov_rng = rng.child("coverage");
    const CoverageBatch batch = CoverageBatch::from_dataset(data, cfg.metric.n_v, cov_rng);
    const PairwiseDistances pd = evaluate_all(rewards, batch, cv, nullptr, grid, cfg.metric, rng);
    for (std::size_t i = 0; i < sweep.sigmas.size(); ++i) {
      for (Metric m : kSweepMetrics) {
        const double d = pd.get(m)[0][i + 1];
        rows.push_back({sweep.sigmas[i], 0, m, d, d, d, 0.0});
      }
    }
  }

  const TransitionBatch all = data.batch();
  for (std::size_t n : sweep.sample_sizes) {
    if (n > data.size()) throw std::invalid_argument("noise_sweep: sample size exceeds dataset");
    Rng rng = Rng(seed).child("ci/" + std::to_string(n));
    // values[sigma][metric] over the k draws
    std::vector<std::array<std::vector<double>, 3>> values(sweep.sigmas.size());
    for (int draw = 0; draw < sweep.k; ++draw) {
      for (int attempt = 0;; ++attempt) {
        const auto idx = draw_subset(data.size(), n, rng);
        const CoverageBatch batch = CoverageBatch::from_batch(batch_rows(all, idx));
        Rng draw_rng = rng.child(static_cast<std::uint64_t>(draw * 16 + attempt));
        const PairwiseDistances pd = evaluate_all(rewards, batch, cv, nullptr, grid, cfg.metric, draw_rng);
        bool degenerate = false;
        for (Metric m : kSweepMetrics) degenerate = degenerate || std::isnan(pd.get(m)[0][0]);
        if (degenerate) {
          if (attempt >= 10) throw DegenerateVariance("noise_sweep: ground truth constant on repeated subsets");
          continue;
        }
        for (std::size_t i = 0; i < sweep.sigmas.size(); ++i) {
          for (std::size_t k = 0; k < kSweepMetrics.size(); ++k) values[i][k].push_back(pd.get(kSweepMetrics[k])[0][i + 1]);
        }
        break;
      }
    }
    for (std::size_t i = 0; i < sweep.sigmas.size(); ++i) {
      for (std::size_t k = 0; k < kSweepMetrics.size(); ++k) {
        push_ci_rows(rows, sweep.sigmas[i], n, kSweepMetrics[k], values[i][k], sweep.confidence);
      }
    }
  }
  return rows;
}

OracleProblem make_oracle_problem(int n_states, int n_actions, bool deterministic, std::uint64_t seed) {
  Rng rng(seed);
  Rng mdp_rng = rng.child("mdp");
  Rng reward_rng = rng.child("reward");
  OracleProblem p;
  p.mdp = deterministic ? oracle::TabularMdp::random_deterministic(n_states, n_actions, kDefaultGamma, mdp_rng)
                        : oracle::TabularMdp::random(n_states, n_actions, kDefaultGamma, mdp_rng);
  p.coverage = oracle::uniform_policy_coverage(p.mdp);
  p.reward = TabularReward::random(n_states, n_actions, reward_rng);
  return p;
}

std::vector<NoiseRow> oracle_noise_sweep(const OracleProblem& problem, std::size_t population,
                                         const NoiseSweepConfig& sweep, std::uint64_t seed) {
  const auto& mdp = problem.mdp;
  std::vector<NoiseRow> rows;
  std::vector<TabularReward> noisy;
  for (double sigma : sweep.sigmas) noisy.push_back(oracle::add_hash_noise(problem.reward, sigma, sweep.noise_seed));
  const Transform transforms[] = {Transform::kDard, Transform::kEpic, Transform::kPearson};
  for (std::size_t i = 0; i < sweep.sigmas.size(); ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      const double d = oracle::exact_distance(problem.reward, noisy[i], transforms[k], mdp, problem.coverage);
      rows.push_back({sweep.sigmas[i], 0, kSweepMetrics[k], d, d, d, 0.0});
    }
  }

  Rng rng(seed);
  Rng pop_rng = rng.child("population");
  const TransitionBatch pop = oracle::sample_coverage(mdp, problem.coverage, population, pop_rng);
  const oracle::TabularRewardFunction base(problem.reward, "R");
  const oracle::TabularDynamics dyn(mdp);
  const ActionGrid grid = ActionGrid::from_actions(oracle::all_actions(mdp));
  for (std::size_t n : sweep.sample_sizes) {
    MetricConfig mc;
    mc.n_v = static_cast<int>(n);
    mc.n_m = static_cast<int>(n);
    mc.gamma = mdp.gamma;
    for (std::size_t i = 0; i < sweep.sigmas.size(); ++i) {
      const oracle::TabularRewardFunction other(noisy[i], "R+noise");
      for (Metric m : kSweepMetrics) {
        SubsetMetric fn = [&](std::span<const std::size_t> idx, Rng& r) {
          const CoverageBatch batch = CoverageBatch::from_batch(batch_rows(pop, idx));
          switch (m) {
            case Metric::kEpic:
              return epic_distance(base, other, batch, mc, r);
            case Metric::kPearson:
              return direct_pearson_distance(base, other, batch);
            default:
              return dard_distance(base, other, dyn, batch, grid, mc, r);
          }
        };
        Rng ci_rng = rng.child("ci/" + std::to_string(n) + "/" + std::to_string(i) + "/" + metric_name(m));
        const BootstrapCi ci = bootstrap_ci(fn, pop.size(), n, sweep.k, sweep.confidence, ci_rng);
        rows.push_back({sweep.sigmas[i], n, m, ci.mean, ci.lo, ci.hi, ci.width});
      }
    }
  }
  return rows;
}

std::string noise_csv(const std::vector<NoiseRow>& rows) {
  std::ostringstream os;
  os << "sigma,n,metric,mean_x1000,lo_x1000,hi_x1000,width_x1000\n";
  for (const auto& r : rows) {
    os << fmt("%g", r.sigma) << ',' << r.n << ',' << metric_name(r.metric) << ',' << format_x1000(r.mean) << ','
       << format_x1000(r.lo) << ',' << format_x1000(r.hi) << ',' << format_x1000(r.width) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

std::vector<RandomRewardRow> random_rewards(const TransitionDataset& uniform_eval, const TransitionDataset& expert_eval,
                                            int count, const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (count < 1) throw std::invalid_argument("random_rewards: count must be >= 1");
  const Rng root(seed);
  Rng weight_rng = root.child("weights");
  std::vector<RewardPtr> rewards{make_ground_truth(cfg.env)};
  std::vector<RandomRewardRow> rows(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    auto r = std::make_shared<RandomLinearReward>(sample_random_reward(cfg.env, weight_rng));
    rows[static_cast<std::size_t>(i)] = {i, r->w_dist(), r->w_act(), r->w_goal(), {}, 0.0};
    rewards.push_back(std::move(r));
  }
  double proxy = 0.0;
  for (const auto& t : expert_eval.transitions) proxy += t.r_gt;
  proxy /= static_cast<double>(std::max<std::size_t>(1, expert_eval.size()));

  const balls::ConstantVelocityDynamics cv(cfg.env);
  const ActionGrid grid = ActionGrid::linspace(cfg.env.action_box(), cfg.grid_per_dim);
  const auto ptrs = raw_ptrs(rewards);
  for (std::size_t c = 0; c < kCoverages.size(); ++c) {
    Rng rng = root.child(std::string("evaluate/") + kCoverages[c]);
    Rng cov_rng = rng.child("coverage");
    const CoverageBatch batch = CoverageBatch::from_dataset(c == 0 ? uniform_eval : expert_eval, cfg.metric.n_v, cov_rng);
    Rng dard_rng = rng.child("dard");
    const auto t = dard_transform_many(ptrs, cv, batch, grid, cfg.metric, dard_rng);
    for (int i = 0; i < count; ++i) {
      double d = kNaN;
      try {
        d = pearson_distance(t[0], t[static_cast<std::size_t>(i) + 1]);
      } catch (const DegenerateVariance&) {
      }
      rows[static_cast<std::size_t>(i)].d_dard[c] = d;
    }
  }
  for (auto& r : rows) r.return_proxy = proxy;
  return rows;
}

std::string random_rewards_csv(const std::vector<RandomRewardRow>& rows) {
  std::ostringstream os;
  os << "index,w_dist,w_act,w_goal,goal_sign,d_dard_uniform_x1000,d_dard_expert_x1000,return_proxy\n";
  for (const auto& r : rows) {
    os << r.index << ',' << fmt("%.6f", r.w_dist) << ',' << fmt("%.6f", r.w_act) << ',' << fmt("%.6f", r.w_goal) << ','
       << (r.w_goal < 0.0 ? "-" : "+") << ',' << format_x1000(r.d_dard[0]) << ',' << format_x1000(r.d_dard[1]) << ','
       << fmt("%.6f", r.return_proxy) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

double max_shaping_invariance_error(Transform which, int n_states, int n_actions, int n_pairs, std::uint64_t seed) {
  Rng rng(seed);
  Rng mdp_rng = rng.child("mdp");
  const auto mdp = oracle::TabularMdp::random(n_states, n_actions, kDefaultGamma, mdp_rng);
  const auto coverage = oracle::uniform_policy_coverage(mdp);
  const auto d_s = oracle::state_marginal(mdp, coverage);
  const auto d_a = oracle::action_marginal(mdp, coverage);
  const auto uniform_a = oracle::uniform_distribution(n_actions);
  auto transform = [&](const TabularReward& r) {
    return which == Transform::kEpic ? oracle::exact_epic_canonicalize(r, d_s, d_a, mdp.gamma)
                                     : oracle::exact_dard_transform(r, mdp, uniform_a);
  };
  double worst = 0.0;
  for (int p = 0; p < n_pairs; ++p) {
    const TabularReward r = TabularReward::random(n_states, n_actions, rng);
    std::vector<double> phi(static_cast<std::size_t>(n_states));
    for (double& v : phi) v = rng.normal(0.0, 3.0);
    const TabularReward shaped = r.plus(TabularReward::shaping(n_states, n_actions, phi, mdp.gamma));
    const TabularReward a = transform(r);
    const TabularReward b = transform(shaped);
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.values[i] - b.values[i]));
  }
  return worst;
}

AxiomReport pseudometric_axioms(Transform which, int pool, std::uint64_t seed) {
  Rng rng(seed);
  Rng mdp_rng = rng.child("mdp");
  const auto mdp = oracle::TabularMdp::random(5, 3, kDefaultGamma, mdp_rng);
  const auto coverage = oracle::uniform_policy_coverage(mdp);
  std::vector<TabularReward> rewards;
  for (int i = 0; i < pool; ++i) rewards.push_back(TabularReward::random(5, 3, rng));
  const auto n = static_cast<std::size_t>(pool);
  DistanceMatrix d(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) d[i][j] = oracle::exact_distance(rewards[i], rewards[j], which, mdp, coverage);
  }
  AxiomReport rep;
  for (std::size_t i = 0; i < n; ++i) {
    rep.identity = std::max(rep.identity, std::abs(d[i][i]));
    for (std::size_t j = 0; j < n; ++j) {
      rep.symmetry = std::max(rep.symmetry, std::abs(d[i][j] - d[j][i]));
      for (std::size_t k = 0; k < n; ++k) {
        rep.triangle = std::max(rep.triangle, d[i][k] - d[i][j] - d[j][k]);
        ++rep.triples;
      }
    }
  }
  return rep;
}

namespace {

ConsistencyTrial consistency_trial(const OracleProblem& problem, const TabularReward& other, Transform which,
                                   int n, int n_t, int reps, std::uint64_t seed) {
  Rng rng(seed);
  Rng sample_rng = rng.child("sample");
  const TransitionBatch batch =
      oracle::sample_coverage(problem.mdp, problem.coverage, static_cast<std::size_t>(n), sample_rng);
  const oracle::TabularRewardFunction ra(problem.reward, "A");
  const oracle::TabularRewardFunction rb(other, "B");
  const oracle::TabularDynamics dyn(problem.mdp);
  const ActionGrid grid = ActionGrid::from_actions(oracle::all_actions(problem.mdp));
  MetricConfig mc;
  mc.n_v = n;
  mc.n_m = n;
  mc.n_t = n_t;
  mc.gamma = problem.mdp.gamma;
  SubsetMetric estimator = [&](std::span<const std::size_t> idx, Rng& r) {
    const CoverageBatch cb = CoverageBatch::from_batch(batch_rows(batch, idx));
    return which == Transform::kEpic ? epic_distance(ra, rb, cb, mc, r) : dard_distance(ra, rb, dyn, cb, grid, mc, r);
  };
  std::vector<std::size_t> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), std::size_t{0});
  ConsistencyTrial t;
  Rng draw_rng = rng.child("draws");
  t.estimate = estimator(all, draw_rng);
  Rng boot_rng = rng.child("bootstrap");
  t.std_err = bootstrap_standard_error(estimator, static_cast<std::size_t>(n), reps, boot_rng);
  t.exact = oracle::exact_distance(problem.reward, other, which, problem.mdp, problem.coverage);
  return t;
}

}  // namespace

ConsistencyTrial epic_consistency_trial(const OracleProblem& problem, const TabularReward& other, int n,
                                        int bootstrap_reps, std::uint64_t seed) {
  return consistency_trial(problem, other, Transform::kEpic, n, 1, bootstrap_reps, seed);
}

ConsistencyTrial dard_consistency_trial(const OracleProblem& problem, const TabularReward& other, int n, int n_t,
                                        int bootstrap_reps, std::uint64_t seed) {
  return consistency_trial(problem, other, Transform::kDard, n, n_t, bootstrap_reps, seed);
}

std::vector<OracleCheck> oracle_check(std::uint64_t seed) {
  std::vector<OracleCheck> out;
  const Rng root(seed);
  for (Transform t : {Transform::kEpic, Transform::kDard}) {
    const double err = max_shaping_invariance_error(t, 5, 3, 20, root.child("shaping").seed());
    out.push_back({std::string("shaping invariance (") + (t == Transform::kEpic ? "epic" : "dard") + ")", err <= 1e-10,
                   err, 1e-10});
  }
  for (Transform t : {Transform::kEpic, Transform::kDard, Transform::kPearson}) {
    const char* name = t == Transform::kEpic ? "epic" : t == Transform::kDard ? "dard" : "pearson";
    const AxiomReport rep = pseudometric_axioms(t, 8, root.child("axioms").seed());
    const double worst = std::max({rep.identity, rep.symmetry, rep.triangle});
    out.push_back({std::string("pseudometric axioms (") + name + ")", worst <= 1e-12, worst, 1e-12});
  }
  {
    const OracleProblem p = make_oracle_problem(5, 3, false, root.child("epic_mc").seed());
    Rng other_rng = root.child("epic_mc_other");
    const TabularReward other = TabularReward::random(5, 3, other_rng);
    const ConsistencyTrial t = epic_consistency_trial(p, other, 4096, 30, root.child("epic_trial").seed());
    out.push_back({"sampled epic within 3 SE of exact", t.within(3.0), std::abs(t.estimate - t.exact), 3.0 * t.std_err});
  }
  {
    const OracleProblem p = make_oracle_problem(5, 3, true, root.child("dard_mc").seed());
    Rng other_rng = root.child("dard_mc_other");
    const TabularReward other = TabularReward::random(5, 3, other_rng);
    const ConsistencyTrial t = dard_consistency_trial(p, other, 4096, 1, 30, root.child("dard_trial").seed());
    out.push_back({"sampled dard within 3 SE of exact", t.within(3.0), std::abs(t.estimate - t.exact), 3.0 * t.std_err});
  }
  return out;
}

}  // namespace dard::exp
