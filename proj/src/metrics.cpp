#include "dard/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <unordered_map>

namespace dard {

namespace {

// Relative spread below which a vector counts as constant. Rounding noise from
// canonicalising a constant reward sits many orders of magnitude below this.
constexpr double kDegenerateTol = 1e-10;

// Target number of reward evaluations per assembled batch.
constexpr Eigen::Index kEvalChunk = 1 << 16;

// Centred copy of x scaled to unit Euclidean norm; weights optional.
std::vector<double> unit_deviation(std::span<const double> x, std::span<const double> w,
                                   const char* label) {
  const std::size_t n = x.size();
  const bool weighted = !w.empty();
  CompensatedSum total_w;
  CompensatedSum wx;
  CompensatedSum wxx;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i])) {
      throw std::invalid_argument(std::string("pearson_distance: non-finite value in ") + label);
    }
    const double wi = weighted ? w[i] : 1.0;
    total_w.add(wi);
    wx.add(wi * x[i]);
    wxx.add(wi * x[i] * x[i]);
  }
  const double wsum = total_w.value();
  const double mean = wx.value() / wsum;
  std::vector<double> dev(n);
  CompensatedSum ss;
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = weighted ? w[i] / wsum : 1.0;
    dev[i] = std::sqrt(wi) * (x[i] - mean);
    ss.add(dev[i] * dev[i]);
  }
  const double norm = std::sqrt(ss.value());
  const double sd = weighted ? norm : norm / std::sqrt(static_cast<double>(n));
  const double rms = std::sqrt(std::max(0.0, wxx.value() / wsum));
  if (!(sd > kDegenerateTol * std::max(1.0, rms))) {
    throw DegenerateVariance(std::string("pearson_distance: ") + label + " has zero variance");
  }
  for (double& d : dev) d /= norm;
  return dev;
}

double half_distance(const std::vector<double>& zx, const std::vector<double>& zy) {
  CompensatedSum acc;
  for (std::size_t i = 0; i < zx.size(); ++i) {
    const double d = zx[i] - zy[i];
    acc.add(d * d);
  }
  return std::min(1.0, 0.5 * std::sqrt(acc.value()));
}

// Exact-bitwise deduplication of matrix rows.
struct UniqueRows {
  RowMatrix rows;
  std::vector<std::size_t> index_of_s;
  std::vector<std::size_t> index_of_s_next;
};

UniqueRows unique_states(const RowMatrix& s, const RowMatrix& s_next) {
  UniqueRows out;
  const Eigen::Index dim = s.cols();
  std::vector<Eigen::Index> owners;  // (matrix, row) packed as 2*row + which
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;
  auto row_span = [&](Eigen::Index packed) {
    const RowMatrix& m = (packed & 1) ? s_next : s;
    return std::span<const double>(m.row(packed >> 1).data(), static_cast<std::size_t>(dim));
  };
  auto lookup = [&](Eigen::Index packed) {
    auto values = row_span(packed);
    const std::uint64_t h = hash_doubles(values, 0);
    auto& bucket = buckets[h];
    for (std::size_t u : bucket) {
      auto other = row_span(owners[u]);
      if (std::equal(values.begin(), values.end(), other.begin())) return u;
    }
    bucket.push_back(owners.size());
    owners.push_back(packed);
    return owners.size() - 1;
  };
  out.index_of_s.resize(static_cast<std::size_t>(s.rows()));
  out.index_of_s_next.resize(static_cast<std::size_t>(s.rows()));
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    out.index_of_s[static_cast<std::size_t>(i)] = lookup(2 * i);
    out.index_of_s_next[static_cast<std::size_t>(i)] = lookup(2 * i + 1);
  }
  out.rows.resize(static_cast<Eigen::Index>(owners.size()), dim);
  for (std::size_t u = 0; u < owners.size(); ++u) {
    const Eigen::Index packed = owners[u];
    out.rows.row(static_cast<Eigen::Index>(u)) = ((packed & 1) ? s_next : s).row(packed >> 1);
  }
  return out;
}

void check_dynamics_output(const RowMatrix& out, Eigen::Index rows, int state_dim) {
  if (out.rows() != rows || out.cols() != state_dim) {
    throw DynamicsFailure("dynamics model returned a state of the wrong shape");
  }
  if (!out.allFinite()) throw DynamicsFailure("dynamics model returned a non-finite state");
}

}  // namespace

// ---------------------------------------------------------------------------

ActionGrid ActionGrid::linspace(const ActionBox& box, int per_dim_count) {
  if (per_dim_count < 1) throw std::invalid_argument("ActionGrid: per_dim_count must be >= 1");
  const int dim = box.dim();
  std::vector<std::vector<double>> axes(static_cast<std::size_t>(dim));
  for (int d = 0; d < dim; ++d) {
    for (int i = 0; i < per_dim_count; ++i) {
      const double v = per_dim_count == 1
                           ? 0.5 * (box.lo[d] + box.hi[d])
                           : box.lo[d] + (box.hi[d] - box.lo[d]) * i / (per_dim_count - 1);
      axes[static_cast<std::size_t>(d)].push_back(v);
    }
  }
  ActionGrid grid;
  grid.per_dim_count = per_dim_count;
  std::size_t total = 1;
  for (int d = 0; d < dim; ++d) total *= static_cast<std::size_t>(per_dim_count);
  for (std::size_t flat = 0; flat < total; ++flat) {
    VectorXd a(dim);
    std::size_t rem = flat;
    for (int d = dim - 1; d >= 0; --d) {
      a[d] = axes[static_cast<std::size_t>(d)][rem % static_cast<std::size_t>(per_dim_count)];
      rem /= static_cast<std::size_t>(per_dim_count);
    }
    grid.actions.push_back(std::move(a));
  }
  return grid;
}

ActionGrid ActionGrid::from_actions(std::vector<VectorXd> actions) {
  if (actions.empty()) throw std::invalid_argument("ActionGrid: no actions");
  ActionGrid grid;
  grid.per_dim_count = static_cast<int>(actions.size());
  grid.actions = std::move(actions);
  return grid;
}

void MetricConfig::validate() const {
  if (n_v < 1 || n_m < 1 || n_t < 1) throw std::invalid_argument("MetricConfig: counts must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("MetricConfig: gamma outside [0, 1]");
}

void CoverageBatch::validate() const {
  if (transitions.size() == 0) throw std::invalid_argument("CoverageBatch: no transitions");
  if (state_pool.rows() == 0 || action_pool.rows() == 0) {
    throw std::invalid_argument("CoverageBatch: empty state or action pool");
  }
  if (state_pool.cols() != transitions.s.cols() || action_pool.cols() != transitions.a.cols()) {
    throw SchemaMismatch("CoverageBatch: pool width does not match transitions");
  }
}

CoverageBatch CoverageBatch::from_dataset(const TransitionDataset& dataset, int n_v, Rng& rng) {
  if (dataset.empty()) throw std::invalid_argument("CoverageBatch: empty dataset");
  if (n_v < 1) throw std::invalid_argument("CoverageBatch: n_v must be >= 1");
  std::vector<std::size_t> idx(dataset.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t take = std::min(idx.size(), static_cast<std::size_t>(n_v));
  if (take < idx.size()) {
    for (std::size_t i = 0; i < take; ++i) {
      std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
    }
    idx.resize(take);
  }
  std::vector<Transition> picked;
  picked.reserve(take);
  for (std::size_t i : idx) picked.push_back(dataset.transitions[i]);

  CoverageBatch out;
  out.transitions = TransitionBatch::from_transitions(dataset.manifest.schema, picked);
  const TransitionBatch all = dataset.batch();
  out.state_pool = all.s;
  out.action_pool = all.a;
  return out;
}

CoverageBatch CoverageBatch::from_batch(TransitionBatch batch) {
  CoverageBatch out;
  out.state_pool = batch.s;
  out.action_pool = batch.a;
  out.transitions = std::move(batch);
  return out;
}

// ---------------------------------------------------------------------------

double pearson_distance(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson_distance: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("pearson_distance: need at least two samples");
  return half_distance(unit_deviation(x, {}, "x"), unit_deviation(y, {}, "y"));
}

double weighted_pearson_distance(std::span<const double> x, std::span<const double> y,
                                 std::span<const double> weights) {
  if (x.size() != y.size() || x.size() != weights.size()) {
    throw std::invalid_argument("weighted_pearson_distance: length mismatch");
  }
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("weighted_pearson_distance: negative weight");
  }
  return half_distance(unit_deviation(x, weights, "x"), unit_deviation(y, weights, "y"));
}

// ---------------------------------------------------------------------------

EpicDraws draw_epic(const CoverageBatch& batch, const MetricConfig& cfg, Rng& rng) {
  cfg.validate();
  batch.validate();
  EpicDraws d;
  const auto n = static_cast<std::size_t>(cfg.n_m);
  d.x.resize(n);
  d.u.resize(n);
  d.x_next.resize(n);
  const auto n_states = static_cast<std::size_t>(batch.state_pool.rows());
  const auto n_actions = static_cast<std::size_t>(batch.action_pool.rows());
  for (std::size_t j = 0; j < n; ++j) {
    d.x[j] = rng.index(n_states);
    d.u[j] = rng.index(n_actions);
    d.x_next[j] = rng.index(n_states);
  }
  return d;
}

std::vector<std::vector<double>> epic_canonicalize_many(std::span<const RewardFunction* const> rewards,
                                                        const CoverageBatch& batch,
                                                        const EpicDraws& draws, double gamma) {
  batch.validate();
  const auto& tr = batch.transitions;
  const Eigen::Index n_m = static_cast<Eigen::Index>(draws.x.size());
  if (n_m == 0 || draws.u.size() != draws.x.size() || draws.x_next.size() != draws.x.size()) {
    throw std::invalid_argument("epic: malformed draws");
  }
  const Eigen::Index sdim = tr.s.cols();
  const Eigen::Index adim = tr.a.cols();

  RowMatrix draw_x(n_m, sdim);
  RowMatrix draw_u(n_m, adim);
  RowMatrix draw_xn(n_m, sdim);
  for (Eigen::Index j = 0; j < n_m; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    draw_x.row(j) = batch.state_pool.row(static_cast<Eigen::Index>(draws.x[ju]));
    draw_u.row(j) = batch.action_pool.row(static_cast<Eigen::Index>(draws.u[ju]));
    draw_xn.row(j) = batch.state_pool.row(static_cast<Eigen::Index>(draws.x_next[ju]));
  }

  // E[R(x, U, X')] only depends on x, so evaluate it once per distinct state.
  const UniqueRows uniq = unique_states(tr.s, tr.s_next);
  const Eigen::Index n_unique = uniq.rows.rows();
  const Eigen::Index per_chunk = std::max<Eigen::Index>(1, kEvalChunk / n_m);

  const std::size_t n_rewards = rewards.size();
  std::vector<std::vector<double>> state_mean(n_rewards, std::vector<double>(static_cast<std::size_t>(n_unique)));
  for (Eigen::Index start = 0; start < n_unique; start += per_chunk) {
    const Eigen::Index count = std::min(per_chunk, n_unique - start);
    TransitionBatch q(tr.schema, count * n_m);
    for (Eigen::Index k = 0; k < count; ++k) {
      q.s.middleRows(k * n_m, n_m) = uniq.rows.row(start + k).replicate(n_m, 1);
      q.a.middleRows(k * n_m, n_m) = draw_u;
      q.s_next.middleRows(k * n_m, n_m) = draw_xn;
    }
    for (std::size_t r = 0; r < n_rewards; ++r) {
      const std::vector<double> vals = rewards[r]->evaluate(q);
      for (Eigen::Index k = 0; k < count; ++k) {
        state_mean[r][static_cast<std::size_t>(start + k)] =
            stable_mean(std::span(vals).subspan(static_cast<std::size_t>(k * n_m), static_cast<std::size_t>(n_m)));
      }
    }
  }

  TransitionBatch centre(tr.schema, n_m);
  centre.s = draw_x;
  centre.a = draw_u;
  centre.s_next = draw_xn;

  std::vector<std::vector<double>> out(n_rewards);
  for (std::size_t r = 0; r < n_rewards; ++r) {
    const double c = stable_mean(rewards[r]->evaluate(centre));
    const std::vector<double> direct = rewards[r]->evaluate(tr);
    auto& canon = out[r];
    canon.resize(direct.size());
    for (std::size_t i = 0; i < direct.size(); ++i) {
      canon[i] = direct[i] + gamma * state_mean[r][uniq.index_of_s_next[i]] -
                 state_mean[r][uniq.index_of_s[i]] - gamma * c;
    }
  }
  return out;
}

std::vector<double> epic_canonicalize(const RewardFunction& r, const CoverageBatch& batch,
                                      const MetricConfig& cfg, Rng& rng) {
  const EpicDraws draws = draw_epic(batch, cfg, rng);
  const RewardFunction* rs[] = {&r};
  return std::move(epic_canonicalize_many(rs, batch, draws, cfg.gamma).front());
}

double epic_distance(const RewardFunction& ra, const RewardFunction& rb, const CoverageBatch& batch,
                     const MetricConfig& cfg, Rng& rng) {
  const EpicDraws draws = draw_epic(batch, cfg, rng);
  const RewardFunction* rs[] = {&ra, &rb};
  const auto canon = epic_canonicalize_many(rs, batch, draws, cfg.gamma);
  return pearson_distance(canon[0], canon[1]);
}

// ---------------------------------------------------------------------------

std::vector<std::vector<double>> dard_transform_many(std::span<const RewardFunction* const> rewards,
                                                     const DynamicsModel& dyn,
                                                     const CoverageBatch& batch,
                                                     const ActionGrid& grid,
                                                     const MetricConfig& cfg, Rng& rng) {
  cfg.validate();
  batch.validate();
  if (grid.actions.empty()) throw std::invalid_argument("dard: empty action grid");
  const auto& tr = batch.transitions;
  const Eigen::Index sdim = tr.s.cols();
  const Eigen::Index adim = tr.a.cols();
  const Eigen::Index n = tr.size();
  const Eigen::Index n_a = static_cast<Eigen::Index>(grid.size());
  // Repeated draws from a deterministic model are identical.
  const Eigen::Index n_t = dyn.is_deterministic() ? 1 : cfg.n_t;
  const Eigen::Index k_samples = n_a * n_t;
  const bool all_pairs = cfg.pairing == DardPairing::kAllPairs;
  const Eigen::Index cross_per = all_pairs ? k_samples * k_samples : k_samples;

  RowMatrix sample_actions(k_samples, adim);
  for (Eigen::Index u = 0; u < n_a; ++u) {
    const VectorXd& a = grid.actions[static_cast<std::size_t>(u)];
    if (a.size() != adim) throw SchemaMismatch("dard: grid action width does not match batch");
    for (Eigen::Index t = 0; t < n_t; ++t) sample_actions.row(u * n_t + t) = a.transpose();
  }

  const std::size_t n_rewards = rewards.size();
  std::vector<std::vector<double>> out(n_rewards);
  for (std::size_t r = 0; r < n_rewards; ++r) out[r] = rewards[r]->evaluate(tr);

  const Eigen::Index block = std::max<Eigen::Index>(1, kEvalChunk / (cross_per + 2 * k_samples));
  std::vector<Eigen::Index> perm_x(static_cast<std::size_t>(k_samples));
  std::vector<Eigen::Index> perm_u(static_cast<std::size_t>(k_samples));

  for (Eigen::Index start = 0; start < n; start += block) {
    const Eigen::Index count = std::min(block, n - start);
    const Eigen::Index rows = count * k_samples;

    TransitionBatch from_s(tr.schema, rows);    // (s, u, x')
    TransitionBatch from_sn(tr.schema, rows);   // (s', u, x'')
    for (Eigen::Index b = 0; b < count; ++b) {
      from_s.s.middleRows(b * k_samples, k_samples) = tr.s.row(start + b).replicate(k_samples, 1);
      from_sn.s.middleRows(b * k_samples, k_samples) = tr.s_next.row(start + b).replicate(k_samples, 1);
      from_s.a.middleRows(b * k_samples, k_samples) = sample_actions;
    }
    from_sn.a = from_s.a;
    from_s.s_next = dyn.sample(from_s.s, from_s.a, rng);
    check_dynamics_output(from_s.s_next, rows, static_cast<int>(sdim));
    from_sn.s_next = dyn.sample(from_sn.s, from_sn.a, rng);
    check_dynamics_output(from_sn.s_next, rows, static_cast<int>(sdim));

    // (x', u, x'') with x' ~ T(.|s, .) and (u, x'') the samples drawn from s'.
    TransitionBatch cross(tr.schema, count * cross_per);
    for (Eigen::Index b = 0; b < count; ++b) {
      const Eigen::Index base = b * k_samples;
      if (all_pairs) {
        for (Eigen::Index p = 0; p < k_samples; ++p) {
          const Eigen::Index row0 = b * cross_per + p * k_samples;
          cross.s.middleRows(row0, k_samples) = from_s.s_next.row(base + p).replicate(k_samples, 1);
          cross.a.middleRows(row0, k_samples) = sample_actions;
          cross.s_next.middleRows(row0, k_samples) = from_sn.s_next.middleRows(base, k_samples);
        }
      } else {
        std::iota(perm_x.begin(), perm_x.end(), Eigen::Index{0});
        std::iota(perm_u.begin(), perm_u.end(), Eigen::Index{0});
        rng.shuffle(perm_x.begin(), perm_x.end());
        rng.shuffle(perm_u.begin(), perm_u.end());
        for (Eigen::Index m = 0; m < k_samples; ++m) {
          const Eigen::Index row = b * cross_per + m;
          cross.s.row(row) = from_s.s_next.row(base + perm_x[static_cast<std::size_t>(m)]);
          cross.a.row(row) = sample_actions.row(perm_u[static_cast<std::size_t>(m)]);
          cross.s_next.row(row) = from_sn.s_next.row(base + perm_u[static_cast<std::size_t>(m)]);
        }
      }
    }

    for (std::size_t r = 0; r < n_rewards; ++r) {
      const std::vector<double> v_s = rewards[r]->evaluate(from_s);
      const std::vector<double> v_sn = rewards[r]->evaluate(from_sn);
      const std::vector<double> v_cross = rewards[r]->evaluate(cross);
      for (Eigen::Index b = 0; b < count; ++b) {
        const auto kb = static_cast<std::size_t>(b * k_samples);
        const auto ks = static_cast<std::size_t>(k_samples);
        const double next_term = stable_mean(std::span(v_sn).subspan(kb, ks));
        const double here_term = stable_mean(std::span(v_s).subspan(kb, ks));
        const double cross_term = stable_mean(
            std::span(v_cross).subspan(static_cast<std::size_t>(b * cross_per), static_cast<std::size_t>(cross_per)));
        auto& value = out[r][static_cast<std::size_t>(start + b)];
        value = value + cfg.gamma * next_term - here_term - cfg.gamma * cross_term;
      }
    }
  }
  return out;
}

std::vector<double> dard_transform(const RewardFunction& r, const DynamicsModel& dyn,
                                   const CoverageBatch& batch, const ActionGrid& grid,
                                   const MetricConfig& cfg, Rng& rng) {
  const RewardFunction* rs[] = {&r};
  return std::move(dard_transform_many(rs, dyn, batch, grid, cfg, rng).front());
}

double dard_distance(const RewardFunction& ra, const RewardFunction& rb, const DynamicsModel& dyn,
                     const CoverageBatch& batch, const ActionGrid& grid, const MetricConfig& cfg,
                     Rng& rng) {
  const RewardFunction* rs[] = {&ra, &rb};
  const auto t = dard_transform_many(rs, dyn, batch, grid, cfg, rng);
  return pearson_distance(t[0], t[1]);
}

double direct_pearson_distance(const RewardFunction& ra, const RewardFunction& rb,
                               const CoverageBatch& batch) {
  return pearson_distance(ra.evaluate(batch.transitions), rb.evaluate(batch.transitions));
}

// ---------------------------------------------------------------------------

void DistanceReport::summarize() {
  auto fill = [](const std::vector<double>& v, double& mean, double& se) {
    const MeanStdErr m = mean_std_err(v);
    mean = m.mean;
    se = m.std_err;
  };
  fill(epic_per_seed, d_epic, se_epic);
  fill(dard_per_seed, d_dard, se_dard);
  fill(pearson_per_seed, d_pearson, se_pearson);
  if (!dard_learned_per_seed.empty()) {
    double mean = 0.0;
    fill(dard_learned_per_seed, mean, se_dard_learned);
    d_dard_learned = mean;
  }
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile: empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * std::clamp(q, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

BootstrapCi bootstrap_ci(const SubsetMetric& metric_fn, std::size_t population_size, std::size_t n,
                         int k, double confidence, Rng& rng) {
  if (n < 1 || n > population_size) throw std::invalid_argument("bootstrap_ci: need 1 <= n <= |population|");
  if (k < 2) throw std::invalid_argument("bootstrap_ci: k must be >= 2");
  if (!(confidence > 0.0 && confidence < 1.0)) throw std::invalid_argument("bootstrap_ci: confidence outside (0, 1)");
  constexpr int kMaxRedraws = 10;

  BootstrapCi ci;
  std::vector<std::size_t> idx(population_size);
  for (int draw = 0; draw < k; ++draw) {
    for (int attempt = 0;; ++attempt) {
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.index(population_size - i)]);
      try {
        ci.values.push_back(metric_fn(std::span<const std::size_t>(idx.data(), n), rng));
        break;
      } catch (const DegenerateVariance&) {
        if (attempt >= kMaxRedraws) throw;
      }
    }
  }
  const double tail = 0.5 * (1.0 - confidence);
  ci.mean = stable_mean(ci.values);
  ci.lo = quantile(ci.values, tail);
  ci.hi = quantile(ci.values, 1.0 - tail);
  ci.width = ci.hi - ci.lo;
  return ci;
}

BootstrapCi bootstrap_ci(const std::function<double(const TransitionDataset&, Rng&)>& metric_fn,
                         const TransitionDataset& population, std::size_t n, int k,
                         double confidence, Rng& rng) {
  SubsetMetric by_index = [&](std::span<const std::size_t> indices, Rng& r) {
    return metric_fn(population.subset(indices), r);
  };
  return bootstrap_ci(by_index, population.size(), n, k, confidence, rng);
}

double bootstrap_standard_error(const SubsetMetric& estimator, std::size_t population_size,
                                int replicates, Rng& rng) {
  if (replicates < 2) throw std::invalid_argument("bootstrap_standard_error: need >= 2 replicates");
  if (population_size == 0) throw std::invalid_argument("bootstrap_standard_error: empty population");
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(replicates));
  std::vector<std::size_t> idx(population_size);
  for (int b = 0; b < replicates; ++b) {
    for (auto& i : idx) i = rng.index(population_size);
    values.push_back(estimator(idx, rng));
  }
  return mean_std_err(values).std_err * std::sqrt(static_cast<double>(replicates));
}

}  // namespace dard
