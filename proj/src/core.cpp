#include "dard/core.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

namespace dard {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_doubles(std::span<const double> values, std::uint64_t seed) {
  std::uint64_t h = splitmix64(seed);
  for (double v : values) {
    // +0.0 and -0.0 describe the same transition.
    if (v == 0.0) v = 0.0;
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = splitmix64(h ^ bits);
  }
  return h;
}

std::uint64_t transition_hash(std::span<const double> s, std::span<const double> a,
                              std::span<const double> s_next, std::uint64_t seed) {
  return hash_doubles(s_next, hash_doubles(a, hash_doubles(s, seed)));
}

double normal_from_hash(std::uint64_t key) {
  const std::uint64_t a = splitmix64(key);
  const std::uint64_t b = splitmix64(a);
  // u1 in (0, 1], u2 in [0, 1)
  const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::normal() {
  const double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index: empty range");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

Rng Rng::child(std::string_view label) const {
  return Rng(splitmix64(seed_ ^ fnv1a(label)));
}

Rng Rng::child(std::uint64_t label) const {
  return Rng(splitmix64(seed_ ^ splitmix64(label + 0x632be59bd9b4e019ULL)));
}

Schema make_schema(std::string env, int state_dim, int action_dim) {
  Schema schema;
  const std::string key = env + "/" + std::to_string(state_dim) + "/" + std::to_string(action_dim);
  schema.id = SchemaId{fnv1a(key)};
  schema.env = std::move(env);
  schema.state_dim = state_dim;
  schema.action_dim = action_dim;
  return schema;
}

bool ActionBox::contains(const Eigen::Ref<const VectorXd>& a, double slack) const {
  if (a.size() != lo.size()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || a[i] < lo[i] - slack || a[i] > hi[i] + slack) return false;
  }
  return true;
}

double ActionBox::max_norm() const {
  return lo.cwiseAbs().cwiseMax(hi.cwiseAbs()).norm();
}

namespace {
bool same_vector(const VectorXd& x, const VectorXd& y) {
  return x.size() == y.size() && (x.array() == y.array()).all();
}
}  // namespace

bool operator==(const Transition& x, const Transition& y) {
  return same_vector(x.s, y.s) && same_vector(x.a, y.a) && same_vector(x.s_next, y.s_next) &&
         x.episode == y.episode && x.t == y.t && x.r_gt == y.r_gt && x.done == y.done;
}

TransitionBatch::TransitionBatch(Schema schema_in, Eigen::Index rows)
    : schema(std::move(schema_in)),
      s(rows, schema.state_dim),
      a(rows, schema.action_dim),
      s_next(rows, schema.state_dim) {}

TransitionBatch TransitionBatch::from_transitions(const Schema& schema,
                                                  std::span<const Transition> ts) {
  TransitionBatch batch(schema, static_cast<Eigen::Index>(ts.size()));
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto& t = ts[i];
    if (t.s.size() != schema.state_dim || t.s_next.size() != schema.state_dim ||
        t.a.size() != schema.action_dim) {
      throw SchemaMismatch("transition does not match schema '" + schema.env + "'");
    }
    const auto row = static_cast<Eigen::Index>(i);
    batch.s.row(row) = t.s.transpose();
    batch.a.row(row) = t.a.transpose();
    batch.s_next.row(row) = t.s_next.transpose();
  }
  return batch;
}

void TransitionBatch::check_schema(const Schema& expected) const {
  if (schema.id != expected.id || s.cols() != expected.state_dim ||
      s_next.cols() != expected.state_dim || a.cols() != expected.action_dim) {
    throw SchemaMismatch("batch schema '" + schema.env + "' does not match expected '" +
                         expected.env + "'");
  }
}

bool all_finite(const Eigen::Ref<const RowMatrix>& m) { return m.allFinite(); }

double RewardFunction::evaluate_one(const Schema& schema, const Transition& t) const {
  return evaluate(TransitionBatch::from_transitions(schema, std::span(&t, 1))).front();
}

StateVec DynamicsModel::sample(const StateVec& s, const ActionVec& a, Rng& rng) const {
  RowMatrix states = s.values.transpose();
  RowMatrix actions = a.values.transpose();
  RowMatrix next = sample(states, actions, rng);
  return StateVec{next.row(0).transpose(), s.schema};
}

double discounted_return(std::span<const double> rewards, double gamma) {
  double total = 0.0;
  double discount = 1.0;
  for (double r : rewards) {
    total += discount * r;
    discount *= gamma;
  }
  return total;
}

double stable_sum(std::span<const double> values) {
  CompensatedSum acc;
  for (double v : values) acc.add(v);
  return acc.value();
}

double stable_mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  return stable_sum(values) / static_cast<double>(values.size());
}

MeanStdErr mean_std_err(std::span<const double> values) {
  MeanStdErr out;
  if (values.empty()) return out;
  out.mean = stable_mean(values);
  if (values.size() < 2) return out;
  CompensatedSum ss;
  for (double v : values) ss.add((v - out.mean) * (v - out.mean));
  const double n = static_cast<double>(values.size());
  out.std_err = std::sqrt(ss.value() / (n - 1.0)) / std::sqrt(n);
  return out;
}

}  // namespace dard
