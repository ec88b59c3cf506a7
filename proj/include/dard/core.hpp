#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace dard {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Eigen::VectorXd;

inline constexpr double kDefaultGamma = 0.95;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A reward is (numerically) constant on the evaluated batch.
class DegenerateVariance : public Error {
 public:
  using Error::Error;
};
class DynamicsFailure : public Error {
 public:
  using Error::Error;
};
class SchemaMismatch : public Error {
 public:
  using Error::Error;
};
class OutOfBoundsAction : public Error {
 public:
  using Error::Error;
};
class DivergenceDetected : public Error {
 public:
  using Error::Error;
};
class SingularSystem : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};
class SchemaVersionMismatch : public Error {
 public:
  using Error::Error;
};
class ChecksumMismatch : public Error {
 public:
  using Error::Error;
};
class InsufficientEpisodes : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Hashing helpers
// ---------------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t hash_doubles(std::span<const double> values, std::uint64_t seed);
/// Hash of the concatenated (s, a, s') contents.
std::uint64_t transition_hash(std::span<const double> s, std::span<const double> a,
                              std::span<const double> s_next, std::uint64_t seed);
/// Standard normal variate that is a pure function of `key`.
double normal_from_hash(std::uint64_t key);

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

/// Seeded random stream. Child streams are derived from the seed alone, so they
/// do not depend on how much of the parent has been consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  Rng child(std::string_view label) const;
  Rng child(std::uint64_t label) const;

  template <class It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = index(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// States, actions, transitions
// ---------------------------------------------------------------------------

/// Ties a flat vector layout to an environment.
struct SchemaId {
  std::uint64_t value = 0;
  friend bool operator==(SchemaId, SchemaId) = default;
};

struct Schema {
  SchemaId id;
  std::string env;
  int state_dim = 0;
  int action_dim = 0;
  friend bool operator==(const Schema&, const Schema&) = default;
};

Schema make_schema(std::string env, int state_dim, int action_dim);

struct StateVec {
  VectorXd values;
  SchemaId schema;
};

/// Per-dimension closed box [lo, hi].
struct ActionBox {
  VectorXd lo;
  VectorXd hi;

  int dim() const { return static_cast<int>(lo.size()); }
  bool contains(const Eigen::Ref<const VectorXd>& a, double slack = 0.0) const;
  double max_norm() const;
};

struct ActionVec {
  VectorXd values;
};

/// One (s, a, s') sample; the schema lives on the owning dataset or batch.
struct Transition {
  VectorXd s;
  VectorXd a;
  VectorXd s_next;
  std::int64_t episode = 0;
  std::int64_t t = 0;
  double r_gt = 0.0;
  bool done = false;

  friend bool operator==(const Transition& x, const Transition& y);
};

/// Row-major struct-of-arrays view of many transitions; what rewards consume.
struct TransitionBatch {
  Schema schema;
  RowMatrix s;
  RowMatrix a;
  RowMatrix s_next;

  TransitionBatch() = default;
  TransitionBatch(Schema schema_in, Eigen::Index rows);
  static TransitionBatch from_transitions(const Schema& schema, std::span<const Transition> ts);

  Eigen::Index size() const { return s.rows(); }
  void check_schema(const Schema& expected) const;
};

bool all_finite(const Eigen::Ref<const RowMatrix>& m);

// ---------------------------------------------------------------------------
// Interfaces
// ---------------------------------------------------------------------------

class RewardFunction {
 public:
  virtual ~RewardFunction() = default;
  virtual std::string name() const = 0;
  virtual std::vector<double> evaluate(const TransitionBatch& batch) const = 0;
  /// JSON reward spec; see reward_spec.hpp for the recognised kinds.
  virtual nlohmann::json to_json() const { return {{"kind", "opaque"}, {"name", name()}}; }

  double evaluate_one(const Schema& schema, const Transition& t) const;
};

class PotentialFunction {
 public:
  virtual ~PotentialFunction() = default;
  virtual std::string name() const = 0;
  /// One value per row of `states`.
  virtual std::vector<double> evaluate(const RowMatrix& states) const = 0;
  virtual nlohmann::json to_json() const { return {{"kind", "opaque"}, {"name", name()}}; }
};

class DynamicsModel {
 public:
  virtual ~DynamicsModel() = default;
  virtual std::string name() const = 0;
  virtual bool is_deterministic() const = 0;
  /// Row i of the result is a draw from T(. | states.row(i), actions.row(i)).
  virtual RowMatrix sample(const RowMatrix& states, const RowMatrix& actions, Rng& rng) const = 0;

  StateVec sample(const StateVec& s, const ActionVec& a, Rng& rng) const;
};

using RewardPtr = std::shared_ptr<const RewardFunction>;
using PotentialPtr = std::shared_ptr<const PotentialFunction>;
using DynamicsPtr = std::shared_ptr<const DynamicsModel>;

// ---------------------------------------------------------------------------
// Numerics
// ---------------------------------------------------------------------------

/// Sum of gamma^t * r_t.
double discounted_return(std::span<const double> rewards, double gamma);

/// Neumaier-compensated accumulator; order-dependent but reproducible.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double stable_sum(std::span<const double> values);
double stable_mean(std::span<const double> values);

/// Sample mean and standard error (sample std / sqrt(n)); se = 0 for n < 2.
struct MeanStdErr {
  double mean = 0.0;
  double std_err = 0.0;
};
MeanStdErr mean_std_err(std::span<const double> values);

}  // namespace dard
