#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dard/bouncing_balls.hpp"
#include "dard/core.hpp"

namespace dard {

inline constexpr int kDatasetSchemaVersion = 1;

struct DatasetManifest {
  int schema_version = kDatasetSchemaVersion;
  std::string env;
  std::string config_hash;
  nlohmann::json env_config = nlohmann::json::object();
  std::string policy;
  std::uint64_t seed = 0;
  std::size_t count = 0;
  std::size_t episodes = 0;
  Schema schema;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct TransitionDataset {
  DatasetManifest manifest;
  std::vector<Transition> transitions;

  std::size_t size() const { return transitions.size(); }
  bool empty() const { return transitions.empty(); }
  TransitionBatch batch() const;
  /// Copy of the selected transitions; manifest counts are recomputed.
  TransitionDataset subset(std::span<const std::size_t> indices) const;
  /// Recompute count/episode fields from the contents.
  void refresh_counts();
  /// Throws SchemaMismatch or std::invalid_argument on a broken invariant.
  void validate() const;

  friend bool operator==(const TransitionDataset&, const TransitionDataset&) = default;
};

/// Seeded episodic rollouts; episodes run for cfg.horizon steps.
TransitionDataset collect(const balls::BallWorldConfig& cfg, const balls::Policy& policy,
                          std::size_t n_steps, std::uint64_t seed);

/// Transitions of `a` followed by those of `b`; b's episode ids are shifted past a's.
/// Both must share a schema.
TransitionDataset concat(const TransitionDataset& a, const TransitionDataset& b);

/// CRC-64/XZ.
std::uint64_t crc64(std::string_view bytes);

/// Manifest line, one JSON object per transition, trailing {"crc64": hex} line.
std::string serialize(const TransitionDataset& dataset);
TransitionDataset deserialize(std::string_view text);

void save(const TransitionDataset& dataset, const std::filesystem::path& path);
TransitionDataset load(const std::filesystem::path& path);

/// Hex digest of the serialized bytes.
std::string dataset_hash(const TransitionDataset& dataset);

struct DatasetSplits {
  TransitionDataset train;
  TransitionDataset val;
  TransitionDataset eval;
};

/// Episode-level three-way split; fractions must sum to 1.
DatasetSplits split(const TransitionDataset& dataset, std::array<double, 3> fractions,
                    std::uint64_t seed);

}  // namespace dard
