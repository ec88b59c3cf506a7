#include "dard/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace dard {

using nlohmann::json;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
  if (s.size() != 16) throw ChecksumMismatch("malformed checksum field");
  std::uint64_t v = 0;
  for (char c : s) {
    v <<= 4;
    if (c >= '0' && c <= '9') {
      v |= static_cast<std::uint64_t>(c - '0');
    } else if (c >= 'a' && c <= 'f') {
      v |= static_cast<std::uint64_t>(c - 'a' + 10);
    } else {
      throw ChecksumMismatch("malformed checksum field");
    }
  }
  return v;
}

json vec_to_json(const VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

VectorXd vec_from_json(const json& arr) {
  VectorXd v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  return v;
}

}  // namespace

json DatasetManifest::to_json() const {
  return {{"format", "rjsonl"},
          {"schema_version", schema_version},
          {"env", env},
          {"config_hash", config_hash},
          {"env_config", env_config},
          {"policy", policy},
          {"seed", seed},
          {"count", count},
          {"episodes", episodes},
          {"schema",
           {{"env", schema.env},
            {"id", hex64(schema.id.value)},
            {"state_dim", schema.state_dim},
            {"action_dim", schema.action_dim}}}};
}

DatasetManifest DatasetManifest::from_json(const json& j) {
  DatasetManifest m;
  m.schema_version = j.at("schema_version").get<int>();
  if (m.schema_version != kDatasetSchemaVersion) {
    throw SchemaVersionMismatch("dataset schema version " + std::to_string(m.schema_version) +
                                " is not supported (expected " +
                                std::to_string(kDatasetSchemaVersion) + ")");
  }
  m.env = j.at("env").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.env_config = j.at("env_config");
  m.policy = j.at("policy").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.count = j.at("count").get<std::size_t>();
  m.episodes = j.at("episodes").get<std::size_t>();
  const auto& s = j.at("schema");
  m.schema.env = s.at("env").get<std::string>();
  m.schema.id = SchemaId{parse_hex64(s.at("id").get<std::string>())};
  m.schema.state_dim = s.at("state_dim").get<int>();
  m.schema.action_dim = s.at("action_dim").get<int>();
  return m;
}

TransitionBatch TransitionDataset::batch() const {
  return TransitionBatch::from_transitions(manifest.schema, transitions);
}

TransitionDataset TransitionDataset::subset(std::span<const std::size_t> indices) const {
  TransitionDataset out;
  out.manifest = manifest;
  out.transitions.reserve(indices.size());
  for (std::size_t i : indices) out.transitions.push_back(transitions.at(i));
  out.refresh_counts();
  return out;
}

void TransitionDataset::refresh_counts() {
  manifest.count = transitions.size();
  std::set<std::int64_t> episodes;
  for (const auto& t : transitions) episodes.insert(t.episode);
  manifest.episodes = episodes.size();
}

void TransitionDataset::validate() const {
  if (manifest.count != transitions.size()) {
    throw std::invalid_argument("dataset manifest count does not match contents");
  }
  std::unordered_map<std::int64_t, std::int64_t> last_t;
  for (const auto& t : transitions) {
    if (t.s.size() != manifest.schema.state_dim || t.s_next.size() != manifest.schema.state_dim ||
        t.a.size() != manifest.schema.action_dim) {
      throw SchemaMismatch("dataset transition does not match manifest schema");
    }
    if (!t.s.allFinite() || !t.s_next.allFinite() || !t.a.allFinite()) {
      throw std::invalid_argument("dataset contains non-finite values");
    }
    if (t.t < 0) throw std::invalid_argument("negative timestep");
    auto it = last_t.find(t.episode);
    if (it != last_t.end() && t.t <= it->second) {
      throw std::invalid_argument("timesteps not strictly increasing within episode");
    }
    last_t[t.episode] = t.t;
  }
}

TransitionDataset collect(const balls::BallWorldConfig& cfg, const balls::Policy& policy,
                          std::size_t n_steps, std::uint64_t seed) {
  if (n_steps < 1) throw std::invalid_argument("collect: n_steps must be >= 1");
  balls::BouncingBalls env(cfg);
  Rng rng(seed);

  TransitionDataset out;
  out.manifest.env = "bouncing_balls";
  out.manifest.config_hash = cfg.hash();
  out.manifest.env_config = cfg.to_json();
  out.manifest.policy = policy.name();
  out.manifest.seed = seed;
  out.manifest.schema = cfg.schema();
  out.transitions.reserve(n_steps);

  std::int64_t episode = 0;
  while (out.transitions.size() < n_steps) {
    VectorXd state = env.reset(rng);
    for (int t = 0; t < cfg.horizon && out.transitions.size() < n_steps; ++t) {
      VectorXd action = policy.act(state, rng);
      balls::StepResult step = env.step(state, action, rng);
      Transition tr;
      tr.s = state;
      tr.a = std::move(action);
      tr.s_next = step.next_state;
      tr.episode = episode;
      tr.t = t;
      tr.r_gt = step.reward;
      tr.done = step.done;
      out.transitions.push_back(std::move(tr));
      state = std::move(step.continuation);
    }
    ++episode;
  }
  out.refresh_counts();
  return out;
}

TransitionDataset concat(const TransitionDataset& a, const TransitionDataset& b) {
  if (!(a.manifest.schema == b.manifest.schema)) throw SchemaMismatch("concat: datasets have different schemas");
  TransitionDataset out = a;
  std::int64_t offset = 0;
  for (const auto& t : a.transitions) offset = std::max(offset, t.episode + 1);
  out.transitions.reserve(a.size() + b.size());
  for (Transition t : b.transitions) {
    t.episode += offset;
    out.transitions.push_back(std::move(t));
  }
  out.manifest.policy = a.manifest.policy + "+" + b.manifest.policy;
  out.refresh_counts();
  return out;
}

std::uint64_t crc64(std::string_view bytes) {
  static const auto table = [] {
    std::array<std::uint64_t, 256> t{};
    for (std::uint64_t i = 0; i < 256; ++i) {
      std::uint64_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? (c >> 1) ^ 0xC96C5795D7870F42ULL : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint64_t crc = ~0ULL;
  for (unsigned char b : bytes) crc = table[(crc ^ b) & 0xff] ^ (crc >> 8);
  return ~crc;
}

std::string serialize(const TransitionDataset& dataset) {
  std::string out = dataset.manifest.to_json().dump();
  out += '\n';
  for (const auto& t : dataset.transitions) {
    json rec = {{"s", vec_to_json(t.s)},
                {"a", vec_to_json(t.a)},
                {"s_next", vec_to_json(t.s_next)},
                {"r_gt", t.r_gt},
                {"episode", t.episode},
                {"t", t.t},
                {"done", t.done}};
    out += rec.dump();
    out += '\n';
  }
  out += json{{"crc64", hex64(crc64(out))}}.dump();
  out += '\n';
  return out;
}

TransitionDataset deserialize(std::string_view text) {
  // The checksum line is the last non-empty line.
  std::size_t end = text.size();
  while (end > 0 && text[end - 1] == '\n') --end;
  const std::size_t last_nl = text.rfind('\n', end == 0 ? 0 : end - 1);
  if (end == 0 || last_nl == std::string_view::npos) throw ChecksumMismatch("dataset is truncated");
  const std::string_view body = text.substr(0, last_nl + 1);
  const std::string_view trailer = text.substr(last_nl + 1, end - last_nl - 1);

  json trailer_json = json::parse(trailer, nullptr, /*allow_exceptions=*/false);
  if (!trailer_json.is_object() || !trailer_json.contains("crc64") ||
      !trailer_json["crc64"].is_string()) {
    throw ChecksumMismatch("dataset is missing its checksum line");
  }
  if (parse_hex64(trailer_json["crc64"].get<std::string>()) != crc64(body)) {
    throw ChecksumMismatch("dataset checksum does not match contents");
  }

  TransitionDataset out;
  std::size_t pos = 0;
  bool have_manifest = false;
  while (pos < body.size()) {
    std::size_t nl = body.find('\n', pos);
    const std::string_view line = body.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    json j = json::parse(line);
    if (!have_manifest) {
      out.manifest = DatasetManifest::from_json(j);
      out.transitions.reserve(out.manifest.count);
      have_manifest = true;
      continue;
    }
    Transition t;
    t.s = vec_from_json(j.at("s"));
    t.a = vec_from_json(j.at("a"));
    t.s_next = vec_from_json(j.at("s_next"));
    t.r_gt = j.at("r_gt").get<double>();
    t.episode = j.at("episode").get<std::int64_t>();
    t.t = j.at("t").get<std::int64_t>();
    t.done = j.at("done").get<bool>();
    out.transitions.push_back(std::move(t));
  }
  if (!have_manifest) throw ChecksumMismatch("dataset has no manifest");
  out.validate();
  return out;
}

void save(const TransitionDataset& dataset, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::string text = serialize(dataset);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw IoError("write to '" + path.string() + "' failed");
}

TransitionDataset load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << f.rdbuf();
  if (f.bad()) throw IoError("read from '" + path.string() + "' failed");
  return deserialize(ss.str());
}

std::string dataset_hash(const TransitionDataset& dataset) {
  return hex64(crc64(serialize(dataset)));
}

DatasetSplits split(const TransitionDataset& dataset, std::array<double, 3> fractions,
                    std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw std::invalid_argument("split: fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split: fractions must sum to 1");

  std::vector<std::int64_t> episodes;
  std::set<std::int64_t> seen;
  for (const auto& t : dataset.transitions) {
    if (seen.insert(t.episode).second) episodes.push_back(t.episode);
  }
  const std::size_t n_eps = episodes.size();

  // Largest-remainder apportionment of whole episodes.
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = fractions[k] * static_cast<double>(n_eps);
    counts[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainder[k] = exact - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return remainder[x] > remainder[y]; });
  for (int k = 0; assigned < n_eps; k = (k + 1) % 3) {
    if (fractions[order[k]] > 0.0) {
      ++counts[order[k]];
      ++assigned;
    }
  }
  for (int k = 0; k < 3; ++k) {
    if (fractions[k] > 0.0 && counts[k] == 0) {
      throw InsufficientEpisodes("split: " + std::to_string(n_eps) +
                                 " episodes cannot cover every requested fraction");
    }
  }

  Rng rng(seed);
  rng.shuffle(episodes.begin(), episodes.end());
  std::unordered_map<std::int64_t, int> part;
  std::size_t cursor = 0;
  for (int k = 0; k < 3; ++k) {
    for (std::size_t c = 0; c < counts[k]; ++c) part[episodes[cursor++]] = k;
  }

  std::array<std::vector<std::size_t>, 3> idx;
  for (std::size_t i = 0; i < dataset.transitions.size(); ++i) {
    idx[part.at(dataset.transitions[i].episode)].push_back(i);
  }
  return DatasetSplits{dataset.subset(idx[0]), dataset.subset(idx[1]), dataset.subset(idx[2])};
}

}  // namespace dard
