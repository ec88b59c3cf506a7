#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "dard/datasets.hpp"
#include "test_support.hpp"

using namespace dard;
using dard::testing::desk_config;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "dard_dataset_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::set<std::int64_t> episodes_of(const TransitionDataset& d) {
  std::set<std::int64_t> out;
  for (const auto& t : d.transitions) out.insert(t.episode);
  return out;
}

}  // namespace

TEST_SUITE("datasets") {
  TEST_CASE("a single step is one episode starting at t = 0") {
    const auto d = collect(desk_config(), balls::UniformPolicy(desk_config()), 1, 3);
    REQUIRE(d.size() == 1);
    CHECK(d.transitions[0].t == 0);
    CHECK(d.transitions[0].episode == 0);
    CHECK(d.manifest.count == 1);
    CHECK(d.manifest.episodes == 1);
    CHECK_THROWS_AS(collect(desk_config(), balls::UniformPolicy(desk_config()), 0, 3), std::invalid_argument);
  }

  TEST_CASE("collection is deterministic in the seed") {
    const balls::UniformPolicy policy(desk_config());
    const auto a = collect(desk_config(), policy, 1500, 8);
    const auto b = collect(desk_config(), policy, 1500, 8);
    const auto c = collect(desk_config(), policy, 1500, 9);
    CHECK(serialize(a) == serialize(b));
    CHECK(serialize(a) != serialize(c));
    CHECK(a.manifest.episodes == 4);
    CHECK(a.transitions[400].t == 0);
    CHECK(a.transitions[400].episode == 1);
  }

  TEST_CASE("episode records chain except after a goal") {
    const auto& d = dard::testing::expert_data();
    std::size_t goals = 0;
    for (std::size_t i = 0; i + 1 < d.size(); ++i) {
      const auto& x = d.transitions[i];
      const auto& y = d.transitions[i + 1];
      if (x.episode != y.episode) continue;
      if (x.r_gt > 0.0) {
        ++goals;
      } else {
        CHECK(x.s_next == y.s);
      }
    }
    CHECK(goals > 0);
  }

  TEST_CASE("uniform actions average to zero") {
    const auto d = collect(desk_config(), balls::UniformPolicy(desk_config()), 50000, 21);
    double sx = 0.0;
    double sy = 0.0;
    for (const auto& t : d.transitions) {
      sx += t.a[0];
      sy += t.a[1];
    }
    CHECK(std::abs(sx / 50000.0) <= 0.1);
    CHECK(std::abs(sy / 50000.0) <= 0.1);
  }

  TEST_CASE("save and load round trip exactly") {
    const auto d = collect(desk_config(), balls::ScriptedExpert(desk_config()), 900, 4);
    const auto path = scratch("roundtrip.jsonl");
    save(d, path);
    const auto back = load(path);
    CHECK(back == d);
    CHECK(dataset_hash(back) == dataset_hash(d));
    CHECK(balls::BallWorldConfig::from_json(back.manifest.env_config) == desk_config());
    CHECK_THROWS_AS(load(scratch("missing.jsonl")), IoError);
    CHECK_THROWS_AS(save(d, scratch("no_such_dir") / "x.jsonl"), IoError);
  }

  TEST_CASE("corruption is detected") {
    const auto d = collect(desk_config(), balls::UniformPolicy(desk_config()), 50, 4);
    const std::string text = serialize(d);
    CHECK_THROWS_AS(deserialize(text.substr(0, text.size() / 2)), ChecksumMismatch);
    CHECK_THROWS_AS(deserialize(""), ChecksumMismatch);
    std::string flipped = text;
    flipped[text.size() / 3] = flipped[text.size() / 3] == '1' ? '2' : '1';
    CHECK_THROWS_AS(deserialize(flipped), ChecksumMismatch);

    const auto path = scratch("truncated.jsonl");
    {
      std::ofstream f(path, std::ios::binary);
      f << text.substr(0, text.size() - 40);
    }
    CHECK_THROWS_AS(load(path), ChecksumMismatch);
  }

  TEST_CASE("a future schema version is refused") {
    auto d = collect(desk_config(), balls::UniformPolicy(desk_config()), 10, 4);
    d.manifest.schema_version = kDatasetSchemaVersion + 1;
    CHECK_THROWS_AS(deserialize(serialize(d)), SchemaVersionMismatch);
  }

  TEST_CASE("crc64 check value") { CHECK(crc64("123456789") == 0x995DC9BBDF1939FAULL); }

  TEST_CASE("split fractions and degenerate splits") {
    const auto d = collect(desk_config(), balls::UniformPolicy(desk_config()), 4000, 5);  // 10 episodes
    const auto s = split(d, {0.8, 0.1, 0.1}, 1);
    CHECK(episodes_of(s.train).size() == 8);
    CHECK(episodes_of(s.val).size() == 1);
    CHECK(episodes_of(s.eval).size() == 1);

    const auto all = split(d, {1.0, 0.0, 0.0}, 1);
    CHECK(all.train.size() == d.size());
    CHECK(all.val.empty());
    CHECK(all.eval.empty());

    CHECK_THROWS_AS(split(d, {0.5, 0.3, 0.1}, 1), std::invalid_argument);
    CHECK_THROWS_AS(split(d, {1.2, -0.1, -0.1}, 1), std::invalid_argument);
    const auto one = collect(desk_config(), balls::UniformPolicy(desk_config()), 10, 5);
    CHECK_THROWS_AS(split(one, {0.5, 0.5, 0.0}, 1), InsufficientEpisodes);
  }

  TEST_CASE("split partitions whole episodes") {
    const auto& d = dard::testing::uniform_data();
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const auto s = split(d, {0.6, 0.2, 0.2}, seed);
      CHECK(s.train.size() + s.val.size() + s.eval.size() == d.size());
      const auto a = episodes_of(s.train);
      const auto b = episodes_of(s.val);
      const auto c = episodes_of(s.eval);
      std::set<std::int64_t> u = a;
      u.insert(b.begin(), b.end());
      u.insert(c.begin(), c.end());
      CHECK(u.size() == a.size() + b.size() + c.size());
      CHECK(u == episodes_of(d));
      CHECK_NOTHROW(s.train.validate());
    }
    CHECK(split(d, {0.6, 0.2, 0.2}, 7).val == split(d, {0.6, 0.2, 0.2}, 7).val);
  }

  TEST_CASE("concat shifts episode ids") {
    const auto a = collect(desk_config(), balls::UniformPolicy(desk_config()), 800, 1);
    const auto b = collect(desk_config(), balls::ScriptedExpert(desk_config()), 400, 2);
    const auto c = concat(a, b);
    CHECK(c.size() == 1200);
    CHECK(c.manifest.episodes == 3);
    CHECK(c.transitions[800].episode == 2);
    CHECK(c.transitions[800].s == b.transitions[0].s);
    CHECK_NOTHROW(c.validate());

    TransitionDataset other = b;
    other.manifest.schema = make_schema("other", 18, 2);
    CHECK_THROWS_AS(concat(a, other), SchemaMismatch);
  }
}
