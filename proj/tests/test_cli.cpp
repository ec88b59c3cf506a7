#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "dard_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

/// Runs the CLI with stdout/stderr captured to files; returns the exit status.
int run(const std::string& args) {
  const std::string cmd = std::string("'") + DARD_CLI_PATH + "' " + args + " > '" + (workdir() / "stdout.txt").string() +
                          "' 2> '" + (workdir() / "stderr.txt").string() + "'";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("collect is reproducible") {
    REQUIRE(run("collect --policy uniform --steps 1000 --seed 3 --out " + path("a.jsonl")) == 0);
    REQUIRE(run("collect --policy uniform --steps 1000 --seed 3 --out " + path("b.jsonl")) == 0);
    const std::string a = slurp(path("a.jsonl"));
    CHECK(!a.empty());
    CHECK(a == slurp(path("b.jsonl")));
    REQUIRE(run("collect --policy expert --steps 1000 --seed 3 --out " + path("c.jsonl")) == 0);
    CHECK(a != slurp(path("c.jsonl")));
  }

  TEST_CASE("usage errors exit with 2") {
    CHECK(run("collect --policy uniform --steps 0 --out " + path("z.jsonl")) == 2);
    CHECK(run("collect --policy teleport --steps 10 --out " + path("z.jsonl")) == 2);
    CHECK(run("") == 2);
    CHECK(run("no-such-command") == 2);
  }

  TEST_CASE("io errors exit with 3") {
    CHECK(run("collect --policy uniform --steps 10 --out " + path("missing_dir/x.jsonl")) == 3);
    CHECK(run("compare --data " + path("nope.jsonl") + " --reward '{\"kind\":\"shaped\"}'") == 3);
    {
      std::ofstream f(workdir() / "broken.jsonl");
      f << "{\"schema_version\":1}\n";
    }
    CHECK(run("compare --data " + path("broken.jsonl") + " --reward '{\"kind\":\"shaped\"}'") == 3);
  }

  TEST_CASE("compare of ground truth against itself") {
    REQUIRE(run("collect --policy uniform --steps 4000 --seed 5 --out " + path("u.jsonl")) == 0);
    REQUIRE(run("--seeds 0 1 compare --data " + path("u.jsonl") +
                " --reward '{\"kind\":\"ground_truth\"}' --reward '{\"kind\":\"shaped\"}' --out " + path("cmp.csv")) == 0);
    std::istringstream csv(slurp(path("cmp.csv")));
    std::string header;
    std::string gt_row;
    std::string shaped_row;
    std::getline(csv, header);
    std::getline(csv, gt_row);
    std::getline(csv, shaped_row);
    CHECK(header.rfind("reward_name,d_dard_x1000,", 0) == 0);
    CHECK(gt_row.rfind("GT,0.000,", 0) == 0);
    CHECK(shaped_row.rfind("SHAPED,", 0) == 0);
  }

  TEST_CASE("oracle check succeeds") {
    CHECK(run("oracle-check") == 0);
    CHECK(slurp(workdir() / "stdout.txt").find("FAIL") == std::string::npos);
  }
}
