#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dard/experiments.hpp"
#include "dard/reward_spec.hpp"

namespace fs = std::filesystem;
using namespace dard;
using nlohmann::json;

namespace {

enum ExitCode : int { kOk = 0, kFailedCheck = 1, kUsage = 2, kIo = 3, kDegenerate = 4, kDivergence = 5 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::string out_dir = ".";
  int threads = 0;
};

exp::ExperimentConfig load_config(const Globals& g) {
  exp::ExperimentConfig cfg;
  if (!g.config_path.empty()) cfg = exp::ExperimentConfig::from_json(load_json(g.config_path));
  if (!g.seeds.empty()) cfg.seeds = g.seeds;
  if (g.threads > 0) cfg.threads = g.threads;
  cfg.validate();
  return cfg;
}

/// Writes `text` to `path`, or to stdout when path is "-".
void emit(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
  } else {
    exp::write_text(path, text);
  }
}

fs::path under(const Globals& g, const std::string& name) {
  const fs::path p(name);
  return p.is_absolute() ? p : fs::path(g.out_dir) / p;
}

/// Inline JSON object, or "@file" holding one object or an array of objects.
std::vector<json> parse_specs(const std::vector<std::string>& args) {
  std::vector<json> specs;
  for (const auto& a : args) {
    json j;
    if (!a.empty() && a.front() == '@') {
      j = load_json(a.substr(1));
    } else {
      try {
        j = json::parse(a);
      } catch (const json::parse_error& e) {
        throw UsageError("cannot parse reward spec '" + a + "': " + e.what());
      }
    }
    if (j.is_array()) {
      for (auto& s : j) specs.push_back(s);
    } else {
      specs.push_back(j);
    }
  }
  return specs;
}

// --- subcommands --------------------------------------------------------------

struct CollectArgs {
  std::string env = "bouncing_balls";
  std::string policy = "uniform";
  long long steps = 0;
  std::uint64_t seed = 0;
  std::string out;
};

int run_collect(const Globals& g, const CollectArgs& a) {
  if (a.env != "bouncing_balls") throw UsageError("unknown env '" + a.env + "'");
  if (a.steps <= 0) throw UsageError("--steps must be positive");
  const auto cfg = load_config(g);
  const TransitionDataset data = [&] {
    if (a.policy == "uniform") return collect(cfg.env, balls::UniformPolicy(cfg.env), static_cast<std::size_t>(a.steps), a.seed);
    if (a.policy == "expert") return collect(cfg.env, balls::ScriptedExpert(cfg.env), static_cast<std::size_t>(a.steps), a.seed);
    throw UsageError("unknown policy '" + a.policy + "'");
  }();
  save(data, under(g, a.out));
  std::cerr << "wrote " << data.size() << " transitions to " << under(g, a.out).string() << '\n';
  return kOk;
}

struct TrainRewardArgs {
  std::string method;
  std::string train;
  std::string val;
  std::string target = R"({"kind":"shaped"})";
  std::uint64_t seed = 0;
  std::string out;
};

int run_train_reward(const Globals& g, const TrainRewardArgs& a) {
  const auto cfg = load_config(g);
  const TransitionDataset train = load(a.train);
  const TransitionDataset val = load(a.val);
  const RewardContext ctx{cfg.env, cfg.metric.gamma, fs::current_path()};
  TrainHyper hyper = cfg.hyper;
  hyper.gamma = cfg.metric.gamma;
  std::shared_ptr<LearnedReward> model;
  if (a.method == "regress" || a.method == "regress-ood") {
    const auto specs = parse_specs({a.target});
    if (specs.size() != 1) throw UsageError("--target must be a single reward spec");
    const RewardPtr target = make_reward(specs.front(), ctx);
    model = a.method == "regress" ? train_regress(train, val, *target, hyper, a.seed)
                                  : train_regress_ood(train, val, *target, hyper, a.seed);
  } else if (a.method == "preferences") {
    model = train_preferences(train, val, hyper, a.seed);
  } else {
    throw UsageError("unknown method '" + a.method + "'");
  }
  model->save(under(g, a.out));
  std::cerr << model->name() << ": " << model->manifest().epochs_run << " epochs, best val loss "
            << model->manifest().best_val_loss << '\n';
  return kOk;
}

struct TrainDynamicsArgs {
  std::string method = "lsq";
  std::string train;
  std::string val;
  std::uint64_t seed = 0;
  std::string out;
};

int run_train_dynamics(const Globals& g, const TrainDynamicsArgs& a) {
  const auto cfg = load_config(g);
  const TransitionDataset train = load(a.train);
  json j;
  if (a.method == "lsq") {
    j = fit_dynamics_lsq(train)->to_json();
  } else if (a.method == "mlp") {
    if (a.val.empty()) throw UsageError("--val is required for mlp dynamics");
    j = fit_dynamics_mlp(train, load(a.val), cfg.hyper, a.seed)->to_json();
  } else {
    throw UsageError("unknown method '" + a.method + "'");
  }
  save_json(j, under(g, a.out));
  return kOk;
}

struct CompareArgs {
  std::string data;
  std::string reference = R"({"kind":"ground_truth"})";
  std::vector<std::string> rewards;
  std::string dynamics;
  std::string out = "-";
};

int run_compare(const Globals& g, const CompareArgs& a) {
  const auto cfg = load_config(g);
  const TransitionDataset data = load(a.data);
  const RewardContext ctx{cfg.env, cfg.metric.gamma, fs::current_path()};
  const auto ref_specs = parse_specs({a.reference});
  if (ref_specs.size() != 1) throw UsageError("--reference must be a single reward spec");
  const RewardPtr reference = make_reward(ref_specs.front(), ctx);
  std::vector<RewardPtr> candidates;
  for (const auto& s : parse_specs(a.rewards)) candidates.push_back(make_reward(s, ctx));
  if (candidates.empty()) throw UsageError("at least one --reward is required");
  const balls::ConstantVelocityDynamics cv(cfg.env);
  const DynamicsPtr learned = a.dynamics.empty() ? nullptr : load_dynamics(a.dynamics);
  const auto reports = exp::compare(data, reference, candidates, cv, learned.get(), cfg);
  const std::string csv = exp::compare_csv(reports, learned != nullptr);
  emit(a.out == "-" ? a.out : under(g, a.out).string(), csv);
  return csv.find("degenerate") != std::string::npos ? kDegenerate : kOk;
}

struct Table1Args {
  bool train_inline = true;
  bool no_learned = false;
};

int run_table1(const Globals& g, const Table1Args& a) {
  auto cfg = load_config(g);
  if (a.no_learned) cfg.include_learned = false;
  if (cfg.include_learned && !a.train_inline) {
    throw UsageError("table1 trains its reward models inline; pass --train-inline or --no-learned");
  }
  const auto result = exp::table1(cfg);
  const std::string csv = result.csv();
  const std::string md = result.markdown();
  exp::write_text(under(g, "table1.csv"), csv);
  exp::write_text(under(g, "table1.md"), md);
  std::cout << md;
  return csv.find("nan") != std::string::npos ? kDegenerate : kOk;
}

struct NoiseArgs {
  std::string data;
  bool oracle = false;
  std::size_t population = 65536;
  std::vector<double> sigmas;
  std::vector<std::size_t> sizes;
  int k = 0;
  std::string out = "-";
};

int run_noise(const Globals& g, const NoiseArgs& a) {
  const auto cfg = load_config(g);
  exp::NoiseSweepConfig sweep;
  if (!a.sigmas.empty()) sweep.sigmas = a.sigmas;
  if (!a.sizes.empty()) sweep.sample_sizes = a.sizes;
  if (a.k > 0) sweep.k = a.k;
  std::vector<exp::NoiseRow> rows;
  if (a.oracle) {
    const auto problem = exp::make_oracle_problem(8, 3, false, cfg.seeds.front());
    rows = exp::oracle_noise_sweep(problem, a.population, sweep, cfg.seeds.front());
  } else {
    if (a.data.empty()) throw UsageError("--data or --oracle is required");
    rows = exp::noise_sweep(load(a.data), cfg, sweep);
  }
  emit(a.out == "-" ? a.out : under(g, a.out).string(), exp::noise_csv(rows));
  return kOk;
}

struct RandomArgs {
  std::string uniform;
  std::string expert;
  int count = 128;
  std::string out = "-";
};

int run_random(const Globals& g, const RandomArgs& a) {
  const auto cfg = load_config(g);
  const auto rows = exp::random_rewards(load(a.uniform), load(a.expert), a.count, cfg, cfg.seeds.front());
  const std::string csv = exp::random_rewards_csv(rows);
  emit(a.out == "-" ? a.out : under(g, a.out).string(), csv);
  return csv.find("nan") != std::string::npos ? kDegenerate : kOk;
}

int run_oracle_check(const Globals& g) {
  const auto cfg = load_config(g);
  bool all = true;
  for (const auto& c : exp::oracle_check(cfg.seeds.front())) {
    std::printf("%s %s: %.3e (bound %.3e)\n", c.pass ? "PASS" : "FAIL", c.name.c_str(), c.value, c.bound);
    all = all && c.pass;
  }
  return all ? kOk : kFailedCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reward-function distances without policy optimisation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "Experiment config JSON");
  app.add_option("--seeds,--seed", g.seeds, "Seed list (overrides the config)");
  app.add_option("--out-dir", g.out_dir, "Directory for relative output paths");
  app.add_option("--threads", g.threads, "Worker threads for per-seed runs");

  CollectArgs collect_args;
  auto* collect_cmd = app.add_subcommand("collect", "Roll out a policy and save a dataset");
  collect_cmd->add_option("--env", collect_args.env, "Environment (bouncing_balls)");
  collect_cmd->add_option("--policy", collect_args.policy, "Coverage policy")->check(CLI::IsMember({"uniform", "expert"}));
  collect_cmd->add_option("--steps", collect_args.steps, "Number of transitions")->required();
  collect_cmd->add_option("--seed", collect_args.seed, "Rollout seed");
  collect_cmd->add_option("--out", collect_args.out, "Dataset file to write")->required();

  TrainRewardArgs tr_args;
  auto* tr_cmd = app.add_subcommand("train-reward", "Fit a learned reward model");
  tr_cmd->add_option("--method", tr_args.method, "Training method")->required()->check(CLI::IsMember({"regress", "regress-ood", "preferences"}));
  tr_cmd->add_option("--train", tr_args.train, "Training dataset")->required();
  tr_cmd->add_option("--val", tr_args.val, "Validation dataset")->required();
  tr_cmd->add_option("--target", tr_args.target, "Regression target reward spec");
  tr_cmd->add_option("--seed", tr_args.seed, "Training seed");
  tr_cmd->add_option("--out", tr_args.out, "Checkpoint file to write")->required();

  TrainDynamicsArgs td_args;
  auto* td_cmd = app.add_subcommand("train-dynamics", "Fit a learned dynamics model");
  td_cmd->add_option("--method", td_args.method, "Model family (default lsq)")->check(CLI::IsMember({"lsq", "mlp"}));
  td_cmd->add_option("--train", td_args.train, "Training dataset")->required();
  td_cmd->add_option("--val", td_args.val, "Validation dataset (mlp only)");
  td_cmd->add_option("--seed", td_args.seed, "Training seed (mlp only)");
  td_cmd->add_option("--out", td_args.out, "Checkpoint file to write")->required();

  CompareArgs cmp_args;
  auto* cmp_cmd = app.add_subcommand("compare", "Distances from a reference reward to candidates");
  cmp_cmd->add_option("--data", cmp_args.data, "Coverage dataset")->required();
  cmp_cmd->add_option("--reference", cmp_args.reference, "Reward spec (JSON or @file)");
  cmp_cmd->add_option("--reward", cmp_args.rewards, "Reward spec (JSON or @file); repeatable")->required();
  cmp_cmd->add_option("--dynamics", cmp_args.dynamics, "Learned dynamics checkpoint for DARD-L");
  cmp_cmd->add_option("--out", cmp_args.out, "CSV output, - for stdout");

  Table1Args t1_args;
  auto* t1_cmd = app.add_subcommand("table1", "Full per-seed pipeline; writes table1.csv and table1.md");
  t1_cmd->add_flag("--train-inline,!--no-train-inline", t1_args.train_inline, "Train reward models inside the run (the only mode)");
  t1_cmd->add_flag("--no-learned", t1_args.no_learned, "Skip the learned reward rows");

  NoiseArgs noise_args;
  auto* noise_cmd = app.add_subcommand("noise-sweep", "Distance and CI width against added noise");
  noise_cmd->add_option("--data", noise_args.data, "Coverage dataset (ball world)");
  noise_cmd->add_flag("--oracle", noise_args.oracle, "Use a tabular MDP with exact distances");
  noise_cmd->add_option("--population", noise_args.population, "Oracle transitions to sample");
  noise_cmd->add_option("--sigmas", noise_args.sigmas, "Noise standard deviations");
  noise_cmd->add_option("--sizes", noise_args.sizes, "Bootstrap subset sizes");
  noise_cmd->add_option("--k", noise_args.k, "Bootstrap subsets per size");
  noise_cmd->add_option("--out", noise_args.out, "CSV output, - for stdout");

  RandomArgs rr_args;
  auto* rr_cmd = app.add_subcommand("random-rewards", "DARD to GT over sampled linear rewards");
  rr_cmd->add_option("--uniform", rr_args.uniform, "Uniform-coverage dataset")->required();
  rr_cmd->add_option("--expert", rr_args.expert, "Expert-coverage dataset")->required();
  rr_cmd->add_option("--count", rr_args.count, "Number of sampled rewards");
  rr_cmd->add_option("--out", rr_args.out, "CSV output, - for stdout");

  auto* oc_cmd = app.add_subcommand("oracle-check", "Exact checks on small tabular MDPs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*collect_cmd) return run_collect(g, collect_args);
    if (*tr_cmd) return run_train_reward(g, tr_args);
    if (*td_cmd) return run_train_dynamics(g, td_args);
    if (*cmp_cmd) return run_compare(g, cmp_args);
    if (*t1_cmd) return run_table1(g, t1_args);
    if (*noise_cmd) return run_noise(g, noise_args);
    if (*rr_cmd) return run_random(g, rr_args);
    if (*oc_cmd) return run_oracle_check(g);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const ChecksumMismatch& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const SchemaVersionMismatch& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const DegenerateVariance& e) {
    std::cerr << "degenerate: " << e.what() << '\n';
    return kDegenerate;
  } catch (const DivergenceDetected& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return kDivergence;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailedCheck;
  }
  return kUsage;
}
