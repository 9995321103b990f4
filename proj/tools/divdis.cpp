// divdis: command-line entry point for runs, sweeps, the label bound and
// dataset dumps.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "divdis/disambiguate.hpp"
#include "divdis/error.hpp"
#include "divdis/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRunFailure = 3;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("divdis");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("DIVDIS_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    throw divdis::ConfigError({"DIVDIS_LOG: \"" + level + "\" is not one of error, info, debug"});
  }
}

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string seeds;
  std::string out;
  std::size_t jobs = 1;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_jobs) {
  cmd->add_option("--config", f.config, "experiment config (JSON)")->required();
  auto* one = cmd->add_option("--seed", f.seed, "run a single seed");
  cmd->add_option("--seeds", f.seeds, "comma-separated seeds")->excludes(one);
  cmd->add_option("--out", f.out, "output directory (overrides the config)");
  if (with_jobs) cmd->add_option("--jobs", f.jobs, "runs in parallel")->check(CLI::PositiveNumber);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
      if (item.empty() || item[0] == '-') throw std::invalid_argument(item);
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw divdis::ConfigError({"--seeds: \"" + item + "\" is not a seed"});
    out.push_back(v);
  }
  if (out.empty()) throw divdis::ConfigError({"--seeds: empty list"});
  return out;
}

divdis::ExperimentConfig load(const CommonFlags& f) {
  divdis::Json j;
  try {
    j = divdis::Json::parse(divdis::read_file(f.config));
  } catch (const divdis::Error& e) {
    throw divdis::ConfigError({e.what()});
  } catch (const divdis::Json::parse_error& e) {
    throw divdis::ConfigError({f.config + ": not valid JSON: " + e.what()});
  }
  // Overrides go through the same validation as the file itself.
  if (f.seed) j["seeds"] = {*f.seed};
  if (!f.seeds.empty()) j["seeds"] = parse_seed_list(f.seeds);
  if (!f.out.empty()) j["out"] = f.out;
  return divdis::parse_config(j);
}

int report_failures(const std::vector<divdis::RunFailure>& failures) {
  for (const auto& f : failures) std::cerr << "seed " << f.seed << " failed: " << f.message << '\n';
  return failures.empty() ? kOk : kRunFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diversify-then-disambiguate experiments on synthetic underspecified tasks"};
  app.require_subcommand(1);

  CommonFlags run_flags, sweep_flags, gen_flags;
  auto* run = app.add_subcommand("run", "train, select and evaluate per seed");
  add_common(run, run_flags, true);
  auto* sweep = app.add_subcommand("sweep", "run the config's grid over loss weights and/or mix ratio");
  add_common(sweep, sweep_flags, true);
  auto* gen = app.add_subcommand("generate", "dump the task's datasets as CSV");
  add_common(gen, gen_flags, false);
  bool with_hidden = false;
  gen->add_flag("--with-hidden-labels", with_hidden, "include target labels (offline checks only)");

  auto* bound = app.add_subcommand("bound", "labels needed to pick the best head: 2 (ln 2N - ln delta) / gap^2");
  std::size_t heads = 0;
  double delta = 0.0, gap = 0.0;
  std::size_t trials = 0;
  std::uint64_t bound_seed = 0;
  bound->add_option("heads", heads, "number of heads N")->required();
  bound->add_option("delta", delta, "failure probability")->required();
  bound->add_option("gap", gap, "risk gap between the best two heads")->required();
  bound->add_option("--monte-carlo", trials, "also simulate selection over this many trials");
  bound->add_option("--seed", bound_seed, "simulation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    setup_logging();
    if (*run) {
      const auto cfg = load(run_flags);
      return report_failures(divdis::cmd_run(cfg, run_flags.jobs));
    }
    if (*sweep) {
      const auto cfg = load(sweep_flags);
      const auto res = divdis::cmd_sweep(cfg, sweep_flags.jobs);
      std::cout << divdis::sweep_csv(res) << "spearman(source_avg, target_worst) = " << res.spearman_source_target_worst
                << '\n'
                << "wrote " << res.dir.string() << '\n';
      return report_failures(res.failures);
    }
    if (*gen) {
      divdis::cmd_generate(load(gen_flags), with_hidden);
      return kOk;
    }
    if (*bound) {
      divdis::LabelBound b{};
      try {
        b = divdis::label_bound(heads, delta, gap);
      } catch (const divdis::Error& e) {
        throw divdis::ConfigError({e.what()});
      }
      std::printf("m* = %.4f (ceil %zu)\n", b.m, b.m_ceil);
      if (trials > 0) {
        const auto mc = divdis::simulate_selection(heads, gap, b.m_ceil, trials, bound_seed);
        std::printf("monte-carlo: %llu / %zu trials failed at m = %zu, rate %.4f (delta %.4f) %s\n",
                    static_cast<unsigned long long>(mc.failures), mc.trials, mc.samples, mc.failure_rate, delta,
                    mc.failure_rate <= delta ? "ok" : "EXCEEDS DELTA");
      }
      return kOk;
    }
  } catch (const divdis::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRunFailure;
  }
  return kOk;
}
