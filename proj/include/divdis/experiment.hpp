#pragma once

// Config-driven experiment runner: parses and validates the JSON config,
// runs both stages per seed and writes the run directory.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "divdis/data.hpp"
#include "divdis/disambiguate.hpp"
#include "divdis/io.hpp"
#include "divdis/metrics.hpp"
#include "divdis/train.hpp"

namespace divdis {

struct TaskConfig {
  std::string name = "quadrants2d";  // quadrants2d | quadrants3d | noisy2d | correlated_pair
  SplitSizes sizes;
  double sigma = 0.3;
  CorrelatedPairParams pair;

  // Group ids the generator produces, so evaluation can flag missing ones.
  std::size_t expected_groups() const;
};

TaskBundle make_task(const TaskConfig& task, std::uint64_t seed);

struct ModelConfig {
  std::vector<std::size_t> hidden{32, 32};
  std::size_t heads = 2;
  double weight_scale = 1.0;
};

struct SelectionConfig {
  std::string strategy = "active";  // active | random | none
  std::size_t m = 1;
};

// Axes of a sweep; the grid is their cross product. Absent axes keep the
// base config's value.
struct SweepGrid {
  std::vector<double> mi;
  std::vector<double> reg;
  std::vector<double> mix_ratio;

  bool empty() const { return mi.empty() && reg.empty() && mix_ratio.empty(); }
};

struct ExperimentConfig {
  TaskConfig task;
  ModelConfig model;
  TrainConfig train;
  SelectionConfig selection;
  bool compare_erm = true;
  std::vector<std::uint64_t> seeds{0};
  std::string out = "runs";
  SweepGrid sweep;
};

// Strict: unknown keys, wrong types and out-of-range values are all
// collected and thrown together as one ConfigError.
ExperimentConfig parse_config(const Json& j);
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Every field, defaults filled in. parse_config(to_json(c)) reproduces c.
Json to_json(const ExperimentConfig& c);

// Hash of everything that affects a run's artifacts (seeds and out excluded).
std::string config_hash(const ExperimentConfig& c);

struct RunArtifacts {
  RunArtifacts(std::uint64_t s, TrainResult d) : seed(s), divdis(std::move(d)) {}

  std::uint64_t seed = 0;
  TrainResult divdis;
  std::optional<TrainResult> baseline;
  SelectionReport selection;
  EvalReport target_eval;
  EvalReport source_eval;
  std::optional<EvalReport> erm_target_eval;
  std::optional<EvalReport> erm_source_eval;
  std::size_t labels_used = 0;

  std::string curve_csv;
  std::string boundary_csv;
  std::string groups_csv;
  std::string selection_json;
  std::string eval_json;
  std::string manifest_json;
};

// Runs generate -> diversify -> (ERM) -> disambiguate -> evaluate for one seed.
// `observer` is handed to diversify().
RunArtifacts run_seed(const ExperimentConfig& c, std::uint64_t seed, const StepObserver& observer = {});

std::filesystem::path run_dir(const ExperimentConfig& c, std::uint64_t seed);
void write_run(const ExperimentConfig& c, const RunArtifacts& a);

struct RunFailure {
  std::uint64_t seed;
  std::string message;
};

// Runs every seed (up to `jobs` at once) and writes their directories.
// Returns the seeds that failed; the others are still written.
std::vector<RunFailure> cmd_run(const ExperimentConfig& c, std::size_t jobs);

struct SweepRow {
  double mi = 0.0;
  double reg = 0.0;
  double mix_ratio = 0.0;
  std::size_t seeds = 0;
  // Chosen DivDis head, averaged over seeds.
  double source_avg = 0.0;
  double target_avg = 0.0;
  double target_worst = 0.0;
  // Best DivDis head by target-eval average (an oracle view, for reference).
  double best_target_avg = 0.0;
  std::optional<double> erm_target_avg;
  std::optional<double> erm_target_worst;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<RunFailure> failures;
  double spearman_source_target_worst = 0.0;
  double spearman_source_target_avg = 0.0;
  double spearman_target_avg_worst = 0.0;
  std::filesystem::path dir;
};

// Runs every grid cell for every seed, writing each cell's run directories
// plus sweep.csv and sweep_summary.json under <out>/sweep-<hash>/.
SweepResult cmd_sweep(const ExperimentConfig& c, std::size_t jobs);
std::string sweep_csv(const SweepResult& r);

// Dumps the task's datasets for each seed under <out>/<hash>/<seed>/data/.
void cmd_generate(const ExperimentConfig& c, bool with_hidden_labels);

}  // namespace divdis
