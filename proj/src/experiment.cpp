#include "divdis/experiment.hpp"

#include <cmath>
#include <functional>
#include <set>
#include <sstream>

#include <omp.h>
#include <spdlog/spdlog.h>

#include "divdis/error.hpp"
#include "divdis/format.hpp"
#include "divdis/rng.hpp"

namespace divdis {

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr int kManifestFormat = 1;

bool is_count(const Json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0); }

// Collects every problem instead of stopping at the first.
class Parser {
 public:
  std::vector<std::string> problems;

  void fail(const std::string& path, const std::string& msg) { problems.push_back(path + ": " + msg); }

  bool require_object(const Json& j, const std::string& path) {
    if (j.is_object()) return true;
    fail(path, "expected an object");
    return false;
  }

  void allow_keys(const Json& obj, const std::string& path, std::initializer_list<std::string_view> allowed) {
    for (const auto& [key, _] : obj.items()) {
      bool ok = false;
      for (auto a : allowed) ok = ok || key == a;
      if (!ok) fail(join(path, key), "unknown key");
    }
  }

  static std::string join(const std::string& path, std::string_view key) {
    return path.empty() ? std::string(key) : path + "." + std::string(key);
  }

  // The member, or null when absent (absence keeps the default).
  static const Json* member(const Json& obj, std::string_view key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
  }

  void number(const Json& obj, const std::string& path, std::string_view key, double& out,
              const std::function<bool(double)>& ok, const char* requirement) {
    const Json* v = member(obj, key);
    if (!v) return;
    if (!v->is_number()) return fail(join(path, key), "expected a number");
    const double d = v->get<double>();
    if (!std::isfinite(d) || !ok(d)) return fail(join(path, key), std::string("must be ") + requirement);
    out = d;
  }

  void count(const Json& obj, const std::string& path, std::string_view key, std::size_t& out, std::size_t min) {
    const Json* v = member(obj, key);
    if (!v) return;
    if (!is_count(*v)) return fail(join(path, key), "expected a non-negative integer");
    const auto n = v->get<std::uint64_t>();
    if (n < min) return fail(join(path, key), "must be >= " + std::to_string(min));
    out = static_cast<std::size_t>(n);
  }

  void boolean(const Json& obj, const std::string& path, std::string_view key, bool& out) {
    const Json* v = member(obj, key);
    if (!v) return;
    if (!v->is_boolean()) return fail(join(path, key), "expected true or false");
    out = v->get<bool>();
  }

  void choice(const Json& obj, const std::string& path, std::string_view key, std::string& out,
              std::initializer_list<std::string_view> choices) {
    const Json* v = member(obj, key);
    if (!v) return;
    std::string options;
    for (auto c : choices) options += (options.empty() ? "" : ", ") + std::string(c);
    if (!v->is_string()) return fail(join(path, key), "expected one of " + options);
    const auto s = v->get<std::string>();
    for (auto c : choices) {
      if (s == c) {
        out = s;
        return;
      }
    }
    fail(join(path, key), "\"" + s + "\" is not one of " + options);
  }

  void numbers(const Json& obj, const std::string& path, std::string_view key, std::vector<double>& out,
               const std::function<bool(double)>& ok, const char* requirement) {
    const Json* v = member(obj, key);
    if (!v) return;
    if (!v->is_array()) return fail(join(path, key), "expected an array of numbers");
    std::vector<double> vals;
    bool good = true;
    for (std::size_t i = 0; i < v->size(); ++i) {
      const Json& e = (*v)[i];
      const std::string p = join(path, key) + "[" + std::to_string(i) + "]";
      if (!e.is_number()) {
        fail(p, "expected a number");
        good = false;
      } else if (!std::isfinite(e.get<double>()) || !ok(e.get<double>())) {
        fail(p, std::string("must be ") + requirement);
        good = false;
      } else {
        vals.push_back(e.get<double>());
      }
    }
    if (good) out = std::move(vals);
  }

  template <class T>
  void counts(const Json& obj, const std::string& path, std::string_view key, std::vector<T>& out, std::uint64_t min) {
    const Json* v = member(obj, key);
    if (!v) return;
    if (!v->is_array()) return fail(join(path, key), "expected an array of non-negative integers");
    std::vector<T> vals;
    bool good = true;
    for (std::size_t i = 0; i < v->size(); ++i) {
      const Json& e = (*v)[i];
      const std::string p = join(path, key) + "[" + std::to_string(i) + "]";
      if (!is_count(e)) {
        fail(p, "expected a non-negative integer");
        good = false;
      } else if (e.get<std::uint64_t>() < min) {
        fail(p, "must be >= " + std::to_string(min));
        good = false;
      } else {
        vals.push_back(static_cast<T>(e.get<std::uint64_t>()));
      }
    }
    if (good) out = std::move(vals);
  }
};

auto positive = [](double d) { return d > 0.0; };
auto non_negative = [](double d) { return d >= 0.0; };
auto unit_closed = [](double d) { return d >= 0.0 && d <= 1.0; };
auto unit_open_right = [](double d) { return d >= 0.0 && d < 1.0; };

void parse_task(Parser& p, const Json& j, TaskConfig& t) {
  const std::string path = "task";
  if (!p.require_object(j, path)) return;
  p.allow_keys(j, path, {"name", "n_source", "n_target", "n_eval", "sigma", "mix_ratio", "margin_simple", "margin_complex"});
  p.choice(j, path, "name", t.name, {"quadrants2d", "quadrants3d", "noisy2d", "correlated_pair"});
  p.count(j, path, "n_source", t.sizes.source, 2);
  p.count(j, path, "n_target", t.sizes.target, 2);
  p.count(j, path, "n_eval", t.sizes.eval, 2);
  if (t.name == "noisy2d") {
    p.number(j, path, "sigma", t.sigma, non_negative, ">= 0");
  } else if (Parser::member(j, "sigma")) {
    p.fail("task.sigma", "only used by noisy2d");
  }
  if (t.name == "correlated_pair") {
    p.number(j, path, "mix_ratio", t.pair.mix_ratio, unit_closed, "in [0, 1]");
    p.number(j, path, "margin_simple", t.pair.margin_simple, positive, "> 0");
    p.number(j, path, "margin_complex", t.pair.margin_complex, positive, "> 0");
  } else {
    for (const char* k : {"mix_ratio", "margin_simple", "margin_complex"}) {
      if (Parser::member(j, k)) p.fail(std::string("task.") + k, "only used by correlated_pair");
    }
  }
}

void parse_model(Parser& p, const Json& j, ModelConfig& m) {
  const std::string path = "model";
  if (!p.require_object(j, path)) return;
  p.allow_keys(j, path, {"hidden", "heads", "weight_scale"});
  p.counts(j, path, "hidden", m.hidden, 1);
  p.count(j, path, "heads", m.heads, 1);
  p.number(j, path, "weight_scale", m.weight_scale, positive, "> 0");
}

void parse_train(Parser& p, const Json& j, TrainConfig& t) {
  std::string path = "train";
  if (!p.require_object(j, path)) return;
  p.allow_keys(j, path, {"steps", "batch_source", "batch_target", "record_every", "optimizer", "weights", "prior"});
  p.count(j, path, "steps", t.steps, 1);
  p.count(j, path, "batch_source", t.batch_source, 1);
  p.count(j, path, "batch_target", t.batch_target, 1);
  p.count(j, path, "record_every", t.record_every, 1);

  if (const Json* o = Parser::member(j, "optimizer"); o && p.require_object(*o, "train.optimizer")) {
    path = "train.optimizer";
    p.allow_keys(*o, path, {"kind", "lr", "momentum", "beta1", "beta2", "eps"});
    std::string kind = t.optimizer.kind == OptimizerConfig::Kind::Adam ? "adam" : "sgd";
    p.choice(*o, path, "kind", kind, {"adam", "sgd"});
    t.optimizer.kind = kind == "adam" ? OptimizerConfig::Kind::Adam : OptimizerConfig::Kind::Sgd;
    p.number(*o, path, "lr", t.optimizer.lr, positive, "> 0");
    if (kind == "sgd") {
      p.number(*o, path, "momentum", t.optimizer.momentum, unit_open_right, "in [0, 1)");
      for (const char* k : {"beta1", "beta2", "eps"}) {
        if (Parser::member(*o, k)) p.fail(path + "." + k, "only used by adam");
      }
    } else {
      p.number(*o, path, "beta1", t.optimizer.beta1, unit_open_right, "in [0, 1)");
      p.number(*o, path, "beta2", t.optimizer.beta2, unit_open_right, "in [0, 1)");
      p.number(*o, path, "eps", t.optimizer.eps, positive, "> 0");
      if (Parser::member(*o, "momentum")) p.fail(path + ".momentum", "only used by sgd");
    }
  }

  if (const Json* w = Parser::member(j, "weights"); w && p.require_object(*w, "train.weights")) {
    path = "train.weights";
    p.allow_keys(*w, path, {"mi", "reg", "auto_scale"});
    p.number(*w, path, "mi", t.weights.mi, non_negative, ">= 0");
    p.number(*w, path, "reg", t.weights.reg, non_negative, ">= 0");
    p.boolean(*w, path, "auto_scale", t.weights.auto_scale);
  }

  if (const Json* pr = Parser::member(j, "prior"); pr && p.require_object(*pr, "train.prior")) {
    path = "train.prior";
    p.allow_keys(*pr, path, {"mode", "fixed"});
    std::string mode = "fixed";
    p.choice(*pr, path, "mode", mode, {"fixed", "source-marginal"});
    t.prior.mode = mode == "fixed" ? PriorSpec::Mode::Fixed : PriorSpec::Mode::SourceMarginal;
    if (Parser::member(*pr, "fixed")) {
      if (mode != "fixed") {
        p.fail(path + ".fixed", "only used when mode is fixed");
      } else {
        const std::size_t before = p.problems.size();
        p.numbers(*pr, path, "fixed", t.prior.fixed, non_negative, ">= 0");
        if (p.problems.size() == before) {
          try {
            t.prior.validate(2);
          } catch (const Error& e) {
            p.fail(path + ".fixed", e.what());
          }
        }
      }
    }
  }
}

void parse_selection(Parser& p, const Json& j, SelectionConfig& s) {
  const std::string path = "disambiguate";
  if (!p.require_object(j, path)) return;
  p.allow_keys(j, path, {"strategy", "m"});
  p.choice(j, path, "strategy", s.strategy, {"active", "random", "none"});
  p.count(j, path, "m", s.m, 1);
}

void parse_sweep(Parser& p, const Json& j, SweepGrid& g) {
  const std::string path = "sweep";
  if (!p.require_object(j, path)) return;
  p.allow_keys(j, path, {"mi", "reg", "mix_ratio"});
  p.numbers(j, path, "mi", g.mi, non_negative, ">= 0");
  p.numbers(j, path, "reg", g.reg, non_negative, ">= 0");
  p.numbers(j, path, "mix_ratio", g.mix_ratio, unit_closed, "in [0, 1]");
  for (const char* k : {"mi", "reg", "mix_ratio"}) {
    const Json* v = Parser::member(j, k);
    if (v && v->is_array() && v->empty()) p.fail(std::string("sweep.") + k, "empty axis");
  }
}

}  // namespace

std::size_t TaskConfig::expected_groups() const { return name == "quadrants3d" ? 8 : 4; }

TaskBundle make_task(const TaskConfig& task, std::uint64_t seed) {
  if (task.name == "quadrants2d") return gen_quadrants2d(task.sizes, seed);
  if (task.name == "quadrants3d") return gen_quadrants3d(task.sizes, seed);
  if (task.name == "noisy2d") return gen_noisy2d(task.sizes, task.sigma, seed);
  if (task.name == "correlated_pair") return gen_correlated_pair(task.sizes, task.pair, seed);
  throw Error("unknown task " + task.name);
}

ExperimentConfig parse_config(const Json& j) {
  Parser p;
  ExperimentConfig c;
  if (!j.is_object()) throw ConfigError({"top level: expected an object"});
  p.allow_keys(j, "", {"task", "model", "train", "disambiguate", "compare_erm", "seeds", "out", "sweep"});
  if (const Json* v = Parser::member(j, "task")) parse_task(p, *v, c.task);
  if (const Json* v = Parser::member(j, "model")) parse_model(p, *v, c.model);
  if (const Json* v = Parser::member(j, "train")) parse_train(p, *v, c.train);
  if (const Json* v = Parser::member(j, "disambiguate")) parse_selection(p, *v, c.selection);
  if (const Json* v = Parser::member(j, "sweep")) parse_sweep(p, *v, c.sweep);
  p.boolean(j, "", "compare_erm", c.compare_erm);
  p.counts(j, "", "seeds", c.seeds, 0);
  if (const Json* v = Parser::member(j, "out")) {
    if (!v->is_string() || v->get<std::string>().empty()) {
      p.fail("out", "expected a non-empty path string");
    } else {
      c.out = v->get<std::string>();
    }
  }

  if (c.seeds.empty()) p.fail("seeds", "need at least one seed");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
    p.fail("seeds", "duplicate seed");
  }
  if (c.selection.strategy != "none") {
    if (c.model.heads < 2) p.fail("disambiguate.strategy", "nothing to disambiguate with one head (use \"none\")");
    if (c.selection.m > c.task.sizes.target) p.fail("disambiguate.m", "exceeds task.n_target");
  }
  if (!c.sweep.mix_ratio.empty() && c.task.name != "correlated_pair") {
    p.fail("sweep.mix_ratio", "only used by correlated_pair");
  }
  if (!p.problems.empty()) throw ConfigError(std::move(p.problems));
  return c;
}

ExperimentConfig parse_config_text(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError({std::string("not valid JSON: ") + e.what()});
  }
  return parse_config(j);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw ConfigError({e.what()});
  }
  return parse_config_text(text);
}

Json to_json(const ExperimentConfig& c) {
  Json task{{"name", c.task.name},
            {"n_source", c.task.sizes.source},
            {"n_target", c.task.sizes.target},
            {"n_eval", c.task.sizes.eval}};
  if (c.task.name == "noisy2d") task["sigma"] = c.task.sigma;
  if (c.task.name == "correlated_pair") {
    task["mix_ratio"] = c.task.pair.mix_ratio;
    task["margin_simple"] = c.task.pair.margin_simple;
    task["margin_complex"] = c.task.pair.margin_complex;
  }

  const auto& o = c.train.optimizer;
  Json opt{{"kind", o.kind == OptimizerConfig::Kind::Adam ? "adam" : "sgd"}, {"lr", o.lr}};
  if (o.kind == OptimizerConfig::Kind::Adam) {
    opt["beta1"] = o.beta1;
    opt["beta2"] = o.beta2;
    opt["eps"] = o.eps;
  } else {
    opt["momentum"] = o.momentum;
  }
  Json prior{{"mode", c.train.prior.mode == PriorSpec::Mode::Fixed ? "fixed" : "source-marginal"}};
  if (c.train.prior.mode == PriorSpec::Mode::Fixed && !c.train.prior.fixed.empty()) prior["fixed"] = c.train.prior.fixed;

  Json j;
  j["task"] = task;
  j["model"] = Json{{"hidden", c.model.hidden}, {"heads", c.model.heads}, {"weight_scale", c.model.weight_scale}};
  j["train"] = Json{{"steps", c.train.steps},
                    {"batch_source", c.train.batch_source},
                    {"batch_target", c.train.batch_target},
                    {"record_every", c.train.record_every},
                    {"optimizer", opt},
                    {"weights", {{"mi", c.train.weights.mi}, {"reg", c.train.weights.reg}, {"auto_scale", c.train.weights.auto_scale}}},
                    {"prior", prior}};
  j["disambiguate"] = Json{{"strategy", c.selection.strategy}, {"m", c.selection.m}};
  j["compare_erm"] = c.compare_erm;
  j["seeds"] = c.seeds;
  j["out"] = c.out;
  if (!c.sweep.empty()) {
    Json s = Json::object();
    if (!c.sweep.mi.empty()) s["mi"] = c.sweep.mi;
    if (!c.sweep.reg.empty()) s["reg"] = c.sweep.reg;
    if (!c.sweep.mix_ratio.empty()) s["mix_ratio"] = c.sweep.mix_ratio;
    j["sweep"] = s;
  }
  return j;
}

std::string config_hash(const ExperimentConfig& c) {
  Json j = to_json(c);
  j.erase("seeds");
  j.erase("out");
  j.erase("sweep");
  return hex64(fnv1a64(j.dump()));
}

namespace {

Json attribution_json(const MultiHeadClassifier& model, const Matrix& x) {
  const AttributionProfile prof = attribution(model, x);
  Json j{{"profiles", prof.heads}, {"degenerate", std::vector<bool>(prof.degenerate.begin(), prof.degenerate.end())}};
  if (prof.heads.size() >= 2) {
    j["diversity"] = diversity_stat(prof.heads);
  } else {
    j["diversity"] = nullptr;
  }
  j["warnings"] = prof.warnings;
  return j;
}

bool has_linear_boundaries(const MultiHeadClassifier& m) {
  return m.backbone().empty() && m.input_dim() == 2 && m.num_classes() == 2;
}

Json coverage_json(const CoverageReport& c) {
  Json angles = Json::array();
  for (const auto& a : c.angles) angles.push_back(a ? Json(*a) : Json(nullptr));
  return Json{{"angles", angles}, {"covered_degrees", c.covered_degrees}, {"fraction", c.fraction}, {"notes", c.notes}};
}

}  // namespace

RunArtifacts run_seed(const ExperimentConfig& c, std::uint64_t seed, const StepObserver& observer) {
  const TaskBundle bundle = make_task(c.task, seed);
  const InitSpec init{seed, c.model.weight_scale, {}};
  TrainConfig tc = c.train;
  tc.seed = seed;

  spdlog::debug("seed {}: {}", seed, bundle.descriptor.to_string());
  auto model = MultiHeadClassifier::init(bundle.dims(), c.model.hidden, c.model.heads, bundle.classes, init);
  RunArtifacts a(seed, diversify(std::move(model), bundle, tc, observer));
  const auto& final_loss = a.divdis.curve.rows.back().loss;
  spdlog::debug("seed {}: diversify done, xent={} mi={} reg={}", seed, final_loss.xent, final_loss.mi, final_loss.reg);

  if (c.compare_erm) {
    auto base = MultiHeadClassifier::init(bundle.dims(), c.model.hidden, 1, bundle.classes, init);
    a.baseline = erm(std::move(base), bundle.source, tc, &bundle.target_eval);
    auto& rows = a.divdis.curve.rows;
    const auto& erm_rows = a.baseline->curve.rows;
    if (erm_rows.size() != rows.size()) throw Error("internal: ERM curve does not align with the diversify curve");
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].erm_accuracy = erm_rows[i].head_accuracy.at(0);
  }

  LabelOracle oracle(bundle.target_unlabeled);
  const auto& sel = c.selection;
  if (sel.strategy == "active") {
    a.selection = select_active(a.divdis.model, bundle.target_unlabeled, sel.m, oracle);
  } else if (sel.strategy == "random") {
    a.selection = select_random(a.divdis.model, bundle.target_unlabeled, sel.m, seed, oracle);
  } else {
    a.selection.strategy = "none";
    a.selection.chosen = 0;
  }
  a.labels_used = oracle.labels_used();

  const std::size_t groups = c.task.expected_groups();
  a.target_eval = evaluate(a.divdis.model, bundle.target_eval, a.selection.chosen, groups);
  a.source_eval = evaluate(a.divdis.model, bundle.source_eval, a.selection.chosen, groups);
  if (a.baseline) {
    a.erm_target_eval = evaluate(a.baseline->model, bundle.target_eval, 0, groups);
    a.erm_source_eval = evaluate(a.baseline->model, bundle.source_eval, 0, groups);
  }

  const std::string hash = config_hash(c);
  std::ostringstream curve;
  a.divdis.curve.write_csv(curve);
  a.curve_csv = curve.str();
  a.boundary_csv = boundary_csv(a.divdis.model);
  a.groups_csv = group_table_csv(a.target_eval);

  Json sj = to_json(a.selection);
  a.selection_json = sj.dump(2) + "\n";

  Json ej;
  ej["config_hash"] = hash;
  ej["seed"] = seed;
  ej["labels_used"] = a.labels_used;
  ej["final_loss"] = to_json(final_loss);
  ej["divdis"] = Json{{"target", to_json(a.target_eval)}, {"source", to_json(a.source_eval)}};
  if (a.baseline) ej["erm"] = Json{{"target", to_json(*a.erm_target_eval)}, {"source", to_json(*a.erm_source_eval)}};
  ej["attribution"] = attribution_json(a.divdis.model, bundle.target_eval.x);
  if (has_linear_boundaries(a.divdis.model)) ej["coverage"] = coverage_json(boundary_coverage(a.divdis.model));
  a.eval_json = ej.dump(2) + "\n";

  ExperimentConfig single = c;
  single.seeds = {seed};
  Json mj;
  mj["manifest_format"] = kManifestFormat;
  mj["program"] = "divdis";
  mj["version"] = kVersion;
  mj["compiler"] = __VERSION__;
  mj["json_library"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                       "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH);
  mj["config_hash"] = hash;
  mj["seed"] = seed;
  mj["task"] = bundle.descriptor.to_string();
  mj["files"] = {"curve.csv", "boundary.csv", "groups.csv", "selection.json", "eval.json"};
  mj["config"] = to_json(single);
  mj["config"].erase("out");  // where the run lives is not part of what it is
  a.manifest_json = mj.dump(2) + "\n";
  return a;
}

std::filesystem::path run_dir(const ExperimentConfig& c, std::uint64_t seed) {
  return std::filesystem::path(c.out) / config_hash(c) / std::to_string(seed);
}

void write_run(const ExperimentConfig& c, const RunArtifacts& a) {
  const auto dir = run_dir(c, a.seed);
  write_file_atomic(dir / "curve.csv", a.curve_csv);
  write_file_atomic(dir / "boundary.csv", a.boundary_csv);
  write_file_atomic(dir / "groups.csv", a.groups_csv);
  write_file_atomic(dir / "selection.json", a.selection_json);
  write_file_atomic(dir / "eval.json", a.eval_json);
  // Last, so a manifest implies the rest of the directory is complete.
  write_file_atomic(dir / "manifest.json", a.manifest_json);
}

namespace {

int thread_count(std::size_t jobs, std::size_t work) {
  return static_cast<int>(std::max<std::size_t>(1, std::min(jobs, work)));
}

}  // namespace

std::vector<RunFailure> cmd_run(const ExperimentConfig& c, std::size_t jobs) {
  const std::size_t n = c.seeds.size();
  std::vector<std::optional<RunFailure>> failed(n);
  spdlog::info("run {}: {} seed(s), {} job(s) -> {}", config_hash(c), n, std::min(jobs, n), c.out);

#pragma omp parallel for schedule(dynamic, 1) num_threads(thread_count(jobs, n))
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t seed = c.seeds[i];
    try {
      const RunArtifacts a = run_seed(c, seed);
      write_run(c, a);
      spdlog::info("seed {}: chosen head {} target avg {:.4f} worst {:.4f}", seed, a.selection.chosen,
                   a.target_eval.chosen_head().average, a.target_eval.chosen_head().worst_group);
    } catch (const std::exception& e) {
      spdlog::error("seed {} failed: {}", seed, e.what());
      failed[i] = RunFailure{seed, e.what()};
    }
  }

  std::vector<RunFailure> out;
  for (auto& f : failed) {
    if (f) out.push_back(*f);
  }
  return out;
}

SweepResult cmd_sweep(const ExperimentConfig& c, std::size_t jobs) {
  if (c.sweep.empty()) throw ConfigError({"sweep: empty grid (give at least one of mi, reg, mix_ratio)"});
  auto axis = [](const std::vector<double>& v, double base) { return v.empty() ? std::vector<double>{base} : v; };
  const auto mis = axis(c.sweep.mi, c.train.weights.mi);
  const auto regs = axis(c.sweep.reg, c.train.weights.reg);
  const auto mixes = axis(c.sweep.mix_ratio, c.task.pair.mix_ratio);

  std::vector<ExperimentConfig> cells;
  std::vector<SweepRow> rows;
  for (double mix : mixes) {
    for (double mi : mis) {
      for (double reg : regs) {
        ExperimentConfig cell = c;
        cell.sweep = {};
        cell.train.weights.mi = mi;
        cell.train.weights.reg = reg;
        cell.task.pair.mix_ratio = mix;
        cells.push_back(std::move(cell));
        SweepRow row;
        row.mi = mi;
        row.reg = reg;
        row.mix_ratio = mix;
        rows.push_back(row);
      }
    }
  }

  struct CellSeed {
    bool ok = false;
    double source_avg = 0, target_avg = 0, target_worst = 0, best_target = 0;
    std::optional<double> erm_avg, erm_worst;
    std::string error;
  };
  const std::size_t seeds = c.seeds.size();
  const std::size_t work = cells.size() * seeds;
  std::vector<CellSeed> results(work);
  spdlog::info("sweep: {} cell(s) x {} seed(s), {} job(s)", cells.size(), seeds, std::min(jobs, work));

#pragma omp parallel for schedule(dynamic, 1) num_threads(thread_count(jobs, work))
  for (std::size_t k = 0; k < work; ++k) {
    const auto& cell = cells[k / seeds];
    const std::uint64_t seed = c.seeds[k % seeds];
    auto& r = results[k];
    try {
      const RunArtifacts a = run_seed(cell, seed);
      write_run(cell, a);
      r.source_avg = a.source_eval.chosen_head().average;
      r.target_avg = a.target_eval.chosen_head().average;
      r.target_worst = a.target_eval.chosen_head().worst_group;
      r.best_target = a.target_eval.heads[a.target_eval.best_head()].average;
      if (a.erm_target_eval) {
        r.erm_avg = a.erm_target_eval->heads[0].average;
        r.erm_worst = a.erm_target_eval->heads[0].worst_group;
      }
      r.ok = true;
      spdlog::debug("sweep cell mi={} reg={} mix={} seed {}: source {:.4f} target worst {:.4f}", cell.train.weights.mi,
                    cell.train.weights.reg, cell.task.pair.mix_ratio, seed, r.source_avg, r.target_worst);
    } catch (const std::exception& e) {
      r.error = e.what();
      spdlog::error("sweep cell mi={} reg={} mix={} seed {} failed: {}", cell.train.weights.mi, cell.train.weights.reg,
                    cell.task.pair.mix_ratio, seed, e.what());
    }
  }

  SweepResult out;
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    auto& row = rows[ci];
    double erm_avg = 0, erm_worst = 0;
    for (std::size_t s = 0; s < seeds; ++s) {
      const auto& r = results[ci * seeds + s];
      if (!r.ok) {
        out.failures.push_back({c.seeds[s], "cell mi=" + std::to_string(row.mi) + " reg=" + std::to_string(row.reg) +
                                                " mix=" + std::to_string(row.mix_ratio) + ": " + r.error});
        continue;
      }
      ++row.seeds;
      row.source_avg += r.source_avg;
      row.target_avg += r.target_avg;
      row.target_worst += r.target_worst;
      row.best_target_avg += r.best_target;
      if (r.erm_avg) {
        erm_avg += *r.erm_avg;
        erm_worst += *r.erm_worst;
      }
    }
    if (row.seeds > 0) {
      const double n = static_cast<double>(row.seeds);
      row.source_avg /= n;
      row.target_avg /= n;
      row.target_worst /= n;
      row.best_target_avg /= n;
      if (c.compare_erm) {
        row.erm_target_avg = erm_avg / n;
        row.erm_target_worst = erm_worst / n;
      }
    }
  }
  out.rows = rows;

  std::vector<double> src, tavg, twst;
  for (const auto& r : rows) {
    if (r.seeds == 0) continue;
    src.push_back(r.source_avg);
    tavg.push_back(r.target_avg);
    twst.push_back(r.target_worst);
  }
  out.spearman_source_target_worst = spearman(src, twst);
  out.spearman_source_target_avg = spearman(src, tavg);
  out.spearman_target_avg_worst = spearman(tavg, twst);

  Json full = to_json(c);
  full.erase("out");
  out.dir = std::filesystem::path(c.out) / ("sweep-" + hex64(fnv1a64(full.dump())));
  write_file_atomic(out.dir / "sweep.csv", sweep_csv(out));

  Json summary;
  summary["cells"] = rows.size();
  summary["seeds"] = c.seeds;
  summary["spearman"] = Json{{"source_avg_vs_target_worst", out.spearman_source_target_worst},
                             {"source_avg_vs_target_avg", out.spearman_source_target_avg},
                             {"target_avg_vs_target_worst", out.spearman_target_avg_worst}};
  Json runs = Json::array();
  for (const auto& cell : cells) runs.push_back(config_hash(cell));
  summary["cell_config_hashes"] = runs;
  Json fails = Json::array();
  for (const auto& f : out.failures) fails.push_back(Json{{"seed", f.seed}, {"message", f.message}});
  summary["failures"] = fails;
  summary["config"] = to_json(c);
  write_file_atomic(out.dir / "sweep_summary.json", summary.dump(2) + "\n");
  spdlog::info("sweep: spearman(source avg, target worst) = {:.4f}; wrote {}", out.spearman_source_target_worst,
               out.dir.string());
  return out;
}

std::string sweep_csv(const SweepResult& r) {
  bool with_erm = false;
  for (const auto& row : r.rows) with_erm = with_erm || row.erm_target_avg.has_value();
  std::ostringstream os;
  os << "lambda_mi,lambda_reg,mix_ratio,seeds,source_avg,target_avg,target_worst,best_target_avg";
  if (with_erm) os << ",erm_target_avg,erm_target_worst";
  os << '\n';
  for (const auto& row : r.rows) {
    os << Num{row.mi} << ',' << Num{row.reg} << ',' << Num{row.mix_ratio} << ',' << row.seeds << ','
       << Num{row.source_avg} << ',' << Num{row.target_avg} << ',' << Num{row.target_worst} << ','
       << Num{row.best_target_avg};
    if (with_erm) {
      os << ',';
      if (row.erm_target_avg) os << Num{*row.erm_target_avg};
      os << ',';
      if (row.erm_target_worst) os << Num{*row.erm_target_worst};
    }
    os << '\n';
  }
  return os.str();
}

void cmd_generate(const ExperimentConfig& c, bool with_hidden_labels) {
  for (std::uint64_t seed : c.seeds) {
    const TaskBundle b = make_task(c.task, seed);
    const auto dir = run_dir(c, seed) / "data";
    auto labeled = [&](const char* name, const LabeledSet& s) {
      std::ostringstream os;
      write_labeled_csv(os, s);
      write_file_atomic(dir / name, os.str());
    };
    labeled("source.csv", b.source);
    labeled("source_eval.csv", b.source_eval);
    labeled("target_eval.csv", b.target_eval);
    std::ostringstream os;
    write_unlabeled_csv(os, b.target_unlabeled, with_hidden_labels);
    write_file_atomic(dir / "target.csv", os.str());
    write_file_atomic(dir / "task.json", Json{{"task", b.descriptor.to_string()},
                                              {"seed", seed},
                                              {"target_labels_included", with_hidden_labels}}
                                                 .dump(2) +
                                             "\n");
    spdlog::info("seed {}: wrote {}", seed, dir.string());
  }
}

}  // namespace divdis
