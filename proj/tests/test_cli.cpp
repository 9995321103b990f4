#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "divdis/experiment.hpp"

using namespace divdis;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string output;  // stdout and stderr together
};

Result cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" + DIVDIS_CLI_PATH + "' " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) out.append(buf.data(), n);
  const int status = ::pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

struct Workspace {
  fs::path root;
  Workspace() : root(fs::temp_directory_path() / ("divdis_cli_" + std::to_string(::getpid()))) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }

  std::string config(const std::string& name, const std::string& text) const {
    const fs::path p = root / name;
    std::ofstream(p) << text;
    return p.string();
  }
};

const char* kTiny = R"({
  "task": {"name": "quadrants2d", "n_source": 64, "n_target": 64, "n_eval": 64},
  "model": {"hidden": [4], "heads": 2},
  "train": {"steps": 10, "batch_source": 8, "batch_target": 8},
  "seeds": [0]
})";

}  // namespace

TEST_CASE("run writes the documented layout and exits 0") {
  Workspace ws;
  const std::string cfg = ws.config("tiny.json", kTiny);
  const fs::path out = ws.root / "runs";
  const Result r = cli("run --config " + cfg + " --seeds 1,2 --out " + out.string() + " --jobs 2");
  CHECK_MESSAGE(r.code == 0, r.output);
  const std::string hash = config_hash(load_config(cfg));
  for (const char* seed : {"1", "2"}) {
    for (const char* f : {"curve.csv", "boundary.csv", "selection.json", "eval.json", "manifest.json"}) {
      CHECK(fs::exists(out / hash / seed / f));
    }
  }
  CHECK(!fs::exists(out / hash / "0"));  // --seeds replaces the config's list
  const Json m = Json::parse(read_file(out / hash / "1" / "manifest.json"));
  CHECK(m["seed"] == 1);
}

TEST_CASE("config problems exit 2 and are all listed") {
  Workspace ws;
  const std::string bad = ws.config("bad.json", R"({"model": {"heads": 0, "width": 3}, "train": {"steps": -1}})");
  const Result r = cli("run --config " + bad + " --out " + (ws.root / "o").string());
  CHECK(r.code == 2);
  CHECK(r.output.find("model.heads") != std::string::npos);
  CHECK(r.output.find("model.width") != std::string::npos);
  CHECK(r.output.find("train.steps") != std::string::npos);
  CHECK(!fs::exists(ws.root / "o"));

  CHECK(cli("run --config " + (ws.root / "missing.json").string()).code == 2);
  CHECK(cli("run --config " + ws.config("junk.json", "{ nope")).code == 2);
  CHECK(cli("run").code == 2);
  CHECK(cli("frobnicate").code == 2);
  const std::string tiny = ws.config("tiny.json", kTiny);
  CHECK(cli("run --config " + tiny + " --seed 1 --seeds 2,3").code == 2);
  CHECK(cli("run --config " + tiny + " --seeds 1,x").code == 2);
  CHECK(cli("generate --config " + tiny + " --jobs 2").code == 2);
  CHECK(cli("bound 2 0.1 0.5", "DIVDIS_LOG=chatty").code == 2);
}

TEST_CASE("a diverging run exits 3") {
  Workspace ws;
  const std::string cfg = ws.config("diverge.json", R"({
    "task": {"name": "quadrants2d", "n_source": 32, "n_target": 32, "n_eval": 32},
    "model": {"hidden": [], "heads": 2},
    "train": {"steps": 5, "batch_source": 8, "batch_target": 8,
              "weights": {"mi": 0, "reg": 1e12}, "prior": {"fixed": [1, 0]}}
  })");
  const Result r = cli("run --config " + cfg + " --out " + (ws.root / "o").string());
  CHECK(r.code == 3);
  CHECK(r.output.find("diverged at step 0") != std::string::npos);
}

TEST_CASE("bound prints the closed form and an optional simulation") {
  const Result r = cli("bound 2 0.1 0.5");
  CHECK(r.code == 0);
  CHECK(r.output.find("m* = 29.5110 (ceil 30)") != std::string::npos);
  const Result mc = cli("bound 3 0.05 0.4 --monte-carlo 2000 --seed 4");
  CHECK(mc.code == 0);
  CHECK(mc.output.find("monte-carlo:") != std::string::npos);
  CHECK(mc.output.find(" ok") != std::string::npos);
  CHECK(cli("bound 2 0.1 -1").code == 2);
  CHECK(cli("bound 1 0.1 0.5").code == 2);
}

TEST_CASE("generate hides target labels unless asked") {
  Workspace ws;
  const std::string cfg = ws.config("tiny.json", kTiny);
  const fs::path out = ws.root / "data";
  REQUIRE(cli("generate --config " + cfg + " --out " + out.string()).code == 0);
  const fs::path dir = out / config_hash(load_config(cfg)) / "0" / "data";
  CHECK(read_file(dir / "target.csv").rfind("x1,x2\n", 0) == 0);
  CHECK(read_file(dir / "source.csv").rfind("x1,x2,y,group\n", 0) == 0);
  REQUIRE(cli("generate --config " + cfg + " --out " + out.string() + " --with-hidden-labels").code == 0);
  CHECK(read_file(dir / "target.csv").rfind("x1,x2,y\n", 0) == 0);
}

TEST_CASE("log level controls stderr chatter") {
  Workspace ws;
  const std::string cfg = ws.config("tiny.json", kTiny);
  const std::string args = "run --config " + cfg + " --out " + (ws.root / "o").string();
  const Result quiet = cli(args, "DIVDIS_LOG=error");
  const Result chatty = cli(args, "DIVDIS_LOG=debug");
  CHECK(quiet.code == 0);
  CHECK(chatty.code == 0);
  CHECK(quiet.output.find("[info]") == std::string::npos);
  CHECK(chatty.output.find("[debug]") != std::string::npos);
}
