#include "divdis/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "divdis/error.hpp"
#include "divdis/format.hpp"

namespace divdis {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ostringstream suffix;
  suffix << ".tmp." << ::getpid() << '.' << std::this_thread::get_id();
  fs::path tmp = path;
  tmp += suffix.str();
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + tmp.string() + " for writing");
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    os.flush();
    if (!os) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error("write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error("cannot rename into " + path.string());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Json to_json(const SelectionReport& r) {
  Json j;
  j["strategy"] = r.strategy;
  j["m"] = r.m;
  j["queried"] = r.queried;
  j["labels"] = r.labels;
  j["head_accuracy"] = r.head_accuracy;
  j["chosen"] = r.chosen;
  j["tie_note"] = r.tie_note;
  return j;
}

namespace {

Json head_json(const HeadEval& h) {
  Json groups = Json::object();
  for (const auto& [g, acc] : h.group_accuracy) groups[std::to_string(g)] = acc;
  return Json{{"average", h.average}, {"worst_group", h.worst_group}, {"groups", groups}};
}

}  // namespace

Json to_json(const EvalReport& r) {
  Json j;
  j["heads"] = Json::array();
  for (const auto& h : r.heads) j["heads"].push_back(head_json(h));
  if (r.chosen) {
    j["chosen"] = *r.chosen;
    j["chosen_metrics"] = head_json(r.chosen_head());
  } else {
    j["chosen"] = nullptr;
  }
  j["best_head"] = r.best_head();
  j["warnings"] = r.warnings;
  return j;
}

Json to_json(const LossBreakdown& l) { return Json{{"xent", l.xent}, {"mi", l.mi}, {"reg", l.reg}}; }

std::string group_table_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "head,group,accuracy\n";
  for (std::size_t h = 0; h < r.heads.size(); ++h) {
    for (const auto& [g, acc] : r.heads[h].group_accuracy) os << h << ',' << g << ',' << Num{acc} << '\n';
    os << h << ",all," << Num{r.heads[h].average} << '\n';
  }
  return os.str();
}

std::string boundary_csv(const MultiHeadClassifier& model) {
  const std::size_t dims = model.input_dim();
  if (dims < 2) throw Error("boundary_csv: need at least two input dimensions");
  constexpr std::size_t n = kBoundaryGridSteps + 1;
  std::vector<double> grid(n * n * dims, 0.0);
  auto coord = [](std::size_t i) { return static_cast<double>(2 * static_cast<int>(i) - kBoundaryGridSteps) / kBoundaryGridSteps; };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      grid[(i * n + k) * dims] = coord(i);
      grid[(i * n + k) * dims + 1] = coord(k);
    }
  }
  const auto labels = model.predict_labels(Matrix::matrix(n * n, dims, std::move(grid)));

  std::ostringstream os;
  os << "x1,x2";
  for (std::size_t h = 0; h < labels.size(); ++h) os << ",head_" << h;
  os << '\n';
  char buf[32];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f", coord(i), coord(k));
      os << buf;
      for (const auto& l : labels) os << ',' << l[i * n + k];
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace divdis
