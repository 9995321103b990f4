#pragma once

// Serialization of run artifacts and the atomic file writes behind them.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"

#include "divdis/disambiguate.hpp"
#include "divdis/losses.hpp"
#include "divdis/metrics.hpp"
#include "divdis/model.hpp"

namespace divdis {

using Json = nlohmann::ordered_json;

std::uint64_t fnv1a64(std::string_view bytes);
// 16 lowercase hex digits.
std::string hex64(std::uint64_t v);

// Writes to a sibling temporary file and renames it over `path`, so readers
// see either the old file or the complete new one. Creates parent dirs.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

Json to_json(const SelectionReport& r);
Json to_json(const EvalReport& r);
Json to_json(const LossBreakdown& l);

// head,group,accuracy rows, plus an "all" row per head for the average.
std::string group_table_csv(const EvalReport& r);

inline constexpr int kBoundaryGridSteps = 100;  // 101 points per axis, stride 0.02 on [-1, 1]

// x1,x2,head_0..head_{N-1}: per-head argmax over a grid on the first two
// input dimensions. Remaining dimensions are held at zero.
std::string boundary_csv(const MultiHeadClassifier& model);

}  // namespace divdis
