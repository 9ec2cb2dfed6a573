#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unit_atlas/cells.hpp"

namespace uatlas {

enum class Metric { probe, deficit };

std::string to_string(Metric metric);
std::optional<double> metric_value(const CellResult& result, Metric metric);

// results.json content: run metadata plus every CellResult.
nlohmann::json results_to_json(const std::vector<CellResult>& results, const std::vector<std::string>& class_names,
                               const nlohmann::json& metadata);
std::vector<CellResult> results_from_json(const nlohmann::json& j);

struct CsvRow {
  std::string class_name;
  std::string layer;
  std::size_t strip = 0;
  std::size_t band = 0;
  std::string metric;
  std::optional<double> value;

  friend bool operator==(const CsvRow&, const CsvRow&) = default;
};

// CSV with header class,layer,strip,band,metric,value; values printed with
// 17 significant digits so they re-parse exactly, missing values as "null".
std::string report_csv(const std::vector<CellResult>& results, const std::vector<std::string>& class_names,
                       std::size_t strips, std::size_t bands);
std::vector<CsvRow> parse_report_csv(const std::string& text);

// One heatmap. `values` is indexed [strip * bands + band]; strip S-1 is drawn
// as the top row and band M-1 as the rightmost column. Colors are normalized
// to [lo, hi].
struct GridPicture {
  std::string title;
  std::size_t strips = 4;
  std::size_t bands = 4;
  std::vector<std::optional<double>> values;
  double lo = 0.0;
  double hi = 0.0;
};

std::string render_svg(const GridPicture& picture);

struct ReportSummary {
  std::vector<std::filesystem::path> files;
  std::vector<std::string> warnings;
};

// Writes report.csv and svg/<metric>/... : one grid per (class, layer), a
// per-class average over layers and a per-layer average over classes. Color
// ranges are per class (averages over classes share their own range).
ReportSummary emit_grid_report(const std::vector<CellResult>& results, const std::vector<std::string>& class_names,
                               std::size_t strips, std::size_t bands, const std::filesystem::path& out_dir);

}  // namespace uatlas
