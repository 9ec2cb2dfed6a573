#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unit_atlas/atlas.hpp"
#include "unit_atlas/probe.hpp"

namespace uatlas {

struct RunConfig {
  std::string model;
  std::string dataset;
  std::string out;
  std::vector<std::string> target_classes;  // names or indices; empty means every class
  std::size_t strips = 4;
  std::size_t bands = 4;
  MagnitudeMode magnitude_mode = MagnitudeMode::rotated;
  std::size_t comparison_subsample = 0;  // 0 = all non-target classes
  ProbeConfig probe;
  std::uint64_t seed = 0;
  std::size_t workers = 0;  // 0 = $UNIT_ATLAS_WORKERS, else 1
  bool all_class_deficit = false;

  // Strict: unknown keys raise ConfigError naming the key.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::string& path);

  // Every setting that can influence results (worker count excluded: results
  // do not depend on it).
  nlohmann::json to_json() const;

  // Grid dims >= 1, probe settings valid, and (optionally) input paths exist.
  void validate(bool check_paths) const;
};

// Parses "SxM".
std::pair<std::size_t, std::size_t> parse_grid(const std::string& text);

}  // namespace uatlas
