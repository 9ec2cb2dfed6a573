#include "unit_atlas/atlas.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>

#include "unit_atlas/errors.hpp"
#include "unit_atlas/rng.hpp"

namespace uatlas {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(MagnitudeMode mode) {
  return mode == MagnitudeMode::rotated ? "rotated" : "global_mean";
}

MagnitudeMode magnitude_mode_from_string(const std::string& name) {
  if (name == "rotated") return MagnitudeMode::rotated;
  if (name == "global_mean") return MagnitudeMode::global_mean;
  throw ValidationError("unknown magnitude mode '" + name + "' (expected rotated or global_mean)");
}

std::vector<std::size_t> comparison_classes(std::size_t n_classes, std::size_t target, std::size_t subsample,
                                            std::uint64_t seed) {
  if (target >= n_classes) throw ValidationError("target class " + std::to_string(target) + " out of range");
  std::vector<std::size_t> others;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (c != target) others.push_back(c);
  }
  if (subsample == 0 || subsample >= others.size()) return others;
  RngStream rng(CounterRng(seed, "comparison/" + std::to_string(target)));
  shuffle(others.begin(), others.end(), rng);
  others.resize(subsample);
  std::sort(others.begin(), others.end());
  return others;
}

std::vector<UnitStats> unit_stats(const ActivationMatrix& acts, std::size_t target,
                                  const std::vector<std::size_t>& comparison, MagnitudeMode mode) {
  if (comparison.empty()) throw ValidationError("comparison classes must be non-empty");
  if (std::find(comparison.begin(), comparison.end(), target) != comparison.end()) {
    throw ValidationError("comparison classes must exclude the target class");
  }
  std::map<std::size_t, std::vector<std::size_t>> rows_by_class;
  for (std::size_t r = 0; r < acts.n_images(); ++r) rows_by_class[acts.rows[r].label].push_back(r);
  auto rows_of = [&](std::size_t c) -> const std::vector<std::size_t>& {
    auto it = rows_by_class.find(c);
    if (it == rows_by_class.end() || it->second.empty()) {
      throw ValidationError("class " + std::to_string(c) + " has no images in the activation matrix");
    }
    return it->second;
  };
  const auto& target_rows = rows_of(target);
  for (auto c : comparison) rows_of(c);

  auto column_mean = [&](const std::vector<std::size_t>& rows, std::size_t col) {
    double sum = 0.0;
    for (auto r : rows) sum += acts.at(r, col);
    return sum / static_cast<double>(rows.size());
  };

  std::vector<UnitStats> stats(acts.n_units());
  for (std::size_t col = 0; col < acts.n_units(); ++col) {
    UnitStats& s = stats[col];
    s.unit = acts.columns[col];
    s.a_target = column_mean(target_rows, col);
    double other = 0.0;
    for (auto c : comparison) other += column_mean(rows_of(c), col);
    s.a_other = other / static_cast<double>(comparison.size());
    s.selectivity = s.a_target - s.a_other;
    if (mode == MagnitudeMode::rotated) {
      s.magnitude = (s.a_target + s.a_other) / 2.0;
    } else {
      double sum = 0.0;
      for (std::size_t r = 0; r < acts.n_images(); ++r) sum += acts.at(r, col);
      s.magnitude = sum / static_cast<double>(acts.n_images());
    }
  }
  return stats;
}

namespace {

// Sizes of `parts` contiguous near-equal pieces of n; the first n % parts get
// one extra.
std::vector<std::size_t> cut_sizes(std::size_t n, std::size_t parts) {
  std::vector<std::size_t> sizes(parts, n / parts);
  for (std::size_t i = 0; i < n % parts; ++i) ++sizes[i];
  return sizes;
}

}  // namespace

LayerGrid partition_layer(std::string layer, std::vector<UnitStats> units, std::size_t strips, std::size_t bands) {
  if (strips == 0 || bands == 0) throw ValidationError("grid dimensions must be >= 1");
  if (units.size() < strips * bands) {
    throw ValidationError("layer '" + layer + "' has " + std::to_string(units.size()) + " units, fewer than " +
                          std::to_string(strips * bands) + " cells");
  }
  std::sort(units.begin(), units.end(), [](const UnitStats& a, const UnitStats& b) { return a.unit.index < b.unit.index; });
  for (std::size_t i = 1; i < units.size(); ++i) {
    if (units[i].unit.index == units[i - 1].unit.index) {
      throw ValidationError("layer '" + layer + "' lists unit " + std::to_string(units[i].unit.index) + " twice");
    }
  }

  LayerGrid grid;
  grid.layer = std::move(layer);
  grid.assignment.resize(units.size());
  grid.cells.resize(strips * bands);

  std::vector<std::size_t> order(units.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (units[a].selectivity != units[b].selectivity) return units[a].selectivity < units[b].selectivity;
    return units[a].unit.index < units[b].unit.index;
  });

  std::size_t start = 0;
  const auto strip_sizes = cut_sizes(units.size(), strips);
  for (std::size_t s = 0; s < strips; ++s) {
    std::vector<std::size_t> strip(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(start + strip_sizes[s]));
    start += strip_sizes[s];
    std::sort(strip.begin(), strip.end(), [&](std::size_t a, std::size_t b) {
      if (units[a].magnitude != units[b].magnitude) return units[a].magnitude < units[b].magnitude;
      return units[a].unit.index < units[b].unit.index;
    });
    std::size_t inner = 0;
    const auto band_sizes = cut_sizes(strip.size(), bands);
    for (std::size_t b = 0; b < bands; ++b) {
      for (std::size_t k = 0; k < band_sizes[b]; ++k, ++inner) {
        grid.assignment[strip[inner]] = {s, b};
        grid.cells[s * bands + b].push_back(strip[inner]);
      }
    }
  }
  for (auto& cell : grid.cells) {
    for (auto& member : cell) member = units[member].unit.index;
    std::sort(cell.begin(), cell.end());
  }
  grid.units = std::move(units);
  return grid;
}

GridAtlas partition_grid(const std::vector<UnitStats>& stats, std::size_t strips, std::size_t bands) {
  if (strips == 0 || bands == 0) throw ValidationError("grid dimensions must be >= 1");
  GridAtlas atlas;
  atlas.strips = strips;
  atlas.bands = bands;
  std::vector<std::string> order;
  std::map<std::string, std::vector<UnitStats>> by_layer;
  for (const auto& s : stats) {
    auto [it, inserted] = by_layer.try_emplace(s.unit.layer);
    if (inserted) order.push_back(s.unit.layer);
    it->second.push_back(s);
  }
  for (const auto& layer : order) {
    auto& units = by_layer.at(layer);
    if (units.size() < strips * bands) {
      atlas.skipped.push_back({layer, std::to_string(units.size()) + " units < " + std::to_string(strips * bands) +
                                          " cells"});
      continue;
    }
    atlas.layers.push_back(partition_layer(layer, std::move(units), strips, bands));
  }
  return atlas;
}

const LayerGrid& GridAtlas::layer(const std::string& id) const {
  for (const auto& l : layers) {
    if (l.layer == id) return l;
  }
  throw ValidationError("atlas has no layer '" + id + "'");
}

GridAtlas build_atlas(const ActivationMatrix& acts, std::size_t target, const AtlasOptions& options) {
  const auto comparison = comparison_classes(acts.class_names.size(), target, options.comparison_subsample, options.seed);
  GridAtlas atlas = partition_grid(unit_stats(acts, target, comparison, options.magnitude_mode), options.strips,
                                   options.bands);
  atlas.target = target;
  atlas.magnitude_mode = options.magnitude_mode;
  atlas.comparison = comparison;
  return atlas;
}

void save_atlases(const std::vector<GridAtlas>& atlases, const std::vector<std::string>& class_names,
                  const fs::path& path) {
  json root;
  root["grid"] = {{"strips", atlases.empty() ? 0 : atlases.front().strips},
                  {"bands", atlases.empty() ? 0 : atlases.front().bands}};
  root["atlases"] = json::array();
  for (const auto& atlas : atlases) {
    json a;
    a["target_class"] = atlas.target;
    a["target_name"] = atlas.target < class_names.size() ? class_names[atlas.target] : std::to_string(atlas.target);
    a["strips"] = atlas.strips;
    a["bands"] = atlas.bands;
    a["magnitude_mode"] = to_string(atlas.magnitude_mode);
    a["comparison_classes"] = atlas.comparison;
    a["skipped_layers"] = json::array();
    for (const auto& s : atlas.skipped) a["skipped_layers"].push_back({{"layer", s.layer}, {"reason", s.reason}});
    a["layers"] = json::array();
    a["units"] = json::array();
    for (const auto& grid : atlas.layers) {
      a["layers"].push_back(grid.layer);
      for (std::size_t i = 0; i < grid.units.size(); ++i) {
        const auto& u = grid.units[i];
        a["units"].push_back({{"layer", u.unit.layer},
                              {"index", u.unit.index},
                              {"a_target", u.a_target},
                              {"a_other", u.a_other},
                              {"selectivity", u.selectivity},
                              {"magnitude", u.magnitude},
                              {"strip", grid.assignment[i].strip},
                              {"band", grid.assignment[i].band}});
      }
    }
    root["atlases"].push_back(std::move(a));
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << root.dump(2) << "\n";
}

std::vector<GridAtlas> load_atlases(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<GridAtlas> atlases;
  try {
    const json root = json::parse(in);
    for (const auto& a : root.at("atlases")) {
      GridAtlas atlas;
      atlas.target = a.at("target_class").get<std::size_t>();
      atlas.strips = a.at("strips").get<std::size_t>();
      atlas.bands = a.at("bands").get<std::size_t>();
      atlas.magnitude_mode = magnitude_mode_from_string(a.at("magnitude_mode").get<std::string>());
      atlas.comparison = a.at("comparison_classes").get<std::vector<std::size_t>>();
      for (const auto& s : a.at("skipped_layers")) {
        atlas.skipped.push_back({s.at("layer").get<std::string>(), s.at("reason").get<std::string>()});
      }
      std::map<std::string, LayerGrid> grids;
      for (const auto& id : a.at("layers")) grids[id.get<std::string>()].layer = id.get<std::string>();
      for (const auto& u : a.at("units")) {
        const std::string layer = u.at("layer").get<std::string>();
        auto it = grids.find(layer);
        if (it == grids.end()) throw ValidationError("atlas unit refers to unlisted layer '" + layer + "'");
        UnitStats s{{layer, u.at("index").get<std::size_t>()},
                    u.at("a_target").get<double>(),
                    u.at("a_other").get<double>(),
                    u.at("selectivity").get<double>(),
                    u.at("magnitude").get<double>()};
        const CellCoord cell{u.at("strip").get<std::size_t>(), u.at("band").get<std::size_t>()};
        if (cell.strip >= atlas.strips || cell.band >= atlas.bands) throw ValidationError("atlas cell out of range");
        it->second.units.push_back(s);
        it->second.assignment.push_back(cell);
      }
      for (const auto& id : a.at("layers")) {
        LayerGrid grid = std::move(grids.at(id.get<std::string>()));
        grid.cells.assign(atlas.strips * atlas.bands, {});
        for (std::size_t i = 0; i < grid.units.size(); ++i) {
          grid.cells[grid.assignment[i].strip * atlas.bands + grid.assignment[i].band].push_back(grid.units[i].unit.index);
        }
        for (auto& cell : grid.cells) std::sort(cell.begin(), cell.end());
        atlas.layers.push_back(std::move(grid));
      }
      atlases.push_back(std::move(atlas));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed atlas file: " + std::string(e.what()));
  }
  return atlases;
}

}  // namespace uatlas
