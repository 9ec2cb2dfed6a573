#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unit_atlas/activations.hpp"
#include "unit_atlas/model_graph.hpp"

namespace uatlas {

enum class MagnitudeMode {
  rotated,      // (a_target + a_other) / 2
  global_mean,  // mean activation over every image in the matrix
};

std::string to_string(MagnitudeMode mode);
MagnitudeMode magnitude_mode_from_string(const std::string& name);

struct UnitStats {
  UnitId unit;
  double a_target = 0.0;
  double a_other = 0.0;
  double selectivity = 0.0;
  double magnitude = 0.0;

  friend bool operator==(const UnitStats&, const UnitStats&) = default;
};

// All classes except the target, or a seeded subsample of `subsample` of them
// (ascending) when 0 < subsample < n_classes - 1.
std::vector<std::size_t> comparison_classes(std::size_t n_classes, std::size_t target, std::size_t subsample,
                                            std::uint64_t seed);

// a_target is the mean over target rows; a_other the unweighted mean of the
// per-class means of `comparison`; selectivity = a_target - a_other.
std::vector<UnitStats> unit_stats(const ActivationMatrix& acts, std::size_t target,
                                  const std::vector<std::size_t>& comparison,
                                  MagnitudeMode mode = MagnitudeMode::rotated);

struct CellCoord {
  std::size_t strip = 0;  // ascending selectivity
  std::size_t band = 0;   // ascending magnitude within the strip

  friend bool operator==(const CellCoord&, const CellCoord&) = default;
};

struct LayerGrid {
  std::string layer;
  std::vector<UnitStats> units;        // ascending unit index
  std::vector<CellCoord> assignment;   // parallel to units
  std::vector<std::vector<std::size_t>> cells;  // [strip * bands + band] -> unit indices, ascending

  const std::vector<std::size_t>& cell(std::size_t strip, std::size_t band, std::size_t bands) const {
    return cells[strip * bands + band];
  }
};

struct SkippedLayer {
  std::string layer;
  std::string reason;
};

struct GridAtlas {
  std::size_t target = 0;
  std::size_t strips = 4;
  std::size_t bands = 4;
  MagnitudeMode magnitude_mode = MagnitudeMode::rotated;
  std::vector<std::size_t> comparison;
  std::vector<LayerGrid> layers;
  std::vector<SkippedLayer> skipped;

  const LayerGrid& layer(const std::string& id) const;
};

// Sorts units by (selectivity, index) into `strips` contiguous near-equal
// strips, the first n % strips taking one extra unit; each strip is then cut
// the same way by (magnitude, index) into `bands`. Throws ValidationError
// when the layer has fewer units than cells.
LayerGrid partition_layer(std::string layer, std::vector<UnitStats> units, std::size_t strips, std::size_t bands);

// Partitions every layer present in `stats` (grouped in order of first
// appearance). Layers with fewer units than cells are skipped and recorded.
GridAtlas partition_grid(const std::vector<UnitStats>& stats, std::size_t strips, std::size_t bands);

struct AtlasOptions {
  std::size_t strips = 4;
  std::size_t bands = 4;
  MagnitudeMode magnitude_mode = MagnitudeMode::rotated;
  std::size_t comparison_subsample = 0;
  std::uint64_t seed = 0;
};

// Stats and grid for one target class.
GridAtlas build_atlas(const ActivationMatrix& acts, std::size_t target, const AtlasOptions& options);

void save_atlases(const std::vector<GridAtlas>& atlases, const std::vector<std::string>& class_names,
                  const std::filesystem::path& path);
std::vector<GridAtlas> load_atlases(const std::filesystem::path& path);

}  // namespace uatlas
