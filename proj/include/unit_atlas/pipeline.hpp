#pragma once

#include <filesystem>
#include <string>

#include "unit_atlas/run_config.hpp"

namespace uatlas {

// Pipeline stages. Each reads its inputs from the config paths and from
// files earlier stages left in `out`, so any stage can be rerun alone.
void stage_capture(const RunConfig& config);   // activations.bin, units.json, images.json
void stage_atlas(const RunConfig& config);     // atlas.json
void stage_ablate(const RunConfig& config);    // baseline.json; deficits into results.json
void stage_probe(const RunConfig& config);     // probe accuracies into results.json
void stage_report(const RunConfig& config);    // report.csv, svg/

// capture -> atlas -> ablate -> probe -> report. MANIFEST.json in `out`
// records each completed stage with output checksums; on failure it names
// the failed stage and the error is rethrown.
std::filesystem::path pipeline_run(const RunConfig& config);

}  // namespace uatlas
