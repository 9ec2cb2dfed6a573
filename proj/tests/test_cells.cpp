#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "toy_models.hpp"
#include "unit_atlas/activations.hpp"
#include "unit_atlas/atlas.hpp"
#include "unit_atlas/cells.hpp"
#include "unit_atlas/dataset.hpp"
#include "unit_atlas/errors.hpp"
#include "unit_atlas/forward.hpp"
#include "unit_atlas/model_io.hpp"
#include "unit_atlas/rank.hpp"

using namespace uatlas;
using namespace testutil;

namespace {

// conv1(16) -> fc1(20) -> fc2(18) -> fc3(3): three layers fill a 4x4 grid,
// the output layer does not.
ModelGraph three_layer_model(unsigned seed) {
  using uatlas::LayerKind;
  std::mt19937 gen(seed);
  auto params = random_params(gen, {{"conv1.weight", {16, 1, 3, 3}}, {"conv1.bias", {16}},
                                    {"fc1.weight", {20, 256}},        {"fc1.bias", {20}},
                                    {"fc2.weight", {18, 20}},         {"fc2.bias", {18}},
                                    {"fc3.weight", {3, 18}},          {"fc3.bias", {3}}},
                              0.6f);
  for (float& b : params.at("fc1.bias").data()) b += 0.2f;
  for (float& b : params.at("fc2.bias").data()) b += 0.2f;
  std::vector<LayerSpec> layers{conv_spec("conv1", "input", 16), unary_spec("relu1", LayerKind::relu, "conv1"),
                                pool_spec("pool1", "relu1"),     unary_spec("flat", LayerKind::flatten, "pool1"),
                                dense_spec("fc1", "flat", 20),   unary_spec("r1", LayerKind::relu, "fc1"),
                                dense_spec("fc2", "r1", 18),     unary_spec("r2", LayerKind::relu, "fc2"),
                                dense_spec("fc3", "r2", 3)};
  return ModelGraph({1, 8, 8}, layers, params);
}

Dataset small_dataset() {
  DatasetSpec spec;
  spec.n_classes = 3;
  spec.per_class = 10;
  spec.image_shape = {1, 8, 8};
  spec.seed = 5;
  return generate_dataset(spec);
}

BaselineRanks baseline_for(const ModelGraph& m, const Dataset& ds) {
  BaselineRanks b = compute_baseline(m, ds);
  b.model_checksum = "m";
  b.dataset_checksum = "d";
  return b;
}

}  // namespace

TEST_CASE("empty and zero-influence cells score exactly zero") {
  ModelGraph m = three_layer_model(1);
  const Dataset ds = small_dataset();
  const BaselineRanks base = baseline_for(m, ds);
  const auto rows = ds.rows_of_class(1);

  const CellDeficit empty = cell_rank_deficit(m, ds, "fc1", {}, rows, base);
  CHECK(empty.mean_rank_deficit == 0.0);
  CHECK(empty.warning.has_value());
  for (const auto& r : empty.records) CHECK(r.deficit == 0);

  ParamMap p = m.params();
  for (std::size_t i = 0; i < 18; ++i) {
    p.at("fc2.weight")[i * 20 + 3] = 0.0f;
    p.at("fc2.weight")[i * 20 + 7] = 0.0f;
  }
  m = m.with_params(p);
  const BaselineRanks base2 = baseline_for(m, ds);
  const CellDeficit zero = cell_rank_deficit(m, ds, "fc1", {3, 7}, rows, base2);
  CHECK(zero.mean_rank_deficit == 0.0);
  CHECK(!zero.warning);

  BaselineRanks missing = base2;
  missing.ranks.pop_back();
  CHECK_THROWS_AS(cell_rank_deficit(m, ds, "fc1", {3}, rows, missing), ValidationError);
}

TEST_CASE("cell deficits match a direct forward-and-rank oracle") {
  const ModelGraph m = three_layer_model(2);
  const Dataset ds = small_dataset();
  const BaselineRanks base = baseline_for(m, ds);
  const std::vector<std::size_t> units{0, 2, 4, 5, 9, 11};
  for (std::size_t target = 0; target < 3; ++target) {
    const auto rows = ds.rows_of_class(target);
    const CellDeficit d = cell_rank_deficit(m, ds, "conv1", units, rows, base, 2);
    AblationMask mask;
    for (auto u : units) mask.add("conv1", u);
    long sum = 0;
    REQUIRE(d.records.size() == rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto plain = output_probabilities(m, forward(m, ds.image(rows[k])).logits);
      const auto ablated = output_probabilities(m, forward(m, ds.image(rows[k]), mask).logits);
      const long deficit =
          static_cast<long>(class_rank(ablated, target)) - static_cast<long>(class_rank(plain, target));
      CHECK(d.records[k].deficit == deficit);
      CHECK(d.records[k].image_id == rows[k]);
      CHECK(d.records[k].deficit >= 1 - 3);
      CHECK(d.records[k].deficit <= 3 - 1);
      sum += deficit;
    }
    CHECK(d.mean_rank_deficit == static_cast<double>(sum) / static_cast<double>(rows.size()));
  }
}

TEST_CASE("run_all_cells: counts, isolation oracle, determinism") {
  const ModelGraph m = three_layer_model(3);
  const Dataset ds = small_dataset();
  const ActivationMatrix acts = capture_activations(m, ds);
  const BaselineRanks base = baseline_for(m, ds);
  const GridAtlas atlas = build_atlas(acts, 1, AtlasOptions{});
  REQUIRE(atlas.layers.size() == 3);
  REQUIRE(atlas.skipped.size() == 1);
  CHECK(atlas.skipped[0].layer == "fc3");

  CellRunOptions opt;
  opt.seed = 4;
  opt.probe.iterations = 100;
  const auto results = run_all_cells(m, ds, acts, atlas, base, opt);
  REQUIRE(results.size() == 48);
  const auto rows = ds.rows_of_class(1);
  for (std::size_t i = 0; i < results.size(); ++i) {
    const CellResult& r = results[i];
    CHECK(r.layer == atlas.layers[i / 16].layer);
    CHECK(r.strip == (i % 16) / 4);
    CHECK(r.band == i % 4);
    REQUIRE(r.mean_rank_deficit.has_value());
    REQUIRE(r.probe_accuracy.has_value());
    CHECK(*r.probe_accuracy >= 0.0);
    CHECK(*r.probe_accuracy <= 1.0);
    CHECK(r.n_images_ablated == rows.size());
    CHECK(r.n_images_probed == 2);  // held-out target rows: 10 - round(0.8 * 10)
    const auto& units = atlas.layers[i / 16].cell(r.strip, r.band, 4);
    CHECK(r.n_units == units.size());
    const CellDeficit alone = cell_rank_deficit(m, ds, r.layer, units, rows, base);
    CHECK(*r.mean_rank_deficit == alone.mean_rank_deficit);
  }

  opt.workers = 3;
  const auto again = run_all_cells(m, ds, acts, atlas, base, opt);
  for (std::size_t i = 0; i < results.size(); ++i) {
    CHECK(again[i].mean_rank_deficit == results[i].mean_rank_deficit);
    CHECK(again[i].probe_accuracy == results[i].probe_accuracy);
    CHECK(again[i].probe->weights == results[i].probe->weights);
  }
}

TEST_CASE("ablation leaves upstream layers untouched") {
  const ModelGraph m = three_layer_model(4);
  const Dataset ds = small_dataset();
  const ActivationMatrix plain = capture_activations(m, ds);
  const AblationMask mask = cell_mask("fc2", {1, 5, 6});
  const ActivationMatrix ablated = capture_activations(m, ds, mask);
  for (const auto& layer : {"conv1", "fc1"}) {
    const auto& cols = plain.layer(layer);
    for (std::size_t r = 0; r < plain.n_images(); ++r)
      for (std::size_t c = cols.first; c < cols.first + cols.count; ++c) CHECK(ablated.at(r, c) == plain.at(r, c));
  }
}

TEST_CASE("baseline cache is keyed by both checksums") {
  const ModelGraph m = three_layer_model(5);
  const Dataset ds = small_dataset();
  const auto dir = scratch_dir("baseline");
  BaselineRanks b = compute_baseline(m, ds);
  b.model_checksum = "abc";
  b.dataset_checksum = "def";
  save_baseline(b, dir / "baseline.json");
  const auto back = load_baseline(dir / "baseline.json", "abc", "def");
  REQUIRE(back.has_value());
  CHECK(back->ranks == b.ranks);
  CHECK(!load_baseline(dir / "baseline.json", "abc", "xyz"));
  CHECK(!load_baseline(dir / "baseline.json", "xyz", "def"));
  CHECK(!load_baseline(dir / "missing.json", "abc", "def"));
  for (auto r : b.ranks) {
    CHECK(r >= 1);
    CHECK(r <= 3);
  }
}
