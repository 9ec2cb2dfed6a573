#include <algorithm>
#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "test_util.hpp"
#include "toy_models.hpp"
#include "unit_atlas/checksum.hpp"
#include "unit_atlas/dataset.hpp"
#include "unit_atlas/errors.hpp"
#include "unit_atlas/forward.hpp"
#include "unit_atlas/model_io.hpp"
#include "unit_atlas/rng.hpp"
#include "unit_atlas/trainer.hpp"

using namespace uatlas;
using namespace testutil;
using nlohmann::json;

TEST_CASE("sha256 known vectors") {
  CHECK(sha256_hex(std::string()) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex(std::string("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("counter rng is reproducible and stream separated") {
  const CounterRng a(7, "weights/conv1"), b(7, "weights/conv1"), c(7, "weights/conv2"), d(8, "weights/conv1");
  int same_c = 0, same_d = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    CHECK(a.bits(i) == b.bits(i));
    same_c += a.bits(i) == c.bits(i);
    same_d += a.bits(i) == d.bits(i);
    const double u = a.uniform(i);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  CHECK(same_c == 0);
  CHECK(same_d == 0);
  // Mean of many uniforms sits near 1/2.
  double s = 0;
  for (std::uint64_t i = 0; i < 100000; ++i) s += a.uniform(i);
  CHECK(std::abs(s / 100000 - 0.5) < 0.01);
}

TEST_CASE("model save/load round trip is bit-identical") {
  const auto dir = scratch_dir("model_rt");
  for (Architecture arch : {Architecture::desk, Architecture::desk_residual}) {
    const ModelGraph m = build_architecture(arch, {3, 16, 16}, 5, 4);
    save_model(m, dir / to_string(arch));
    const ModelGraph back = load_model(dir / to_string(arch));
    CHECK(back.input_shape() == m.input_shape());
    CHECK(back.layers() == m.layers());
    CHECK(back.params() == m.params());
    CHECK(weights_blob(back) == weights_blob(m));
    CHECK(model_checksum(dir / to_string(arch)) == sha256_hex(weights_blob(m)));
    CHECK(slurp(dir / to_string(arch) / "weights.bin") == weights_blob(m));
  }
  // Little-endian f32 in manifest order: first tensor is conv1.weight.
  const ModelGraph m = small_cnn(2);
  save_model(m, dir / "small");
  const std::string blob = slurp(dir / "small" / "weights.bin");
  const float first = m.param("conv1.weight")[0];
  std::uint32_t bits;
  std::memcpy(&bits, &first, 4);
  for (int i = 0; i < 4; ++i) CHECK(static_cast<std::uint8_t>(blob[i]) == ((bits >> (8 * i)) & 0xff));
}

TEST_CASE("corrupted model directories raise distinct errors") {
  const auto dir = scratch_dir("model_bad");
  const ModelGraph m = small_cnn(5);
  auto fresh = [&](const std::string& name) {
    save_model(m, dir / name);
    return dir / name;
  };

  {
    const auto d = fresh("trunc");
    std::string blob = slurp(d / "weights.bin");
    blob.pop_back();
    spit(d / "weights.bin", blob);
    CHECK_THROWS_AS(load_model(d), TruncationError);
  }
  {
    const auto d = fresh("dims");
    json man = json::parse(slurp(d / "manifest.json"));
    for (auto& t : man["tensors"])
      if (t["name"] == "fc2.bias") t["dims"] = json::array({4});
    spit(d / "manifest.json", man.dump());
    CHECK_THROWS_AS(load_model(d), SizeMismatchError);
  }
  {
    const auto d = fresh("version");
    json man = json::parse(slurp(d / "manifest.json"));
    man["format_version"] = kModelFormatVersion + 1;
    spit(d / "manifest.json", man.dump());
    CHECK_THROWS_AS(load_model(d), VersionError);
  }
  {
    const auto d = fresh("flip");
    std::string blob = slurp(d / "weights.bin");
    blob[10] = static_cast<char>(blob[10] ^ 0x40);
    spit(d / "weights.bin", blob);
    CHECK_THROWS_AS(load_model(d), ChecksumError);
  }
  {
    const auto d = fresh("longer");
    spit(d / "weights.bin", slurp(d / "weights.bin") + std::string(4, '\0'));
    CHECK_THROWS_AS(load_model(d), SizeMismatchError);
  }
  {
    const auto d = fresh("dangling");
    json man = json::parse(slurp(d / "manifest.json"));
    man["layers"][4]["inputs"] = json::array({"missing"});
    spit(d / "manifest.json", man.dump());
    CHECK_THROWS_AS(load_model(d), ModelValidationError);
  }
}

TEST_CASE("dataset generation") {
  DatasetSpec spec;
  spec.n_classes = 4;
  spec.per_class = 5;
  spec.image_shape = {3, 12, 12};
  spec.seed = 3;
  const Dataset a = generate_dataset(spec, 1);
  const Dataset b = generate_dataset(spec, 3);
  CHECK(a == b);
  CHECK(a.size() == 20);
  CHECK(a.class_counts() == std::vector<std::size_t>(4, 5));
  spec.seed = 4;
  CHECK(generate_dataset(spec).pixels != a.pixels);

  const auto dir = scratch_dir("dataset");
  save_dataset(a, dir / "ds");
  const Dataset back = load_dataset(dir / "ds");
  CHECK(back == a);
  CHECK(dataset_checksum(back) ==
        sha256_hex(slurp(dir / "ds" / "images.bin") + slurp(dir / "ds" / "labels.bin")));

  spec.noise = 0.0;
  spec.per_class = 2;
  const Dataset z = generate_dataset(spec);
  const std::size_t n = z.image_bytes();
  for (std::size_t c = 0; c < 4; ++c) {
    const auto rows = z.rows_of_class(c);
    REQUIRE(rows.size() == 2);
    CHECK(std::equal(z.pixels.begin() + rows[0] * n, z.pixels.begin() + (rows[0] + 1) * n,
                     z.pixels.begin() + rows[1] * n));
  }
  // Classes differ from each other even without noise.
  CHECK(!std::equal(z.pixels.begin(), z.pixels.begin() + n, z.pixels.begin() + 2 * n));

  DatasetSpec small = spec;
  small.image_shape = {1, 7, 12};
  CHECK_THROWS_AS(generate_dataset(small), ValidationError);
  DatasetSpec one_class = spec;
  one_class.n_classes = 1;
  CHECK_THROWS_AS(generate_dataset(one_class), ValidationError);
  DatasetSpec one_image = spec;
  one_image.per_class = 1;
  CHECK_THROWS_AS(generate_dataset(one_image), ValidationError);

  CHECK(a.class_index("class_2") == 2);
  CHECK(a.class_index("3") == 3);
  CHECK_THROWS(a.class_index("9"));
  CHECK_THROWS(a.class_index("nope"));
}

TEST_CASE("stratified split") {
  std::vector<std::uint16_t> labels;
  for (std::uint16_t c = 0; c < 5; ++c)
    for (int i = 0; i < 10 + c; ++i) labels.push_back(c);
  const Split s = stratified_split(labels, 5, 0.8, 9, "train-split");
  CHECK(std::is_sorted(s.train.begin(), s.train.end()));
  CHECK(std::is_sorted(s.eval.begin(), s.eval.end()));
  CHECK(s.train.size() + s.eval.size() == labels.size());
  std::vector<int> seen(labels.size(), 0);
  for (auto r : s.train) seen[r]++;
  for (auto r : s.eval) seen[r]++;
  for (int v : seen) CHECK(v == 1);
  for (std::uint16_t c = 0; c < 5; ++c) {
    std::size_t n_train = 0;
    for (auto r : s.train) n_train += labels[r] == c;
    CHECK(n_train == static_cast<std::size_t>(std::lround(0.8 * (10 + c))));
  }
  const Split again = stratified_split(labels, 5, 0.8, 9, "train-split");
  CHECK(again.train == s.train);
  CHECK(stratified_split(labels, 5, 0.8, 10, "train-split").train != s.train);
  // Extreme fractions still leave one row on each side.
  const Split tiny = stratified_split(labels, 5, 0.01, 1, "x");
  CHECK(tiny.train.size() == 5);
}

TEST_CASE("weight init stays within the fan-scaled bound") {
  const ModelGraph m = build_architecture(Architecture::desk, {3, 16, 16}, 4, 1);
  auto check = [&](const std::string& name, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    double max_abs = 0;
    for (float v : m.param(name).data()) max_abs = std::max(max_abs, std::abs(static_cast<double>(v)));
    CHECK(max_abs <= limit);
    CHECK(max_abs > 0.9 * limit);
  };
  check("conv1.weight", 3 * 9, 16 * 9);
  check("conv2.weight", 16 * 9, 32 * 9);
  check("fc1.weight", 32 * 4 * 4, 64);
  for (float v : m.param("fc1.bias").data()) CHECK(v == 0.0f);
  CHECK(build_architecture(Architecture::desk, {3, 16, 16}, 4, 1).params() == m.params());
  CHECK(build_architecture(Architecture::desk, {3, 16, 16}, 4, 2).params() != m.params());
}
