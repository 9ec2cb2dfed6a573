#pragma once

#include <random>

#include "test_util.hpp"
#include "unit_atlas/model_graph.hpp"

namespace testutil {

inline uatlas::LayerSpec conv_spec(std::string id, std::string in, std::size_t units, std::size_t k = 3,
                                   std::size_t pad = 1) {
  return {.id = std::move(id), .kind = uatlas::LayerKind::conv2d, .inputs = {std::move(in)}, .units = units,
          .kernel = k, .stride = 1, .padding = pad};
}
inline uatlas::LayerSpec unary_spec(std::string id, uatlas::LayerKind kind, std::string in) {
  return {.id = std::move(id), .kind = kind, .inputs = {std::move(in)}};
}
inline uatlas::LayerSpec pool_spec(std::string id, std::string in) {
  return {.id = std::move(id), .kind = uatlas::LayerKind::maxpool2d, .inputs = {std::move(in)}, .kernel = 2,
          .stride = 2};
}
inline uatlas::LayerSpec dense_spec(std::string id, std::string in, std::size_t units) {
  return {.id = std::move(id), .kind = uatlas::LayerKind::dense, .inputs = {std::move(in)}, .units = units};
}

// [2,6,6] -> conv1(3) relu1 pool1 -> flatten -> fc1(5) relu_fc1 -> fc2(n_out)
inline std::vector<uatlas::LayerSpec> small_cnn_layers(std::size_t n_out) {
  using uatlas::LayerKind;
  return {conv_spec("conv1", "input", 3),      unary_spec("relu1", LayerKind::relu, "conv1"),
          pool_spec("pool1", "relu1"),         unary_spec("flat", LayerKind::flatten, "pool1"),
          dense_spec("fc1", "flat", 5),        unary_spec("relu_fc1", LayerKind::relu, "fc1"),
          dense_spec("fc2", "relu_fc1", n_out)};
}

inline uatlas::ParamMap random_params(std::mt19937& gen, const std::vector<std::pair<std::string, uatlas::Shape>>& spec,
                                      float scale = 0.5f) {
  uatlas::ParamMap p;
  for (const auto& [name, shape] : spec) p.emplace(name, random_tensor(gen, shape, -scale, scale));
  return p;
}

inline uatlas::ModelGraph small_cnn(std::uint64_t seed, std::size_t n_out = 3) {
  std::mt19937 gen(static_cast<unsigned>(seed));
  auto params = random_params(gen, {{"conv1.weight", {3, 2, 3, 3}},
                                    {"conv1.bias", {3}},
                                    {"fc1.weight", {5, 27}},
                                    {"fc1.bias", {5}},
                                    {"fc2.weight", {n_out, 5}},
                                    {"fc2.bias", {n_out}}});
  // Bias conv units upward so relu keeps most of them alive.
  for (float& b : params.at("conv1.bias").data()) b += 0.3f;
  for (float& b : params.at("fc1.bias").data()) b += 0.3f;
  return uatlas::ModelGraph({2, 6, 6}, small_cnn_layers(n_out), std::move(params));
}

}  // namespace testutil
