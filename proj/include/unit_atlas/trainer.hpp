#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unit_atlas/dataset.hpp"
#include "unit_atlas/model_graph.hpp"

namespace uatlas {

enum class Architecture {
  // conv(16,3x3)-relu-pool, conv(32,3x3)-relu-pool, flatten, dense(64)-relu, dense(C)
  desk,
  // desk with a batchnorm after conv2 and a residual conv block before flatten
  desk_residual,
};

std::string to_string(Architecture arch);
Architecture architecture_from_string(const std::string& name);

// Builds the architecture with fan-in/fan-out scaled uniform weights, each
// tensor drawn from its own named counter stream; zero biases; identity
// batchnorm.
ModelGraph build_architecture(Architecture arch, const Shape& input_shape, std::size_t n_classes,
                              std::uint64_t seed);

// Uniform(+-sqrt(6 / (fan_in + fan_out))) initialisation of every weight
// tensor in `params`; biases zeroed.
void init_params(const std::vector<LayerSpec>& layers, ParamMap& params, std::uint64_t seed);

struct TrainConfig {
  double learning_rate = 0.02;
  std::size_t epochs = 12;
  std::size_t batch_size = 16;
  double l2 = 1e-4;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  double train_fraction = 0.8;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> eval_accuracy;
};

struct TrainResult {
  ModelGraph model;
  std::vector<EpochLog> log;
  std::optional<double> final_eval_accuracy;
  Split split;
};

// Gradients of trainable tensors only (weight, bias, gamma, beta).
struct LossGradient {
  double loss = 0.0;
  std::map<std::string, std::vector<double>> grads;
};

// Mean softmax cross-entropy over the given examples plus (l2 / 2) * sum of
// squared conv/dense weights, with its analytic gradient. A trailing softmax
// layer is fused into the loss.
LossGradient loss_and_gradient(const ModelGraph& model, const ParamMap& params, std::span<const Tensor> images,
                               std::span<const std::size_t> labels, double l2);

// Minibatch SGD with momentum on a stratified train split. Batchnorm running
// statistics are calibrated once on the initial network and frozen; gamma and
// beta train. Throws DivergenceError if the loss stops being finite.
TrainResult train_model(const ModelGraph& initial, const Dataset& dataset, const TrainConfig& config);
TrainResult train_model(Architecture arch, const Dataset& dataset, const TrainConfig& config);

// Argmax accuracy (ties to the lowest class) over the given rows.
double classification_accuracy(const ModelGraph& model, const Dataset& dataset, std::span<const std::size_t> rows);

}  // namespace uatlas
