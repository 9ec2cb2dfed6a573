#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "unit_atlas/activations.hpp"

namespace uatlas {

struct ProbeConfig {
  double learning_rate = 0.1;
  std::size_t iterations = 500;
  double l2 = 1e-3;
  double train_fraction = 0.8;

  void validate() const;
};

// Dense row-major feature block, 64-bit.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

// Columns of `units` (indices within `layer`) for every row of the matrix.
FeatureMatrix cell_features(const ActivationMatrix& acts, const std::string& layer,
                            const std::vector<std::size_t>& units);

// Multinomial logistic regression on standardized features.
struct ProbeModel {
  std::string cell_id;
  std::size_t n_classes = 0;
  std::size_t n_features = 0;          // cell size, including dropped columns
  std::vector<double> weights;         // [n_classes x n_features]; zero on dropped columns
  std::vector<double> bias;            // [n_classes]
  std::vector<double> feature_mean;    // train-split statistics
  std::vector<double> feature_scale;
  std::vector<std::size_t> dropped;    // zero-variance columns on the train split
  bool degenerate = false;             // every column dropped: bias-only probe
  std::size_t iterations = 0;
  double final_loss = 0.0;
  double learning_rate = 0.0;          // after any non-monotone fallback
  std::size_t lr_fallbacks = 0;
  std::uint64_t seed = 0;
  std::size_t n_train = 0;
};

struct ProbeLossGradient {
  double loss = 0.0;
  std::vector<double> grad_weights;
  std::vector<double> grad_bias;
};

// Mean cross-entropy + (l2 / 2) * |W|^2 over `rows` of an already
// standardized feature matrix, with its analytic gradient.
ProbeLossGradient probe_loss_and_gradient(std::span<const double> weights, std::span<const double> bias,
                                          const FeatureMatrix& x, std::span<const std::size_t> labels,
                                          std::span<const std::size_t> rows, std::size_t n_classes, double l2);

// Full-batch gradient descent from zero weights for a fixed iteration budget.
// If the loss ever rises, training restarts at a tenth of the rate (up to
// three times); the rate used is recorded.
ProbeModel fit_linear_probe(const FeatureMatrix& features, std::span<const std::size_t> labels,
                            std::span<const std::size_t> train_rows, std::size_t n_classes, const ProbeConfig& config,
                            std::uint64_t seed = 0, std::string cell_id = {});

// Logits for one raw (unstandardized) feature row.
std::vector<double> probe_logits(const ProbeModel& probe, std::span<const double> raw_features);
std::size_t probe_predict(const ProbeModel& probe, std::span<const double> raw_features);

// Fraction of target-class rows among `eval_rows` predicted as the target.
// Throws ValidationError when no such row exists.
double evaluate_probe(const ProbeModel& probe, const FeatureMatrix& features, std::span<const std::size_t> labels,
                      std::span<const std::size_t> eval_rows, std::size_t target);

}  // namespace uatlas
