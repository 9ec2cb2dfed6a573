#include "unit_atlas/probe.hpp"

#include <limits>
#include <algorithm>
#include <cmath>

#include "unit_atlas/errors.hpp"
#include "unit_atlas/rank.hpp"

namespace uatlas {

void ProbeConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ValidationError("probe learning rate must be > 0");
  if (iterations == 0) throw ValidationError("probe needs at least one iteration");
  if (!(l2 >= 0.0)) throw ValidationError("probe l2 must be >= 0");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("probe train fraction must lie in (0, 1)");
}

FeatureMatrix cell_features(const ActivationMatrix& acts, const std::string& layer,
                            const std::vector<std::size_t>& units) {
  FeatureMatrix x;
  x.rows = acts.n_images();
  x.cols = units.size();
  x.values.resize(x.rows * x.cols);
  std::vector<std::size_t> cols;
  for (auto u : units) cols.push_back(acts.column_of({layer, u}));
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t k = 0; k < cols.size(); ++k) x.values[r * x.cols + k] = acts.at(r, cols[k]);
  }
  return x;
}

ProbeLossGradient probe_loss_and_gradient(std::span<const double> weights, std::span<const double> bias,
                                          const FeatureMatrix& x, std::span<const std::size_t> labels,
                                          std::span<const std::size_t> rows, std::size_t n_classes, double l2) {
  const std::size_t d = x.cols;
  if (weights.size() != n_classes * d || bias.size() != n_classes) {
    throw DimensionError("", "probe parameters do not match " + std::to_string(n_classes) + " classes x " +
                                 std::to_string(d) + " features");
  }
  if (rows.empty()) throw ValidationError("probe loss needs at least one row");
  ProbeLossGradient out;
  out.grad_weights.assign(weights.size(), 0.0);
  out.grad_bias.assign(n_classes, 0.0);
  std::vector<double> z(n_classes);
  for (auto r : rows) {
    const double* xr = &x.values[r * d];
    for (std::size_t c = 0; c < n_classes; ++c) {
      double acc = bias[c];
      for (std::size_t j = 0; j < d; ++j) acc += weights[c * d + j] * xr[j];
      z[c] = acc;
    }
    const double top = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - top);
    const double lse = top + std::log(sum);
    out.loss += lse - z[labels[r]];
    for (std::size_t c = 0; c < n_classes; ++c) {
      const double g = std::exp(z[c] - lse) - (c == labels[r] ? 1.0 : 0.0);
      out.grad_bias[c] += g;
      for (std::size_t j = 0; j < d; ++j) out.grad_weights[c * d + j] += g * xr[j];
    }
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  out.loss *= inv;
  for (auto& g : out.grad_bias) g *= inv;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.grad_weights[i] = out.grad_weights[i] * inv + l2 * weights[i];
    out.loss += 0.5 * l2 * weights[i] * weights[i];
  }
  return out;
}

namespace {

struct Descent {
  std::vector<double> w, b;
  double final_loss = 0.0;
  bool monotone = true;
};

Descent descend(const FeatureMatrix& x, std::span<const std::size_t> labels, std::span<const std::size_t> rows,
                std::size_t n_classes, double lr, std::size_t iterations, double l2) {
  Descent out;
  out.w.assign(n_classes * x.cols, 0.0);
  out.b.assign(n_classes, 0.0);
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < iterations; ++it) {
    const auto lg = probe_loss_and_gradient(out.w, out.b, x, labels, rows, n_classes, l2);
    if (lg.loss > previous + 1e-12 * std::max(1.0, std::abs(previous))) {
      out.monotone = false;
      return out;
    }
    previous = lg.loss;
    for (std::size_t i = 0; i < out.w.size(); ++i) out.w[i] -= lr * lg.grad_weights[i];
    for (std::size_t c = 0; c < n_classes; ++c) out.b[c] -= lr * lg.grad_bias[c];
  }
  out.final_loss = probe_loss_and_gradient(out.w, out.b, x, labels, rows, n_classes, l2).loss;
  return out;
}

}  // namespace

ProbeModel fit_linear_probe(const FeatureMatrix& features, std::span<const std::size_t> labels,
                            std::span<const std::size_t> train_rows, std::size_t n_classes, const ProbeConfig& config,
                            std::uint64_t seed, std::string cell_id) {
  config.validate();
  if (features.cols == 0) throw ValidationError("probe needs a non-empty cell");
  if (labels.size() != features.rows) throw ValidationError("probe needs one label per feature row");
  if (train_rows.empty()) throw ValidationError("probe needs training rows");
  {
    std::vector<bool> seen(n_classes, false);
    std::size_t distinct = 0;
    for (auto r : train_rows) {
      if (labels[r] >= n_classes) throw ValidationError("probe label out of range");
      if (!seen[labels[r]]) ++distinct, seen[labels[r]] = true;
    }
    if (distinct < 2) throw ValidationError("probe needs at least two classes in the training rows");
  }

  ProbeModel probe;
  probe.cell_id = std::move(cell_id);
  probe.n_classes = n_classes;
  probe.n_features = features.cols;
  probe.seed = seed;
  probe.n_train = train_rows.size();
  probe.feature_mean.assign(features.cols, 0.0);
  probe.feature_scale.assign(features.cols, 1.0);

  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j < features.cols; ++j) {
    double sum = 0.0;
    for (auto r : train_rows) sum += features.at(r, j);
    const double mean = sum / static_cast<double>(train_rows.size());
    double sq = 0.0;
    for (auto r : train_rows) sq += (features.at(r, j) - mean) * (features.at(r, j) - mean);
    const double sd = std::sqrt(sq / static_cast<double>(train_rows.size()));
    probe.feature_mean[j] = mean;
    if (sd > 0.0) {
      probe.feature_scale[j] = sd;
      kept.push_back(j);
    } else {
      probe.dropped.push_back(j);
    }
  }
  probe.degenerate = kept.empty();

  FeatureMatrix x;
  x.rows = features.rows;
  x.cols = kept.size();
  x.values.resize(x.rows * x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t k = 0; k < kept.size(); ++k) {
      const std::size_t j = kept[k];
      x.values[r * x.cols + k] = (features.at(r, j) - probe.feature_mean[j]) / probe.feature_scale[j];
    }
  }

  double lr = config.learning_rate;
  Descent fit = descend(x, labels, train_rows, n_classes, lr, config.iterations, config.l2);
  while (!fit.monotone && probe.lr_fallbacks < 3) {
    lr /= 10.0;
    ++probe.lr_fallbacks;
    fit = descend(x, labels, train_rows, n_classes, lr, config.iterations, config.l2);
  }
  if (!fit.monotone) {
    // Accept the smallest rate's result for the full budget.
    Descent forced;
    forced.w.assign(n_classes * x.cols, 0.0);
    forced.b.assign(n_classes, 0.0);
    for (std::size_t it = 0; it < config.iterations; ++it) {
      const auto lg = probe_loss_and_gradient(forced.w, forced.b, x, labels, train_rows, n_classes, config.l2);
      for (std::size_t i = 0; i < forced.w.size(); ++i) forced.w[i] -= lr * lg.grad_weights[i];
      for (std::size_t c = 0; c < n_classes; ++c) forced.b[c] -= lr * lg.grad_bias[c];
    }
    forced.final_loss = probe_loss_and_gradient(forced.w, forced.b, x, labels, train_rows, n_classes, config.l2).loss;
    fit = std::move(forced);
  }

  probe.weights.assign(n_classes * features.cols, 0.0);
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t k = 0; k < kept.size(); ++k) probe.weights[c * features.cols + kept[k]] = fit.w[c * kept.size() + k];
  }
  probe.bias = fit.b;
  probe.iterations = config.iterations;
  probe.final_loss = fit.final_loss;
  probe.learning_rate = lr;
  return probe;
}

std::vector<double> probe_logits(const ProbeModel& probe, std::span<const double> raw) {
  if (raw.size() != probe.n_features) throw DimensionError("", "probe expects " + std::to_string(probe.n_features) + " features");
  std::vector<double> z(probe.bias);
  for (std::size_t c = 0; c < probe.n_classes; ++c) {
    double acc = z[c];
    for (std::size_t j = 0; j < probe.n_features; ++j) {
      const double w = probe.weights[c * probe.n_features + j];
      if (w == 0.0) continue;
      acc += w * (raw[j] - probe.feature_mean[j]) / probe.feature_scale[j];
    }
    z[c] = acc;
  }
  return z;
}

std::size_t probe_predict(const ProbeModel& probe, std::span<const double> raw) {
  const auto z = probe_logits(probe, raw);
  return argmax_lowest(std::span<const double>(z));
}

double evaluate_probe(const ProbeModel& probe, const FeatureMatrix& features, std::span<const std::size_t> labels,
                      std::span<const std::size_t> eval_rows, std::size_t target) {
  std::size_t total = 0, hits = 0;
  for (auto r : eval_rows) {
    if (labels[r] != target) continue;
    ++total;
    const std::span<const double> row(&features.values[r * features.cols], features.cols);
    if (probe_predict(probe, row) == target) ++hits;
  }
  if (total == 0) throw ValidationError("no held-out images of target class " + std::to_string(target));
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace uatlas
