#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "test_util.hpp"
#include "unit_atlas/dataset.hpp"
#include "unit_atlas/errors.hpp"
#include "unit_atlas/probe.hpp"
#include "unit_atlas/rank.hpp"

using namespace uatlas;
using namespace testutil;

namespace {

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = i;
  return r;
}

ProbeModel zero_probe(std::size_t classes, std::size_t features) {
  ProbeModel p;
  p.n_classes = classes;
  p.n_features = features;
  p.weights.assign(classes * features, 0.0);
  p.bias.assign(classes, 0.0);
  p.feature_mean.assign(features, 0.0);
  p.feature_scale.assign(features, 1.0);
  return p;
}

}  // namespace

TEST_CASE("class rank") {
  const std::vector<float> p{0.1f, 0.7f, 0.2f};
  CHECK(class_rank(p, 1) == 1);
  CHECK(class_rank(p, 0) == 3);
  CHECK(class_rank(p, 2) == 2);
  const std::vector<float> tie{0.4f, 0.4f, 0.2f};
  CHECK(class_rank(tie, 1) == 2);
  CHECK(class_rank(tie, 0) == 1);
  CHECK_THROWS_AS(class_rank(p, 3), ValidationError);

  std::mt19937 gen(4);
  for (int trial = 0; trial < 200; ++trial) {
    auto z = random_vector(gen, 6, -3.0f, 3.0f);
    z[trial % 6] = z[(trial + 1) % 6];  // plant ties
    const std::size_t c = static_cast<std::size_t>(trial) % 6;
    const std::size_t r = class_rank(z, c);
    CHECK(r >= 1);
    CHECK(r <= 6);
    auto shifted = z;
    for (float& v : shifted) v += 2.0f;
    CHECK(class_rank(shifted, c) == r);
    // All ranks over classes form a permutation.
    std::vector<int> used(7, 0);
    for (std::size_t k = 0; k < 6; ++k) used[class_rank(z, k)]++;
    for (int i = 1; i <= 6; ++i) CHECK(used[i] == 1);
  }
  CHECK(argmax_lowest(std::vector<float>{1, 3, 3}) == 1);
  CHECK(argmax_lowest(std::vector<double>{0, 0, 0}) == 0);
}

TEST_CASE("probe gradient matches finite differences") {
  const auto rep = gradcheck::probe(40, 6, 4, 1e-2, 50, 3);
  CHECK(rep.checked == 50);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("perfect indicator feature is fully decodable") {
  const std::size_t n = 160, classes = 4, target = 2;
  std::vector<std::size_t> labels(n);
  std::mt19937 gen(1);
  FeatureMatrix x{n, 3, std::vector<double>(n * 3)};
  std::normal_distribution<double> nd;
  for (std::size_t r = 0; r < n; ++r) {
    labels[r] = r % classes;
    x.values[r * 3 + 0] = nd(gen);
    x.values[r * 3 + 1] = labels[r] == target ? 1.0 : 0.0;
    x.values[r * 3 + 2] = nd(gen);
  }
  std::vector<std::uint16_t> l16(labels.begin(), labels.end());
  const Split split = stratified_split(l16, classes, 0.8, 5, "probe-split");
  const ProbeModel p = fit_linear_probe(x, labels, split.train, classes, ProbeConfig{}, 5, "cell");
  CHECK(evaluate_probe(p, x, labels, split.eval, target) == 1.0);
  CHECK(evaluate_probe(p, x, labels, split.train, target) == 1.0);
  CHECK(p.n_train == split.train.size());
  CHECK(p.iterations == 500);
  for (double w : p.weights) CHECK(std::isfinite(w));
}

TEST_CASE("shuffled labels decode at chance") {
  const std::size_t classes = 8, per = 100, n = classes * per;
  double total = 0;
  for (unsigned seed = 0; seed < 20; ++seed) {
    std::mt19937 gen(seed);
    std::normal_distribution<double> nd;
    std::vector<std::size_t> labels(n);
    for (std::size_t r = 0; r < n; ++r) labels[r] = r % classes;
    std::shuffle(labels.begin(), labels.end(), gen);
    FeatureMatrix x{n, 5, std::vector<double>(n * 5)};
    for (double& v : x.values) v = nd(gen);
    std::vector<std::uint16_t> l16(labels.begin(), labels.end());
    const Split split = stratified_split(l16, classes, 0.8, seed, "probe-split");
    const ProbeModel p = fit_linear_probe(x, labels, split.train, classes, ProbeConfig{}, seed);
    total += evaluate_probe(p, x, labels, split.eval, seed % classes);
  }
  const double mean = total / 20.0;
  CHECK(mean > 0.125 - 0.1);
  CHECK(mean < 0.125 + 0.1);
}

TEST_CASE("evaluate_probe tie and trivial cases") {
  FeatureMatrix x{6, 1, {0, 1, 2, 3, 4, 5}};
  const std::vector<std::size_t> labels{0, 1, 2, 0, 1, 2};
  const auto rows = iota_rows(6);
  ProbeModel z = zero_probe(3, 1);
  CHECK(evaluate_probe(z, x, labels, rows, 0) == 1.0);
  CHECK(evaluate_probe(z, x, labels, rows, 1) == 0.0);
  CHECK(evaluate_probe(z, x, labels, rows, 2) == 0.0);
  ProbeModel always2 = zero_probe(3, 1);
  always2.bias[2] = 5.0;
  CHECK(evaluate_probe(always2, x, labels, rows, 2) == 1.0);
  const std::vector<std::size_t> no_target{0, 1, 3, 4};
  CHECK_THROWS_AS(evaluate_probe(z, x, labels, no_target, 2), ValidationError);
}

TEST_CASE("constant columns are dropped; all-constant probes are degenerate") {
  const std::size_t n = 40;
  std::vector<std::size_t> labels(n);
  FeatureMatrix x{n, 2, std::vector<double>(n * 2)};
  for (std::size_t r = 0; r < n; ++r) {
    labels[r] = r % 2;
    x.values[r * 2] = 3.0;
    x.values[r * 2 + 1] = labels[r] ? 1.0 : -1.0;
  }
  const auto rows = iota_rows(n);
  const ProbeModel p = fit_linear_probe(x, labels, rows, 2, ProbeConfig{});
  CHECK(p.dropped == std::vector<std::size_t>{0});
  CHECK(!p.degenerate);
  CHECK(p.weights[0] == 0.0);
  CHECK(p.weights[2] == 0.0);
  CHECK(evaluate_probe(p, x, labels, rows, 1) == 1.0);

  FeatureMatrix flat{n, 1, std::vector<double>(n, 2.0)};
  const ProbeModel d = fit_linear_probe(flat, labels, rows, 2, ProbeConfig{});
  CHECK(d.degenerate);
  CHECK(std::isfinite(d.final_loss));

  const std::vector<std::size_t> one_class(n, 1);
  CHECK_THROWS_AS(fit_linear_probe(x, one_class, rows, 2, ProbeConfig{}), ValidationError);
  CHECK_THROWS_AS(fit_linear_probe(FeatureMatrix{n, 0, {}}, labels, rows, 2, ProbeConfig{}), ValidationError);
}

TEST_CASE("probe descent is monotone at the default rate and falls back when not") {
  std::mt19937 gen(2);
  std::normal_distribution<double> nd;
  const std::size_t n = 120, classes = 3, f = 4;
  FeatureMatrix x{n, f, std::vector<double>(n * f)};
  std::vector<std::size_t> labels(n);
  for (std::size_t r = 0; r < n; ++r) {
    labels[r] = r % classes;
    for (std::size_t j = 0; j < f; ++j) x.values[r * f + j] = nd(gen) + (j == labels[r] ? 1.5 : 0.0);
  }
  // Standardize so this matches what the fit sees.
  for (std::size_t j = 0; j < f; ++j) {
    double m = 0, s = 0;
    for (std::size_t r = 0; r < n; ++r) m += x.at(r, j);
    m /= n;
    for (std::size_t r = 0; r < n; ++r) s += (x.at(r, j) - m) * (x.at(r, j) - m);
    s = std::sqrt(s / n);
    for (std::size_t r = 0; r < n; ++r) x.values[r * f + j] = (x.at(r, j) - m) / s;
  }
  const auto rows = iota_rows(n);
  std::vector<double> w(classes * f, 0.0), b(classes, 0.0);
  double prev = INFINITY;
  for (int it = 0; it < 500; ++it) {
    const auto lg = probe_loss_and_gradient(w, b, x, labels, rows, classes, 1e-3);
    CHECK(lg.loss <= prev);
    prev = lg.loss;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= 0.1 * lg.grad_weights[i];
    for (std::size_t i = 0; i < b.size(); ++i) b[i] -= 0.1 * lg.grad_bias[i];
  }
  const double final_loss = probe_loss_and_gradient(w, b, x, labels, rows, classes, 1e-3).loss;
  CHECK(final_loss <= prev);
  const ProbeModel p = fit_linear_probe(x, labels, rows, classes, ProbeConfig{});
  CHECK(p.lr_fallbacks == 0);
  CHECK(p.final_loss == doctest::Approx(final_loss).epsilon(1e-6));

  ProbeConfig hot;
  hot.learning_rate = 200.0;
  const ProbeModel q = fit_linear_probe(x, labels, rows, classes, hot);
  CHECK(q.lr_fallbacks >= 1);
  CHECK(q.learning_rate < 200.0);

  // Same inputs, same probe.
  const ProbeModel again = fit_linear_probe(x, labels, rows, classes, ProbeConfig{});
  CHECK(again.weights == p.weights);
}
