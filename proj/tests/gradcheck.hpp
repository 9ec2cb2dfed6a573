#pragma once

// Central finite differences (h = 1e-3, double) against the analytic
// gradients of the trainer and the probe.

#include <random>

#include "oracles.hpp"
#include "unit_atlas/probe.hpp"
#include "unit_atlas/trainer.hpp"

namespace gradcheck {

struct Report {
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  double max_rel_error = 0.0;
};

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3});
}

// Samples trainable coordinates until `want` of them have a piecewise-linear
// pattern that stays fixed under +-h.
inline Report trainer(const uatlas::ModelGraph& model, const std::vector<uatlas::Tensor>& images,
                      const std::vector<std::size_t>& labels, double l2, std::size_t want, unsigned seed) {
  constexpr double h = 1e-3;
  const auto lg = uatlas::loss_and_gradient(model, model.params(), images, labels, l2);
  oracle::DParams p = oracle::to_double(model.params());
  std::vector<std::string> names;
  for (const auto& [name, g] : lg.grads) names.push_back(name);
  std::mt19937 gen(seed);
  Report r;
  std::vector<int> base, plus, minus;
  oracle::loss(model, p, images, labels, l2, &base);
  for (std::size_t attempt = 0; r.checked < want && attempt < want * 20; ++attempt) {
    const std::string& name = names[gen() % names.size()];
    auto& w = p.at(name);
    const std::size_t i = gen() % w.size();
    const double orig = w[i];
    w[i] = orig + h;
    const double lp = oracle::loss(model, p, images, labels, l2, &plus);
    w[i] = orig - h;
    const double lm = oracle::loss(model, p, images, labels, l2, &minus);
    w[i] = orig;
    if (plus != base || minus != base) {
      ++r.skipped_kinks;
      continue;
    }
    const double numeric = (lp - lm) / (2 * h);
    r.max_rel_error = std::max(r.max_rel_error, rel_error(lg.grads.at(name)[i], numeric));
    ++r.checked;
  }
  return r;
}

inline Report probe(std::size_t rows, std::size_t features, std::size_t classes, double l2, std::size_t want,
                    unsigned seed) {
  constexpr double h = 1e-3;
  std::mt19937 gen(seed);
  std::normal_distribution<double> nd;
  uatlas::FeatureMatrix x{rows, features, std::vector<double>(rows * features)};
  for (double& v : x.values) v = nd(gen);
  std::vector<std::size_t> y(rows), all(rows);
  for (std::size_t r = 0; r < rows; ++r) y[r] = gen() % classes, all[r] = r;
  std::vector<double> w(classes * features), b(classes);
  for (double& v : w) v = nd(gen) * 0.5;
  for (double& v : b) v = nd(gen) * 0.5;
  const auto lg = uatlas::probe_loss_and_gradient(w, b, x, y, all, classes, l2);
  std::vector<std::vector<double>> xr(rows, std::vector<double>(features));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t f = 0; f < features; ++f) xr[r][f] = x.at(r, f);
  Report rep;
  for (std::size_t k = 0; k < want; ++k) {
    const bool on_bias = gen() % 4 == 0;
    auto& vec = on_bias ? b : w;
    const std::size_t i = gen() % vec.size();
    const double orig = vec[i];
    vec[i] = orig + h;
    const double lp = oracle::probe_loss(w, b, xr, y, l2);
    vec[i] = orig - h;
    const double lm = oracle::probe_loss(w, b, xr, y, l2);
    vec[i] = orig;
    const double analytic = on_bias ? lg.grad_bias[i] : lg.grad_weights[i];
    rep.max_rel_error = std::max(rep.max_rel_error, rel_error(analytic, (lp - lm) / (2 * h)));
    ++rep.checked;
  }
  return rep;
}

}  // namespace gradcheck
