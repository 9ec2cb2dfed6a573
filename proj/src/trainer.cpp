#include "unit_atlas/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "unit_atlas/errors.hpp"
#include "unit_atlas/forward.hpp"
#include "unit_atlas/layers.hpp"
#include "unit_atlas/rng.hpp"

namespace uatlas {

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::desk: return "desk";
    case Architecture::desk_residual: return "desk_residual";
  }
  return "unknown";
}

Architecture architecture_from_string(const std::string& name) {
  if (name == "desk") return Architecture::desk;
  if (name == "desk_residual") return Architecture::desk_residual;
  throw ValidationError("unknown architecture '" + name + "' (expected desk or desk_residual)");
}

namespace {

LayerSpec conv(std::string id, std::string in, std::size_t units) {
  return {.id = std::move(id), .kind = LayerKind::conv2d, .inputs = {std::move(in)}, .units = units, .kernel = 3,
          .stride = 1, .padding = 1};
}
LayerSpec simple(std::string id, LayerKind kind, std::string in) {
  return {.id = std::move(id), .kind = kind, .inputs = {std::move(in)}};
}
LayerSpec pool(std::string id, std::string in) {
  return {.id = std::move(id), .kind = LayerKind::maxpool2d, .inputs = {std::move(in)}, .kernel = 2, .stride = 2};
}
LayerSpec fc(std::string id, std::string in, std::size_t units) {
  return {.id = std::move(id), .kind = LayerKind::dense, .inputs = {std::move(in)}, .units = units};
}

bool is_trainable(const std::string& role) {
  return role == "weight" || role == "bias" || role == "gamma" || role == "beta";
}

// Allocates every parameter tensor with placeholder values of the right shape.
ParamMap allocate_params(const Shape& input_shape, const std::vector<LayerSpec>& layers) {
  ParamMap params;
  std::map<std::string, Shape> shapes{{kInputId, input_shape}};
  for (const auto& layer : layers) {
    const Shape& in = shapes.at(layer.inputs.front());
    Shape out = in;
    switch (layer.kind) {
      case LayerKind::conv2d: {
        params.emplace(param_name(layer.id, "weight"), Tensor({layer.units, in[0], layer.kernel, layer.kernel}));
        params.emplace(param_name(layer.id, "bias"), Tensor({layer.units}));
        const std::size_t py = in[1] + 2 * layer.padding, px = in[2] + 2 * layer.padding;
        out = {layer.units, (py - layer.kernel) / layer.stride + 1, (px - layer.kernel) / layer.stride + 1};
        break;
      }
      case LayerKind::dense:
        params.emplace(param_name(layer.id, "weight"), Tensor({layer.units, in[0]}));
        params.emplace(param_name(layer.id, "bias"), Tensor({layer.units}));
        out = {layer.units};
        break;
      case LayerKind::maxpool2d:
        out = {in[0], (in[1] - layer.kernel) / layer.stride + 1, (in[2] - layer.kernel) / layer.stride + 1};
        break;
      case LayerKind::batchnorm:
        params.emplace(param_name(layer.id, "gamma"), Tensor({in[0]}, 1.0f));
        params.emplace(param_name(layer.id, "beta"), Tensor({in[0]}, 0.0f));
        params.emplace(param_name(layer.id, "mean"), Tensor({in[0]}, 0.0f));
        params.emplace(param_name(layer.id, "var"), Tensor({in[0]}, 1.0f));
        break;
      case LayerKind::flatten:
        out = {shape_product(in)};
        break;
      default:
        break;
    }
    shapes[layer.id] = out;
  }
  return params;
}

}  // namespace

void init_params(const std::vector<LayerSpec>& layers, ParamMap& params, std::uint64_t seed) {
  for (const auto& layer : layers) {
    if (layer.kind != LayerKind::conv2d && layer.kind != LayerKind::dense) continue;
    const std::string wname = param_name(layer.id, "weight");
    Tensor& w = params.at(wname);
    const std::size_t receptive = w.rank() == 4 ? w.dim(2) * w.dim(3) : 1;
    const double fan_in = static_cast<double>(w.dim(1) * receptive);
    const double fan_out = static_cast<double>(w.dim(0) * receptive);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    const CounterRng rng(seed, wname);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(rng.uniform(i, -limit, limit));
    for (auto& b : params.at(param_name(layer.id, "bias")).data()) b = 0.0f;
  }
}

ModelGraph build_architecture(Architecture arch, const Shape& input_shape, std::size_t n_classes,
                              std::uint64_t seed) {
  if (input_shape.size() != 3) throw ValidationError("architectures expect a [ch,y,x] input");
  if (n_classes < 2) throw ValidationError("architectures need at least 2 classes");
  std::vector<LayerSpec> layers;
  layers.push_back(conv("conv1", kInputId, 16));
  layers.push_back(simple("relu1", LayerKind::relu, "conv1"));
  layers.push_back(pool("pool1", "relu1"));
  layers.push_back(conv("conv2", "pool1", 32));
  std::string last = "conv2";
  if (arch == Architecture::desk_residual) {
    layers.push_back(simple("bn2", LayerKind::batchnorm, "conv2"));
    last = "bn2";
  }
  layers.push_back(simple("relu2", LayerKind::relu, last));
  layers.push_back(pool("pool2", "relu2"));
  last = "pool2";
  if (arch == Architecture::desk_residual) {
    layers.push_back(conv("conv3", "pool2", 32));
    layers.push_back(simple("relu3", LayerKind::relu, "conv3"));
    layers.push_back({.id = "res3", .kind = LayerKind::residual_add, .inputs = {"pool2", "relu3"}});
    last = "res3";
  }
  layers.push_back(simple("flatten", LayerKind::flatten, last));
  layers.push_back(fc("fc1", "flatten", 64));
  layers.push_back(simple("relu_fc1", LayerKind::relu, "fc1"));
  layers.push_back(fc("fc2", "relu_fc1", n_classes));

  ParamMap params = allocate_params(input_shape, layers);
  init_params(layers, params, seed);
  return ModelGraph(input_shape, std::move(layers), std::move(params));
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning rate must be >= 0");
  if (batch_size == 0) throw ValidationError("batch size must be >= 1");
  if (!(l2 >= 0.0)) throw ValidationError("l2 must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("train fraction must lie in (0, 1)");
}

namespace {

using Grad = std::vector<double>;

void conv_backward(const LayerSpec& layer, const Tensor& in, const Tensor& w, const Grad& gout, Grad* gin,
                   Grad& gw, Grad& gb) {
  const std::size_t in_ch = in.dim(0), in_y = in.dim(1), in_x = in.dim(2);
  const std::size_t out_ch = w.dim(0), k = w.dim(2);
  const std::size_t out_y = (in_y + 2 * layer.padding - k) / layer.stride + 1;
  const std::size_t out_x = (in_x + 2 * layer.padding - k) / layer.stride + 1;
  const long pad = static_cast<long>(layer.padding);
  const auto ind = in.data();
  const auto wd = w.data();
  for (std::size_t oc = 0; oc < out_ch; ++oc) {
    for (std::size_t oy = 0; oy < out_y; ++oy) {
      for (std::size_t ox = 0; ox < out_x; ++ox) {
        const double g = gout[(oc * out_y + oy) * out_x + ox];
        if (g == 0.0) continue;
        gb[oc] += g;
        const long y0 = static_cast<long>(oy * layer.stride) - pad;
        const long x0 = static_cast<long>(ox * layer.stride) - pad;
        for (std::size_t ic = 0; ic < in_ch; ++ic) {
          const std::size_t wbase = (oc * in_ch + ic) * k * k;
          for (std::size_t dy = 0; dy < k; ++dy) {
            const long y = y0 + static_cast<long>(dy);
            if (y < 0 || y >= static_cast<long>(in_y)) continue;
            const std::size_t row = (ic * in_y + static_cast<std::size_t>(y)) * in_x;
            for (std::size_t dx = 0; dx < k; ++dx) {
              const long x = x0 + static_cast<long>(dx);
              if (x < 0 || x >= static_cast<long>(in_x)) continue;
              const std::size_t src = row + static_cast<std::size_t>(x);
              const std::size_t wi = wbase + dy * k + dx;
              gw[wi] += g * ind[src];
              if (gin) (*gin)[src] += g * wd[wi];
            }
          }
        }
      }
    }
  }
}

void dense_backward(const Tensor& in, const Tensor& w, const Grad& gout, Grad* gin, Grad& gw, Grad& gb) {
  const std::size_t m = w.dim(0), n = w.dim(1);
  const auto x = in.data();
  const auto wd = w.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double g = gout[i];
    gb[i] += g;
    if (g == 0.0) continue;
    double* gwrow = &gw[i * n];
    for (std::size_t j = 0; j < n; ++j) gwrow[j] += g * x[j];
    if (gin) {
      const float* wrow = &wd[i * n];
      for (std::size_t j = 0; j < n; ++j) (*gin)[j] += g * wrow[j];
    }
  }
}

void maxpool_backward(const LayerSpec& layer, const Tensor& in, const Grad& gout, Grad& gin) {
  const std::size_t ch = in.dim(0), in_y = in.dim(1), in_x = in.dim(2);
  const std::size_t out_y = (in_y - layer.kernel) / layer.stride + 1;
  const std::size_t out_x = (in_x - layer.kernel) / layer.stride + 1;
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t oy = 0; oy < out_y; ++oy) {
      for (std::size_t ox = 0; ox < out_x; ++ox) {
        std::size_t best_at = 0;
        float best = -std::numeric_limits<float>::infinity();
        for (std::size_t dy = 0; dy < layer.kernel; ++dy) {
          for (std::size_t dx = 0; dx < layer.kernel; ++dx) {
            const std::size_t at = (c * in_y + oy * layer.stride + dy) * in_x + ox * layer.stride + dx;
            if (in[at] > best) {
              best = in[at];
              best_at = at;
            }
          }
        }
        gin[best_at] += gout[(c * out_y + oy) * out_x + ox];
      }
    }
  }
}

}  // namespace

LossGradient loss_and_gradient(const ModelGraph& model, const ParamMap& params, std::span<const Tensor> images,
                               std::span<const std::size_t> labels, double l2) {
  if (images.size() != labels.size() || images.empty()) {
    throw ValidationError("loss_and_gradient needs one label per image and at least one image");
  }
  const auto& layers = model.layers();
  std::size_t logit_layer = layers.size() - 1;
  if (model.ends_in_softmax()) {
    const auto& in = layers.back().inputs.front();
    if (in == kInputId) throw ValidationError("a softmax-only model has nothing to train");
    logit_layer = model.layer_index(in);
  }

  LossGradient out;
  for (const auto& layer : layers) {
    for (const auto& role : param_roles(layer.kind)) {
      if (is_trainable(role)) out.grads[param_name(layer.id, role)].assign(params.at(param_name(layer.id, role)).size(), 0.0);
    }
  }

  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto trace = forward_trace(model, params, images[n]);
    const Tensor& z = trace[logit_layer];
    if (labels[n] >= z.size()) throw ValidationError("label out of range for model output");
    const double top = *std::max_element(z.data().begin(), z.data().end());
    double sum = 0.0;
    for (float v : z.data()) sum += std::exp(static_cast<double>(v) - top);
    const double lse = top + std::log(sum);
    out.loss += lse - z[labels[n]];

    std::vector<Grad> g(layers.size());
    g[logit_layer].resize(z.size());
    for (std::size_t c = 0; c < z.size(); ++c) {
      g[logit_layer][c] = std::exp(static_cast<double>(z[c]) - lse) - (c == labels[n] ? 1.0 : 0.0);
    }

    auto grad_of = [&](const std::string& id) -> Grad* {
      if (id == kInputId) return nullptr;
      const std::size_t idx = model.layer_index(id);
      if (g[idx].empty()) g[idx].assign(trace[idx].size(), 0.0);
      return &g[idx];
    };
    auto input_of = [&](const std::string& id) -> const Tensor& {
      return id == kInputId ? images[n] : trace[model.layer_index(id)];
    };

    for (std::size_t li = logit_layer + 1; li-- > 0;) {
      if (g[li].empty()) continue;
      const LayerSpec& layer = layers[li];
      const Grad& gout = g[li];
      const Tensor& in = input_of(layer.inputs.front());
      switch (layer.kind) {
        case LayerKind::conv2d:
          conv_backward(layer, in, params.at(param_name(layer.id, "weight")), gout, grad_of(layer.inputs.front()),
                        out.grads.at(param_name(layer.id, "weight")), out.grads.at(param_name(layer.id, "bias")));
          break;
        case LayerKind::dense:
          dense_backward(in, params.at(param_name(layer.id, "weight")), gout, grad_of(layer.inputs.front()),
                         out.grads.at(param_name(layer.id, "weight")), out.grads.at(param_name(layer.id, "bias")));
          break;
        case LayerKind::relu:
          if (Grad* gin = grad_of(layer.inputs.front())) {
            const Tensor& y = trace[li];
            for (std::size_t i = 0; i < gout.size(); ++i) {
              if (y[i] > 0.0f) (*gin)[i] += gout[i];
            }
          }
          break;
        case LayerKind::maxpool2d:
          if (Grad* gin = grad_of(layer.inputs.front())) maxpool_backward(layer, in, gout, *gin);
          break;
        case LayerKind::batchnorm: {
          const auto gamma = params.at(param_name(layer.id, "gamma")).data();
          const auto mean = params.at(param_name(layer.id, "mean")).data();
          const auto var = params.at(param_name(layer.id, "var")).data();
          Grad& ggamma = out.grads.at(param_name(layer.id, "gamma"));
          Grad& gbeta = out.grads.at(param_name(layer.id, "beta"));
          Grad* gin = grad_of(layer.inputs.front());
          const std::size_t ch = in.dim(0), per = in.size() / ch;
          for (std::size_t c = 0; c < ch; ++c) {
            const double inv = 1.0 / std::sqrt(static_cast<double>(var[c]) + layer.epsilon);
            for (std::size_t i = 0; i < per; ++i) {
              const std::size_t at = c * per + i;
              ggamma[c] += gout[at] * (in[at] - static_cast<double>(mean[c])) * inv;
              gbeta[c] += gout[at];
              if (gin) (*gin)[at] += gout[at] * gamma[c] * inv;
            }
          }
          break;
        }
        case LayerKind::residual_add:
          for (const auto& src : layer.inputs) {
            if (Grad* gin = grad_of(src)) {
              for (std::size_t i = 0; i < gout.size(); ++i) (*gin)[i] += gout[i];
            }
          }
          break;
        case LayerKind::flatten:
          if (Grad* gin = grad_of(layer.inputs.front())) {
            for (std::size_t i = 0; i < gout.size(); ++i) (*gin)[i] += gout[i];
          }
          break;
        case LayerKind::softmax:
          if (Grad* gin = grad_of(layer.inputs.front())) {
            const Tensor& p = trace[li];
            double dot = 0.0;
            for (std::size_t i = 0; i < gout.size(); ++i) dot += gout[i] * p[i];
            for (std::size_t i = 0; i < gout.size(); ++i) (*gin)[i] += p[i] * (gout[i] - dot);
          }
          break;
      }
    }
  }

  const double inv_n = 1.0 / static_cast<double>(images.size());
  out.loss *= inv_n;
  for (auto& [name, grad] : out.grads) {
    for (auto& v : grad) v *= inv_n;
  }
  if (l2 > 0.0) {
    for (const auto& layer : layers) {
      if (layer.kind != LayerKind::conv2d && layer.kind != LayerKind::dense) continue;
      const std::string name = param_name(layer.id, "weight");
      const auto w = params.at(name).data();
      Grad& grad = out.grads.at(name);
      for (std::size_t i = 0; i < w.size(); ++i) {
        out.loss += 0.5 * l2 * static_cast<double>(w[i]) * w[i];
        grad[i] += l2 * w[i];
      }
    }
  }
  return out;
}

double classification_accuracy(const ModelGraph& model, const Dataset& dataset, std::span<const std::size_t> rows) {
  if (rows.empty()) return 0.0;
  std::size_t correct = 0;
  for (auto row : rows) {
    const auto logits = forward(model, dataset.image(row)).logits;
    const auto best = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (best == dataset.labels[row]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

namespace {

// Sets each batchnorm's running statistics to the population mean/variance of
// its input over `rows`, in layer order.
void calibrate_batchnorm(const ModelGraph& model, ParamMap& params, const Dataset& dataset,
                         const std::vector<std::size_t>& rows) {
  const auto& layers = model.layers();
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const LayerSpec& layer = layers[li];
    if (layer.kind != LayerKind::batchnorm) continue;
    const std::size_t src = model.layer_index(layer.inputs.front());
    const std::size_t ch = model.output_shape(layer.inputs.front())[0];
    std::vector<double> sum(ch, 0.0), sq(ch, 0.0);
    std::size_t count = 0;
    for (auto row : rows) {
      const auto trace = forward_trace(model, params, dataset.image(row));
      const Tensor& x = trace[src];
      const std::size_t per = x.size() / ch;
      for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t i = 0; i < per; ++i) {
          const double v = x[c * per + i];
          sum[c] += v;
          sq[c] += v * v;
        }
      }
      count += per;
    }
    Tensor& mean = params.at(param_name(layer.id, "mean"));
    Tensor& var = params.at(param_name(layer.id, "var"));
    for (std::size_t c = 0; c < ch; ++c) {
      const double m = sum[c] / static_cast<double>(count);
      mean[c] = static_cast<float>(m);
      var[c] = static_cast<float>(std::max(0.0, sq[c] / static_cast<double>(count) - m * m));
    }
  }
}

}  // namespace

TrainResult train_model(const ModelGraph& initial, const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  dataset.validate();
  if (dataset.image_shape != initial.input_shape()) {
    throw ValidationError("dataset images " + shape_to_string(dataset.image_shape) + " do not match model input " +
                          shape_to_string(initial.input_shape()));
  }
  if (initial.n_outputs() != dataset.n_classes()) {
    throw ValidationError("model has " + std::to_string(initial.n_outputs()) + " outputs but dataset has " +
                          std::to_string(dataset.n_classes()) + " classes");
  }

  Split split = stratified_split(dataset.labels, dataset.n_classes(), config.train_fraction, config.seed, "train-split");
  ParamMap params = initial.params();
  {
    std::vector<std::size_t> calib(split.train.begin(),
                                   split.train.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(64, split.train.size())));
    calibrate_batchnorm(initial, params, dataset, calib);
  }

  std::map<std::string, std::vector<double>> velocity;
  TrainResult result{initial.with_params(params), {}, std::nullopt, split};

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order = split.train;
    RngStream rng(CounterRng(config.seed, "shuffle/" + std::to_string(epoch)));
    shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<Tensor> images;
      std::vector<std::size_t> labels;
      for (std::size_t i = start; i < end; ++i) {
        images.push_back(dataset.image(order[i]));
        labels.push_back(dataset.labels[order[i]]);
      }
      const LossGradient lg = loss_and_gradient(initial, params, images, labels, config.l2);
      if (!std::isfinite(lg.loss)) throw DivergenceError(epoch, "training loss is not finite");
      epoch_loss += lg.loss * static_cast<double>(end - start);
      for (const auto& [name, grad] : lg.grads) {
        auto& v = velocity[name];
        if (v.empty()) v.assign(grad.size(), 0.0);
        auto w = params.at(name).data();
        for (std::size_t i = 0; i < grad.size(); ++i) {
          v[i] = config.momentum * v[i] - config.learning_rate * grad[i];
          w[i] = static_cast<float>(w[i] + v[i]);
        }
        for (float x : w) {
          if (!std::isfinite(x)) throw DivergenceError(epoch, "parameter '" + name + "' is not finite");
        }
      }
    }
    epoch_loss /= static_cast<double>(order.size());
    result.model = initial.with_params(params);
    EpochLog entry{epoch, epoch_loss, std::nullopt};
    if (!split.eval.empty()) entry.eval_accuracy = classification_accuracy(result.model, dataset, split.eval);
    result.log.push_back(entry);
  }
  if (!split.eval.empty()) result.final_eval_accuracy = classification_accuracy(result.model, dataset, split.eval);
  return result;
}

TrainResult train_model(Architecture arch, const Dataset& dataset, const TrainConfig& config) {
  return train_model(build_architecture(arch, dataset.image_shape, dataset.n_classes(), config.seed), dataset, config);
}

}  // namespace uatlas
