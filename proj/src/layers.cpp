#include "unit_atlas/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "unit_atlas/errors.hpp"

namespace uatlas::ops {

namespace {

std::string id_of(std::string_view id) { return std::string(id); }

void require_rank(const Tensor& t, std::size_t rank, std::string_view layer_id, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(id_of(layer_id), std::string(what) + " expects rank " + std::to_string(rank) +
                                              " input, got " + shape_to_string(t.shape()));
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::span<const float> bias,
              Conv2dParams params, std::string_view layer_id) {
  require_rank(input, 3, layer_id, "conv2d");
  if (kernel.rank() != 4) {
    throw DimensionError(id_of(layer_id), "conv2d kernel must be [out,in,ky,kx], got " +
                                              shape_to_string(kernel.shape()));
  }
  const std::size_t in_ch = input.dim(0), in_y = input.dim(1), in_x = input.dim(2);
  const std::size_t out_ch = kernel.dim(0), ky = kernel.dim(2), kx = kernel.dim(3);
  if (kernel.dim(1) != in_ch) {
    throw DimensionError(id_of(layer_id), "conv2d kernel expects " + std::to_string(kernel.dim(1)) +
                                              " input channels, got " + std::to_string(in_ch));
  }
  if (bias.size() != out_ch) {
    throw DimensionError(id_of(layer_id), "conv2d bias length " + std::to_string(bias.size()) +
                                              " != out channels " + std::to_string(out_ch));
  }
  if (params.stride == 0) throw DimensionError(id_of(layer_id), "conv2d stride must be >= 1");
  const std::size_t py = in_y + 2 * params.padding, px = in_x + 2 * params.padding;
  if (ky > py || kx > px) {
    throw DimensionError(id_of(layer_id), "conv2d kernel larger than padded input");
  }
  const std::size_t out_y = (py - ky) / params.stride + 1;
  const std::size_t out_x = (px - kx) / params.stride + 1;

  Tensor out({out_ch, out_y, out_x});
  const auto in = input.data();
  const auto w = kernel.data();
  const long pad = static_cast<long>(params.padding);
  for (std::size_t oc = 0; oc < out_ch; ++oc) {
    for (std::size_t oy = 0; oy < out_y; ++oy) {
      for (std::size_t ox = 0; ox < out_x; ++ox) {
        double acc = bias[oc];
        const long y0 = static_cast<long>(oy * params.stride) - pad;
        const long x0 = static_cast<long>(ox * params.stride) - pad;
        for (std::size_t ic = 0; ic < in_ch; ++ic) {
          const float* wk = &w[((oc * in_ch + ic) * ky) * kx];
          const float* plane = &in[ic * in_y * in_x];
          for (std::size_t dy = 0; dy < ky; ++dy) {
            const long y = y0 + static_cast<long>(dy);
            if (y < 0 || y >= static_cast<long>(in_y)) continue;
            const float* row = plane + static_cast<std::size_t>(y) * in_x;
            for (std::size_t dx = 0; dx < kx; ++dx) {
              const long x = x0 + static_cast<long>(dx);
              if (x < 0 || x >= static_cast<long>(in_x)) continue;
              acc += static_cast<double>(wk[dy * kx + dx]) * row[x];
            }
          }
        }
        out.at(oc, oy, ox) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Tensor dense(const Tensor& input, const Tensor& weights, std::span<const float> bias,
             std::string_view layer_id) {
  if (weights.rank() != 2) {
    throw DimensionError(id_of(layer_id), "dense weights must be [m,n], got " +
                                              shape_to_string(weights.shape()));
  }
  const std::size_t m = weights.dim(0), n = weights.dim(1);
  if (input.size() != n) {
    throw DimensionError(id_of(layer_id), "dense expects " + std::to_string(n) + " inputs, got " +
                                              std::to_string(input.size()));
  }
  if (bias.size() != m) {
    throw DimensionError(id_of(layer_id), "dense bias length " + std::to_string(bias.size()) +
                                              " != outputs " + std::to_string(m));
  }
  Tensor out({m});
  const auto x = input.data();
  const auto w = weights.data();
  for (std::size_t i = 0; i < m; ++i) {
    double acc = bias[i];
    const float* row = &w[i * n];
    for (std::size_t j = 0; j < n; ++j) acc += static_cast<double>(row[j]) * x[j];
    out[i] = static_cast<float>(acc);
  }
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (auto& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return out;
}

Tensor maxpool2d(const Tensor& input, std::size_t window, std::size_t stride,
                 std::string_view layer_id) {
  require_rank(input, 3, layer_id, "maxpool2d");
  if (window == 0 || stride == 0) throw DimensionError(id_of(layer_id), "maxpool2d window and stride must be >= 1");
  const std::size_t ch = input.dim(0), in_y = input.dim(1), in_x = input.dim(2);
  if (window > in_y || window > in_x) {
    throw DimensionError(id_of(layer_id), "maxpool2d window " + std::to_string(window) +
                                              " larger than input " + shape_to_string(input.shape()));
  }
  const std::size_t out_y = (in_y - window) / stride + 1;
  const std::size_t out_x = (in_x - window) / stride + 1;
  Tensor out({ch, out_y, out_x});
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t oy = 0; oy < out_y; ++oy) {
      for (std::size_t ox = 0; ox < out_x; ++ox) {
        float best = -std::numeric_limits<float>::infinity();
        for (std::size_t dy = 0; dy < window; ++dy) {
          for (std::size_t dx = 0; dx < window; ++dx) {
            best = std::max(best, input.at(c, oy * stride + dy, ox * stride + dx));
          }
        }
        out.at(c, oy, ox) = best;
      }
    }
  }
  return out;
}

Tensor batchnorm_infer(const Tensor& input, const BatchNormParams& p, std::string_view layer_id) {
  const std::size_t ch = input.dim(0);
  if (p.gamma.size() != ch || p.beta.size() != ch || p.mean.size() != ch || p.var.size() != ch) {
    throw DimensionError(id_of(layer_id), "batchnorm parameter vectors must have " +
                                              std::to_string(ch) + " entries");
  }
  if (!(p.epsilon >= 0.0f)) throw ValidationError("batchnorm epsilon must be non-negative");
  for (float v : p.var) {
    if (!(v >= 0.0f)) throw ValidationError("batchnorm variance must be non-negative in layer '" + id_of(layer_id) + "'");
    if (!(static_cast<double>(v) + p.epsilon > 0.0)) {
      throw ValidationError("batchnorm variance + epsilon must be positive in layer '" + id_of(layer_id) + "'");
    }
  }
  Tensor out = input;
  const std::size_t per = input.size() / ch;
  auto data = out.data();
  for (std::size_t c = 0; c < ch; ++c) {
    const double scale = static_cast<double>(p.gamma[c]) /
                         std::sqrt(static_cast<double>(p.var[c]) + static_cast<double>(p.epsilon));
    const double shift = static_cast<double>(p.beta[c]) - scale * p.mean[c];
    for (std::size_t i = 0; i < per; ++i) {
      float& v = data[c * per + i];
      v = static_cast<float>(scale * v + shift);
    }
  }
  return out;
}

Tensor residual_add(const Tensor& a, const Tensor& b, std::string_view layer_id) {
  if (a.shape() != b.shape()) {
    throw DimensionError(id_of(layer_id), "residual_add shapes differ: " + shape_to_string(a.shape()) +
                                              " vs " + shape_to_string(b.shape()));
  }
  Tensor out = a;
  auto o = out.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  return out;
}

Tensor flatten(const Tensor& input) { return input.reshaped({input.size()}); }

std::vector<float> softmax(std::span<const float> logits) {
  std::vector<float> out(logits.size());
  if (logits.empty()) return out;
  const float top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> e(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::exp(static_cast<double>(logits[i]) - top);
    sum += e[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<float>(e[i] / sum);
  return out;
}

Tensor softmax(const Tensor& logits) {
  return Tensor(logits.shape(), softmax(logits.data()));
}

Tensor zero_units(const Tensor& activation, std::span<const std::size_t> units, std::string_view layer_id) {
  const std::size_t ch = activation.dim(0);
  for (auto u : units) {
    if (u >= ch) {
      throw ValidationError("unit " + std::to_string(u) + " out of range for layer '" + id_of(layer_id) +
                            "' with " + std::to_string(ch) + " units");
    }
  }
  Tensor out = activation;
  const std::size_t per = activation.size() / ch;
  auto data = out.data();
  for (auto u : units) std::fill_n(data.begin() + static_cast<std::ptrdiff_t>(u * per), per, 0.0f);
  return out;
}

}  // namespace uatlas::ops
