#pragma once

// Stateless layer operations. Every reduction accumulates in double in a
// fixed index order, so results do not depend on how callers schedule work.

#include <span>
#include <string_view>
#include <vector>

#include "unit_atlas/tensor.hpp"

namespace uatlas::ops {

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Cross-correlation of a [in, y, x] input with a [out, in, ky, kx] kernel,
// zero padded. Output spatial size is floor((n + 2p - k) / stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::span<const float> bias,
              Conv2dParams params, std::string_view layer_id = {});

// out[i] = sum_j W[i, j] * x[j] + b[i]; W is [m, n].
Tensor dense(const Tensor& input, const Tensor& weights, std::span<const float> bias,
             std::string_view layer_id = {});

Tensor relu(const Tensor& input);

Tensor maxpool2d(const Tensor& input, std::size_t window, std::size_t stride,
                 std::string_view layer_id = {});

struct BatchNormParams {
  std::span<const float> gamma;
  std::span<const float> beta;
  std::span<const float> mean;
  std::span<const float> var;
  float epsilon = 1e-5f;
};

// Inference-mode batch norm over axis 0 of a [ch, ...] tensor.
Tensor batchnorm_infer(const Tensor& input, const BatchNormParams& params,
                       std::string_view layer_id = {});

Tensor residual_add(const Tensor& a, const Tensor& b, std::string_view layer_id = {});

Tensor flatten(const Tensor& input);

// Max-subtracted softmax; sums are taken in double.
std::vector<float> softmax(std::span<const float> logits);
Tensor softmax(const Tensor& logits);

// Zero whole channels of a [ch, ...] tensor (or single elements of a vector).
// Throws ValidationError when an index is out of range.
Tensor zero_units(const Tensor& activation, std::span<const std::size_t> units,
                  std::string_view layer_id = {});

}  // namespace uatlas::ops
