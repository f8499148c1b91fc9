#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ascnet/tensor.hpp"

namespace ascnet::nn {

enum class Mode { Train, Infer };

// ---------------------------------------------------------------------------
// Stateless kernels. Convolution is cross-correlation (no kernel flip).
// ---------------------------------------------------------------------------

/// weight: (C_out, C_in, k, k) with k in {1, 3}; bias: (1, C_out, 1, 1).
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>& bias);

template <typename T>
struct ConvGrads {
  Tensor4<T> input;
  Tensor4<T> weight;
  Tensor4<T> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& weight,
                             const Tensor4<T>& grad_out, bool need_input_grad = true);

struct BatchNormOptions {
  double momentum = 0.99;
  double eps = 1e-5;
};

template <typename T>
struct BatchNormCache {
  Tensor4<T> xhat;
  std::vector<T> inv_std;
};

/// Train mode: batch statistics over (N, H, W), running stats updated as
/// running = momentum * running + (1 - momentum) * batch (biased variance).
template <typename T>
Tensor4<T> batch_norm_train(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta,
                            Tensor4<T>& running_mean, Tensor4<T>& running_var,
                            const BatchNormOptions& opt, BatchNormCache<T>* cache);

template <typename T>
Tensor4<T> batch_norm_infer(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta,
                            const Tensor4<T>& running_mean, const Tensor4<T>& running_var,
                            const BatchNormOptions& opt);

template <typename T>
struct BatchNormGrads {
  Tensor4<T> input;
  Tensor4<T> gamma;
  Tensor4<T> beta;
};

template <typename T>
BatchNormGrads<T> batch_norm_backward(const BatchNormCache<T>& cache, const Tensor4<T>& gamma,
                                      const Tensor4<T>& grad_out);

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x);

/// Gradient gate uses the forward input: x > 0 passes.
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out);

/// 2x2 max pooling; `argmax` receives the flat input index of each output.
template <typename T>
Tensor4<T> maxpool2(const Tensor4<T>& x, std::vector<std::uint32_t>* argmax);

template <typename T>
Tensor4<T> maxpool2_backward(const std::vector<std::uint32_t>& argmax, Shape4 input_shape,
                             const Tensor4<T>& grad_out);

/// 2x bilinear upsampling, half-pixel centers, source clamped at borders.
template <typename T>
Tensor4<T> upsample2_bilinear(const Tensor4<T>& x);

template <typename T>
Tensor4<T> upsample2_bilinear_backward(Shape4 input_shape, const Tensor4<T>& grad_out);

template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b);

/// Splits a channel gradient back into the first `channels_a` and the rest.
template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> split_channels(const Tensor4<T>& g, int channels_a);

template <typename T>
double mse_loss(const Tensor4<T>& pred, const Tensor4<T>& target);

/// d/dpred of mse_loss: 2 (pred - target) / count.
template <typename T>
Tensor4<T> mse_loss_grad(const Tensor4<T>& pred, const Tensor4<T>& target);

/// i.i.d. normal(mean, std) resampled until inside mean +/- 2 std.
template <typename T>
Tensor4<T> init_truncated_normal(Shape4 shape, std::uint64_t seed, double mean = 0.0,
                                 double std = 0.02);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct RmsPropConfig {
  double learning_rate = 1e-3;
  double rho = 0.9;
  double eps = 1e-8;
};

/// v <- rho v + (1 - rho) g^2;  theta <- theta - lr g / (sqrt(v) + eps).
template <typename T>
void rmsprop_step(std::span<T> theta, std::span<const T> grad, std::span<T> v,
                  const RmsPropConfig& cfg);

// ---------------------------------------------------------------------------
// Stateful layers: parameters, gradients and the saved forward state needed
// by backward. backward() consumes the saved state; calling it without a
// matching train-mode forward throws ContractError.
// ---------------------------------------------------------------------------

template <typename T>
struct Param {
  std::string name;
  Tensor4<T> value;
  Tensor4<T> grad;
  bool trainable = true;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int in_channels, int out_channels, int kernel);

  Tensor4<T> forward(const Tensor4<T>& x, Mode mode);
  Tensor4<T> backward(const Tensor4<T>& grad_out, bool need_input_grad = true);

  Param<T> weight;
  Param<T> bias;

 private:
  std::optional<Tensor4<T>> saved_input_;
  Shape4 saved_out_{};
};

template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(std::string name, int channels, BatchNormOptions opt = {});

  Tensor4<T> forward(const Tensor4<T>& x, Mode mode);
  Tensor4<T> backward(const Tensor4<T>& grad_out);

  Param<T> gamma;
  Param<T> beta;
  Param<T> running_mean;  // not trainable
  Param<T> running_var;   // not trainable
  BatchNormOptions options;

 private:
  std::optional<BatchNormCache<T>> cache_;
};

template <typename T>
class ReLU {
 public:
  Tensor4<T> forward(const Tensor4<T>& x, Mode mode);
  Tensor4<T> backward(const Tensor4<T>& grad_out);
  const std::optional<Tensor4<T>>& saved_input() const { return saved_input_; }

 private:
  std::optional<Tensor4<T>> saved_input_;
};

template <typename T>
class MaxPool2 {
 public:
  Tensor4<T> forward(const Tensor4<T>& x, Mode mode);
  Tensor4<T> backward(const Tensor4<T>& grad_out);
  const std::optional<std::vector<std::uint32_t>>& argmax() const { return argmax_; }

 private:
  std::optional<std::vector<std::uint32_t>> argmax_;
  Shape4 in_shape_{};
  Shape4 out_shape_{};
};

template <typename T>
class Upsample2 {
 public:
  Tensor4<T> forward(const Tensor4<T>& x, Mode mode);
  Tensor4<T> backward(const Tensor4<T>& grad_out);

 private:
  std::optional<Shape4> in_shape_;
};

}  // namespace ascnet::nn
