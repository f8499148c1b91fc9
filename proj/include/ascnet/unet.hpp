#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ascnet/nn.hpp"

namespace ascnet {

enum class FinalActivation { ReLU, Linear };

std::string_view to_string(FinalActivation a);
FinalActivation final_activation_from_string(std::string_view s);

struct UNetConfig {
  int base_channels = 16;
  int stages = 5;
  int in_channels = 1;
  int out_channels = 1;
  FinalActivation final_activation = FinalActivation::ReLU;

  void validate() const;
  /// Input H and W must be multiples of this (2^(stages-1)).
  int spatial_divisor() const { return 1 << (stages - 1); }
  int width(int level) const { return base_channels << level; }
};

/// Encoder-decoder with `stages` levels. Each level runs (conv3x3 -> BN ->
/// ReLU) twice. The decoder at level j upsamples, concatenates the encoder's
/// second convolution output of level j (taken before its BN and ReLU), and
/// runs two conv blocks. A 1x1 convolution plus the final activation forms
/// the output head.
template <typename T>
class UNet {
 public:
  UNet(const UNetConfig& cfg, std::uint64_t seed);

  const UNetConfig& config() const { return cfg_; }

  nn::Tensor4<T> forward(const nn::Tensor4<T>& x, nn::Mode mode);

  /// Backpropagates d(loss)/d(output), accumulates parameter gradients and
  /// returns d(loss)/d(input). Requires the preceding train-mode forward.
  nn::Tensor4<T> backward(const nn::Tensor4<T>& grad_out);

  void zero_grad();

  /// ReLU signs and max-pool winners of the last train-mode forward. Two
  /// forwards with equal patterns lie on the same smooth piece.
  std::vector<std::uint32_t> activation_pattern() const;

  /// Every tensor in graph order, including BN running statistics.
  std::vector<nn::Param<T>*> tensors();
  std::vector<const nn::Param<T>*> tensors() const;

  /// Trainable scalars (conv weights and biases, BN gamma and beta).
  std::size_t parameter_count() const;

  /// Copies every tensor into a model of another scalar type.
  template <typename U>
  UNet<U> cast() const {
    UNet<U> out(cfg_, 0);
    auto src = tensors();
    auto dst = out.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = nn::tensor_cast<U>(src[i]->value);
    return out;
  }

  /// Test hooks: when enabled, the last forward keeps each level's skip
  /// tensor and the decoder's concatenated input.
  void record_taps(bool on) { record_taps_ = on; }
  const nn::Tensor4<T>& tap_skip(int level) const { return taps_skip_.at(level); }
  const nn::Tensor4<T>& tap_encoder_activation(int level) const { return taps_act_.at(level); }
  const nn::Tensor4<T>& tap_concat(int level) const { return taps_concat_.at(level); }

 private:
  struct Block {
    nn::Conv2d<T> conv1;
    nn::BatchNorm<T> bn1;
    nn::ReLU<T> relu1;
    nn::Conv2d<T> conv2;
    nn::BatchNorm<T> bn2;
    nn::ReLU<T> relu2;
  };

  static Block make_block(const std::string& name, int in, int out);

  UNetConfig cfg_;
  std::vector<Block> enc_;
  std::vector<Block> dec_;  // dec_[j] runs at encoder level j
  std::vector<nn::MaxPool2<T>> pools_;
  std::vector<nn::Upsample2<T>> ups_;
  nn::Conv2d<T> head_;
  nn::ReLU<T> head_act_;

  std::vector<nn::Tensor4<T>> skips_;
  bool record_taps_ = false;
  std::vector<nn::Tensor4<T>> taps_skip_, taps_act_, taps_concat_;
};

/// Closed-form trainable parameter count for `cfg`.
std::size_t expected_parameter_count(const UNetConfig& cfg);

inline constexpr char kCheckpointMagic[4] = {'A', 'S', 'C', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "ASCM", u32 version, u32 length + JSON config, then every tensor in graph
/// order as u32 element count + float32 values (all little-endian).
void save_checkpoint(const UNet<float>& model, const std::filesystem::path& path);
UNet<float> load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_checkpoint(const UNet<float>& model);
UNet<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

}  // namespace ascnet
