#include "ascnet/unet.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "ascnet/errors.hpp"
#include "ascnet/rng.hpp"
#include "json.hpp"

namespace ascnet {

using nn::Mode;
using nn::Tensor4;

std::string_view to_string(FinalActivation a) {
  return a == FinalActivation::ReLU ? "relu" : "linear";
}

FinalActivation final_activation_from_string(std::string_view s) {
  if (s == "relu") return FinalActivation::ReLU;
  if (s == "linear") return FinalActivation::Linear;
  throw ConfigError("unknown final activation '" + std::string(s) + "'");
}

void UNetConfig::validate() const {
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (stages < 1 || stages > 8) throw ConfigError("stages must lie in [1, 8]");
  if (in_channels < 1 || out_channels < 1) throw ConfigError("channel counts must be >= 1");
}

std::size_t expected_parameter_count(const UNetConfig& cfg) {
  auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k + out; };
  std::size_t total = 0;
  for (int k = 0; k < cfg.stages; ++k) {
    const std::size_t in = k == 0 ? cfg.in_channels : cfg.width(k - 1);
    const std::size_t w = cfg.width(k);
    total += conv(in, w, 3) + conv(w, w, 3) + 4 * w;
  }
  for (int j = 0; j + 1 < cfg.stages; ++j) {
    const std::size_t w = cfg.width(j);
    total += conv(cfg.width(j + 1) + w, w, 3) + conv(w, w, 3) + 4 * w;
  }
  total += conv(cfg.width(0), cfg.out_channels, 1);
  return total;
}

template <typename T>
typename UNet<T>::Block UNet<T>::make_block(const std::string& name, int in, int out) {
  return Block{nn::Conv2d<T>(name + ".conv1", in, out, 3), nn::BatchNorm<T>(name + ".bn1", out), {},
               nn::Conv2d<T>(name + ".conv2", out, out, 3), nn::BatchNorm<T>(name + ".bn2", out), {}};
}

template <typename T>
UNet<T>::UNet(const UNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  for (int k = 0; k < cfg_.stages; ++k) {
    const int in = k == 0 ? cfg_.in_channels : cfg_.width(k - 1);
    enc_.push_back(make_block("enc" + std::to_string(k + 1), in, cfg_.width(k)));
  }
  for (int j = 0; j + 1 < cfg_.stages; ++j) {
    dec_.push_back(make_block("dec" + std::to_string(j + 1), cfg_.width(j + 1) + cfg_.width(j),
                              cfg_.width(j)));
  }
  pools_.resize(cfg_.stages - 1);
  ups_.resize(cfg_.stages - 1);
  head_ = nn::Conv2d<T>("head", cfg_.width(0), cfg_.out_channels, 1);

  // Conv weights ~ truncated normal(0, 0.02); biases stay zero.
  std::uint64_t layer = 0;
  for (nn::Param<T>* p : tensors()) {
    if (p->name.ends_with(".weight")) {
      p->value = nn::init_truncated_normal<T>(p->value.shape(), derive_seed(seed, {layer}));
    }
    ++layer;
  }
}

template <typename T>
std::vector<nn::Param<T>*> UNet<T>::tensors() {
  std::vector<nn::Param<T>*> out;
  auto add_block = [&](Block& b) {
    for (auto* p : {&b.conv1.weight, &b.conv1.bias, &b.bn1.gamma, &b.bn1.beta, &b.bn1.running_mean,
                    &b.bn1.running_var, &b.conv2.weight, &b.conv2.bias, &b.bn2.gamma, &b.bn2.beta,
                    &b.bn2.running_mean, &b.bn2.running_var}) {
      out.push_back(p);
    }
  };
  for (auto& b : enc_) add_block(b);
  // Decoder in execution order: deepest level first.
  for (int j = static_cast<int>(dec_.size()) - 1; j >= 0; --j) add_block(dec_[j]);
  out.push_back(&head_.weight);
  out.push_back(&head_.bias);
  return out;
}

template <typename T>
std::vector<const nn::Param<T>*> UNet<T>::tensors() const {
  auto mut = const_cast<UNet<T>*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

template <typename T>
std::size_t UNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : tensors()) {
    if (p->trainable) n += p->value.size();
  }
  return n;
}

template <typename T>
void UNet<T>::zero_grad() {
  for (auto* p : tensors()) {
    if (p->trainable) std::fill(p->grad.data.begin(), p->grad.data.end(), T(0));
  }
}

template <typename T>
std::vector<std::uint32_t> UNet<T>::activation_pattern() const {
  std::vector<std::uint32_t> out;
  auto add_relu = [&](const nn::ReLU<T>& r) {
    if (!r.saved_input()) throw ContractError("activation_pattern needs a train-mode forward");
    for (T v : r.saved_input()->data) out.push_back(v > T(0));
  };
  for (const auto* blocks : {&enc_, &dec_}) {
    for (const Block& b : *blocks) {
      add_relu(b.relu1);
      add_relu(b.relu2);
    }
  }
  if (cfg_.final_activation == FinalActivation::ReLU) add_relu(head_act_);
  for (const auto& p : pools_) {
    if (!p.argmax()) throw ContractError("activation_pattern needs a train-mode forward");
    out.insert(out.end(), p.argmax()->begin(), p.argmax()->end());
  }
  return out;
}

template <typename T>
Tensor4<T> UNet<T>::forward(const Tensor4<T>& x, Mode mode) {
  const int div = cfg_.spatial_divisor();
  if (x.c != cfg_.in_channels) {
    throw ShapeError("model expects " + std::to_string(cfg_.in_channels) + " input channels, got " +
                     x.shape().str());
  }
  if (x.h % div != 0 || x.w % div != 0 || x.h == 0 || x.w == 0) {
    throw ShapeError("input " + x.shape().str() + " must have H and W divisible by " +
                     std::to_string(div));
  }
  const int levels = cfg_.stages;
  skips_.assign(levels - 1, {});
  if (record_taps_) {
    taps_skip_.assign(levels, {});
    taps_act_.assign(levels, {});
    taps_concat_.assign(levels - 1, {});
  }

  Tensor4<T> h = x;
  for (int k = 0; k < levels; ++k) {
    if (k > 0) h = pools_[k - 1].forward(h, mode);
    Block& b = enc_[k];
    h = b.relu1.forward(b.bn1.forward(b.conv1.forward(h, mode), mode), mode);
    Tensor4<T> raw = b.conv2.forward(h, mode);
    h = b.relu2.forward(b.bn2.forward(raw, mode), mode);
    if (record_taps_) {
      taps_skip_[k] = raw;
      taps_act_[k] = h;
    }
    if (k + 1 < levels) skips_[k] = std::move(raw);
  }
  for (int j = levels - 2; j >= 0; --j) {
    Tensor4<T> cat = nn::concat_channels(ups_[j].forward(h, mode), skips_[j]);
    if (record_taps_) taps_concat_[j] = cat;
    Block& b = dec_[j];
    h = b.relu1.forward(b.bn1.forward(b.conv1.forward(cat, mode), mode), mode);
    h = b.relu2.forward(b.bn2.forward(b.conv2.forward(h, mode), mode), mode);
  }
  if (mode == Mode::Infer) skips_.clear();
  Tensor4<T> out = head_.forward(h, mode);
  if (cfg_.final_activation == FinalActivation::ReLU) out = head_act_.forward(out, mode);
  return out;
}

template <typename T>
Tensor4<T> UNet<T>::backward(const Tensor4<T>& grad_out) {
  const int levels = cfg_.stages;
  Tensor4<T> g = grad_out;
  if (cfg_.final_activation == FinalActivation::ReLU) g = head_act_.backward(g);
  g = head_.backward(g);

  std::vector<Tensor4<T>> grad_skip(levels - 1);
  for (int j = 0; j + 1 < levels; ++j) {
    Block& b = dec_[j];
    g = b.conv2.backward(b.bn2.backward(b.relu2.backward(g)));
    g = b.conv1.backward(b.bn1.backward(b.relu1.backward(g)));
    const int up_channels = cfg_.width(j + 1);
    auto [g_up, g_skip] = nn::split_channels(g, up_channels);
    grad_skip[j] = std::move(g_skip);
    g = ups_[j].backward(g_up);
  }
  for (int k = levels - 1; k >= 0; --k) {
    Block& b = enc_[k];
    Tensor4<T> g_raw = b.bn2.backward(b.relu2.backward(g));
    if (k + 1 < levels) {
      const Tensor4<T>& gs = grad_skip[k];
      for (std::size_t i = 0; i < g_raw.size(); ++i) g_raw.data[i] += gs.data[i];
    }
    g = b.conv2.backward(g_raw);
    g = b.conv1.backward(b.bn1.backward(b.relu1.backward(g)));
    if (k > 0) g = pools_[k - 1].backward(g);
  }
  skips_.clear();
  return g;
}

template class UNet<float>;
template class UNet<double>;

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint is truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::string config_json(const UNetConfig& cfg) {
  nlohmann::json j;
  j["base_channels"] = cfg.base_channels;
  j["stages"] = cfg.stages;
  j["in_channels"] = cfg.in_channels;
  j["out_channels"] = cfg.out_channels;
  j["final_activation"] = std::string(to_string(cfg.final_activation));
  return j.dump();
}

UNetConfig config_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    UNetConfig cfg;
    cfg.base_channels = j.at("base_channels").get<int>();
    cfg.stages = j.at("stages").get<int>();
    cfg.in_channels = j.at("in_channels").get<int>();
    cfg.out_channels = j.at("out_channels").get<int>();
    cfg.final_activation = final_activation_from_string(j.at("final_activation").get<std::string>());
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config is invalid: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config is invalid: ") + e.what());
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const UNet<float>& model) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  const std::string cfg = config_json(model.config());
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out.insert(out.end(), cfg.begin(), cfg.end());
  for (const auto* p : model.tensors()) {
    put_u32(out, static_cast<std::uint32_t>(p->value.size()));
    for (float v : p->value.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

UNet<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  if (in.text(4) != std::string(kCheckpointMagic, 4)) throw FormatError("checkpoint magic mismatch");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t len = in.u32();
  const UNetConfig cfg = config_from_json(in.text(len));
  UNet<float> model(cfg, 0);
  for (auto* p : model.tensors()) {
    const std::uint32_t count = in.u32();
    if (count != p->value.size()) {
      throw FormatError("checkpoint tensor " + p->name + " has " + std::to_string(count) +
                        " elements, config implies " + std::to_string(p->value.size()));
    }
    for (float& v : p->value.data) v = std::bit_cast<float>(in.u32());
  }
  if (!in.done()) throw FormatError("checkpoint has trailing bytes");
  return model;
}

void save_checkpoint(const UNet<float>& model, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

UNet<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace ascnet
