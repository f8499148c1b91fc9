#include "ascnet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ascnet/errors.hpp"
#include "ascnet/parallel.hpp"
#include "ascnet/rng.hpp"
#include "json.hpp"

namespace ascnet {

using nn::Mode;
using nn::Tensor4;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (plateau_epochs < 1) throw ConfigError("plateau_epochs must be >= 1");
  if (!(lr_floor >= 0.0)) throw ConfigError("lr_floor must be >= 0");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (!(rmsprop_rho >= 0.0 && rmsprop_rho < 1.0)) throw ConfigError("rmsprop rho must be in [0, 1)");
  if (!(rmsprop_eps > 0.0)) throw ConfigError("rmsprop eps must be > 0");
  if (augment.rot_deg < 0.0 || augment.hflip_p < 0.0 || augment.hflip_p > 1.0 ||
      augment.vshift_frac < 0.0 || augment.vshift_frac >= 1.0) {
    throw ConfigError("augmentation policy out of range");
  }
  model.validate();
}

std::string TrainHistory::to_jsonl(bool with_wall_time) const {
  std::string out;
  for (const EpochRecord& e : epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["loss"] = e.loss;
    j["lr"] = e.lr;
    j["lr_halved"] = e.lr_halved;
    if (with_wall_time) j["wall_seconds"] = e.wall_seconds;
    out += j.dump();
    out += '\n';
  }
  return out;
}

TrainHistory TrainHistory::from_jsonl(const std::string& text) {
  TrainHistory h;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EpochRecord e;
      e.epoch = j.at("epoch").get<int>();
      e.loss = j.at("loss").get<double>();
      e.lr = j.at("lr").get<double>();
      e.lr_halved = j.at("lr_halved").get<bool>();
      e.wall_seconds = j.value("wall_seconds", 0.0);
      h.epochs.push_back(e);
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(std::string("bad history line: ") + ex.what());
    }
  }
  return h;
}

PlateauScheduler::PlateauScheduler(double lr, int patience, double floor)
    : lr_(lr), patience_(patience), floor_(floor) {}

bool PlateauScheduler::observe(double epoch_loss) {
  if (epoch_loss < best_) {
    best_ = epoch_loss;
    stale_ = 0;
    return false;
  }
  if (++stale_ < patience_) return false;
  stale_ = 0;
  const double next = std::max(lr_ * 0.5, floor_);
  if (next == lr_) return false;
  lr_ = next;
  return true;
}

TrainHistory run_schedule(const TrainConfig& cfg,
                          const std::function<double(int, double)>& run_epoch,
                          const EpochCallback& on_epoch) {
  PlateauScheduler sched(cfg.learning_rate, cfg.plateau_epochs, cfg.lr_floor);
  TrainHistory hist;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = sched.lr();
    rec.loss = run_epoch(epoch, rec.lr);
    rec.lr_halved = sched.observe(rec.loss);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    hist.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return hist;
}

ImageVolume to_kbq(const ImageVolume& v) {
  if (v.units == Units::kBqPerMl) return v;
  if (v.units != Units::BqPerMl) {
    throw DomainError("expected activity in Bq/mL or kBq/mL, got " + std::string(to_string(v.units)));
  }
  ImageVolume out = v;
  out.units = Units::kBqPerMl;
  for (float& x : out.data) x /= 1000.0f;
  return out;
}

std::vector<SlicePair> preprocess_pair(const ImageVolume& nc, const ImageVolume& asc, int volume_index) {
  if (!nc.same_shape(asc)) throw ShapeError("NC and ASC volumes differ in shape");
  const ImageVolume a = to_kbq(nc), b = to_kbq(asc);
  std::vector<SlicePair> out;
  for (int s = 0; s < b.slices; ++s) {
    const auto ref = b.slice(s);
    if (*std::max_element(ref.begin(), ref.end()) < 1e-6f) continue;
    out.push_back({a.slice_image(s), b.slice_image(s), volume_index, s});
  }
  return out;
}

AugmentParams draw_augment(const AugmentPolicy& policy, int height, std::uint64_t seed) {
  AugmentParams p;
  if (!policy.enabled) return p;
  SplitMix64 g(seed);
  p.angle_deg = (2.0 * uniform01(g) - 1.0) * policy.rot_deg;
  p.hflip = uniform01(g) < policy.hflip_p;
  const int bound = static_cast<int>(std::lround(policy.vshift_frac * height));
  p.vshift = static_cast<int>(std::floor(uniform01(g) * (2 * bound + 1))) - bound;
  return p;
}

namespace {

// Bilinear rotation about the image center, zero outside.
Image2D rotate(const Image2D& img, double angle_deg) {
  const int h = img.height, w = img.width;
  Image2D out(h, w);
  const double t = angle_deg * M_PI / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  const double cy = 0.5 * (h - 1), cx = 0.5 * (w - 1);
  auto px = [&](int r, int q) -> double {
    return (r < 0 || r >= h || q < 0 || q >= w) ? 0.0 : img.at(r, q);
  };
  for (int r = 0; r < h; ++r) {
    for (int q = 0; q < w; ++q) {
      const double dx = q - cx, dy = r - cy;
      const double sx = cx + c * dx + s * dy;
      const double sy = cy - s * dx + c * dy;
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      const double v = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                       fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
      out.at(r, q) = static_cast<float>(v);
    }
  }
  return out;
}

}  // namespace

Image2D apply_augment(const Image2D& img, const AugmentParams& p) {
  Image2D cur = p.angle_deg == 0.0 ? img : rotate(img, p.angle_deg);
  if (p.hflip) {
    for (int r = 0; r < cur.height; ++r) {
      float* row = cur.data.data() + static_cast<std::size_t>(r) * cur.width;
      std::reverse(row, row + cur.width);
    }
  }
  if (p.vshift != 0) {
    Image2D shifted(cur.height, cur.width);
    for (int r = 0; r < cur.height; ++r) {
      const int src = r - p.vshift;
      if (src < 0 || src >= cur.height) continue;
      std::copy_n(cur.data.begin() + static_cast<std::ptrdiff_t>(src) * cur.width, cur.width,
                  shifted.data.begin() + static_cast<std::ptrdiff_t>(r) * cur.width);
    }
    cur = std::move(shifted);
  }
  return cur;
}

SlicePair augment(const SlicePair& pair, const AugmentPolicy& policy, std::uint64_t seed) {
  if (pair.nc.height != pair.asc.height || pair.nc.width != pair.asc.width) {
    throw ShapeError("augment: input and target differ in shape");
  }
  const AugmentParams p = draw_augment(policy, pair.nc.height, seed);
  return {apply_augment(pair.nc, p), apply_augment(pair.asc, p), pair.volume, pair.slice};
}

TrainResult train(const std::vector<SlicePair>& samples, const TrainConfig& cfg,
                  const EpochCallback& on_epoch, const ModelCallback& on_model) {
  cfg.validate();
  if (samples.empty()) throw ConfigError("training set is empty");
  const int h = samples[0].nc.height, w = samples[0].nc.width;
  for (const SlicePair& s : samples) {
    if (s.nc.height != h || s.nc.width != w || s.asc.height != h || s.asc.width != w) {
      throw ShapeError("training slices differ in shape");
    }
  }
  if (h % cfg.model.spatial_divisor() || w % cfg.model.spatial_divisor()) {
    throw ShapeError("slice size must be a multiple of " + std::to_string(cfg.model.spatial_divisor()));
  }

  UNet<float> model(cfg.model, derive_seed(cfg.seed, {0x696e6974}));
  std::vector<nn::Param<float>*> params;
  for (auto* p : model.tensors()) {
    if (p->trainable) params.push_back(p);
  }
  std::vector<std::vector<float>> state;
  for (auto* p : params) state.emplace_back(p->value.size(), 0.0f);

  const int n = static_cast<int>(samples.size());
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  auto run_epoch = [&](int epoch, double lr) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 shuffle_rng(derive_seed(cfg.seed, {0x73687566, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    const nn::RmsPropConfig opt{lr, cfg.rmsprop_rho, cfg.rmsprop_eps};
    double total = 0.0;
    for (int start = 0, batch = 0; start < n; start += cfg.batch_size, ++batch) {
      const int count = std::min(cfg.batch_size, n - start);
      Tensor4<float> x(count, 1, h, w), y(count, 1, h, w);
      parallel_for(count, [&](int i) {
        const int idx = order[start + i];
        const SlicePair a = augment(samples[idx], cfg.augment,
                                    derive_seed(cfg.seed, {static_cast<std::uint64_t>(epoch),
                                                           static_cast<std::uint64_t>(idx)}));
        std::copy(a.nc.data.begin(), a.nc.data.end(), x.data.begin() + i * plane);
        std::copy(a.asc.data.begin(), a.asc.data.end(), y.data.begin() + i * plane);
      });

      model.zero_grad();
      const Tensor4<float> pred = model.forward(x, Mode::Train);
      const double loss = nn::mse_loss(pred, y);
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch));
      }
      model.backward(nn::mse_loss_grad(pred, y));
      for (std::size_t k = 0; k < params.size(); ++k) {
        if (!params[k]->grad.all_finite()) {
          throw TrainingError("non-finite gradient in " + params[k]->name + " at epoch " +
                              std::to_string(epoch) + ", batch " + std::to_string(batch));
        }
        nn::rmsprop_step<float>(params[k]->value.data, params[k]->grad.data, state[k], opt);
      }
      total += loss * count;
    }
    if (on_model) on_model(epoch, model);
    return total / n;
  };

  TrainHistory hist = run_schedule(cfg, run_epoch, on_epoch);
  return {std::move(model), std::move(hist)};
}

ImageVolume predict(UNet<float>& model, const ImageVolume& nc) {
  const ImageVolume in = to_kbq(nc);
  const int div = model.config().spatial_divisor();
  if (in.height % div || in.width % div) {
    throw ShapeError("volume size must be a multiple of " + std::to_string(div));
  }
  ImageVolume out(in.slices, in.height, in.width, in.voxel_size_mm, Units::kBqPerMl);
  const std::size_t plane = in.slice_size();
  constexpr int kChunk = 16;
  for (int s0 = 0; s0 < in.slices; s0 += kChunk) {
    const int count = std::min(kChunk, in.slices - s0);
    Tensor4<float> x(count, 1, in.height, in.width);
    std::copy_n(in.data.begin() + s0 * plane, count * plane, x.data.begin());
    const Tensor4<float> y = model.forward(x, Mode::Infer);
    std::copy(y.data.begin(), y.data.end(), out.data.begin() + s0 * plane);
  }
  return out;
}

}  // namespace ascnet
