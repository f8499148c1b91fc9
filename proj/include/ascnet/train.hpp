#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "ascnet/nn.hpp"
#include "ascnet/unet.hpp"
#include "ascnet/volume.hpp"

namespace ascnet {

struct AugmentPolicy {
  bool enabled = true;
  double rot_deg = 10.0;
  double hflip_p = 0.5;
  double vshift_frac = 0.195;  // of image height
};

struct TrainConfig {
  int batch_size = 32;
  double learning_rate = 1e-3;
  int plateau_epochs = 10;
  double lr_floor = 1e-6;
  int max_epochs = 140;
  std::uint64_t seed = 1;
  double rmsprop_rho = 0.9;
  double rmsprop_eps = 1e-8;
  AugmentPolicy augment;
  UNetConfig model;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;          // learning rate used during this epoch
  bool lr_halved = false;   // the plateau rule fired at the end of this epoch
  double wall_seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  /// One JSON object per line. Wall time is left out when
  /// `with_wall_time` is false so deterministic runs compare byte-for-byte.
  std::string to_jsonl(bool with_wall_time = true) const;
  static TrainHistory from_jsonl(const std::string& text);
};

/// Halves the learning rate once the best epoch loss has not improved for
/// `patience` consecutive epochs, then restarts the count.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, int patience, double floor);

  double lr() const { return lr_; }
  /// Feeds one epoch loss; returns true when the rate was halved.
  bool observe(double epoch_loss);

 private:
  double lr_;
  int patience_;
  double floor_;
  double best_ = std::numeric_limits<double>::infinity();
  int stale_ = 0;
};

/// Called after every epoch (for logging).
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Epoch driver shared by real training and schedule tests: calls
/// run_epoch(epoch, lr) for epochs 1..max_epochs and applies the plateau rule.
TrainHistory run_schedule(const TrainConfig& cfg,
                          const std::function<double(int epoch, double lr)>& run_epoch,
                          const EpochCallback& on_epoch = {});

struct SlicePair {
  Image2D nc;
  Image2D asc;
  int volume = 0;
  int slice = 0;
};

/// Values in kBq/mL; Bq/mL input is divided by 1000.
ImageVolume to_kbq(const ImageVolume& v);

/// Slices of one NC/ASC pair in kBq/mL, skipping slices whose reference
/// maximum is below 1e-6 kBq/mL.
std::vector<SlicePair> preprocess_pair(const ImageVolume& nc, const ImageVolume& asc, int volume_index);

struct AugmentParams {
  double angle_deg = 0.0;
  bool hflip = false;
  int vshift = 0;  // rows, positive moves content down
};

AugmentParams draw_augment(const AugmentPolicy& policy, int height, std::uint64_t seed);
Image2D apply_augment(const Image2D& img, const AugmentParams& p);
/// Applies one draw to both images.
SlicePair augment(const SlicePair& pair, const AugmentPolicy& policy, std::uint64_t seed);

struct TrainResult {
  UNet<float> model;
  TrainHistory history;
};

/// Called after every epoch with the current weights (e.g. for snapshots).
using ModelCallback = std::function<void(int epoch, const UNet<float>& model)>;

TrainResult train(const std::vector<SlicePair>& samples, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {}, const ModelCallback& on_model = {});

/// Slice-wise infer-mode prediction; output in kBq/mL.
ImageVolume predict(UNet<float>& model, const ImageVolume& nc);

}  // namespace ascnet
