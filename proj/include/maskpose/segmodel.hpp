#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "maskpose/frame.hpp"
#include "maskpose/nn/module.hpp"

namespace maskpose {

struct SegConfig {
  /// Background plus object classes; class index equals object id.
  int num_classes = 4;
  /// Encoder width per stage; the number of entries is the number of 2× downsamplings.
  std::vector<int> widths{16, 32, 64};
  nn::OptimizerConfig optimizer{"sgd", 0.05};
  int batch_size = 4;
  int epochs = 30;
  /// Minimum argmax pixels for a class to be reported as detected.
  int min_pixels = 20;
  /// Random horizontal flips during training.
  bool augment_flip = false;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json seg_config_to_json(const SegConfig& config);
SegConfig seg_config_from_json(const nlohmann::json& json, SegConfig defaults = {});

/// [3, H, W] tensor of color / 255.
nn::Tensor color_to_tensor(const ColorImage& color);

/// U-shaped encoder-decoder: per stage conv3×3 + SiLU + 2×2 average pooling,
/// mirrored by nearest 2× upsampling + conv3×3 + SiLU with additive skips,
/// then a 1×1 projection to class scores.
class SegNet {
 public:
  explicit SegNet(SegConfig config);

  const SegConfig& config() const { return config_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

  /// input [3, H, W] -> scores [C, H, W]. H and W must be multiples of 2^stages.
  nn::Var forward(nn::Graph& graph, const nn::Var& input) const;

  void save(const std::filesystem::path& path, nlohmann::json extra = nlohmann::json::object()) const;
  static SegNet load(const std::filesystem::path& path);

 private:
  SegConfig config_;
  nn::ParameterSet params_;
  std::vector<nn::Conv2d> encoder_;
  std::vector<nn::Conv2d> decoder_;
  nn::Conv2d head_;
};

/// Class scores [C, H, W] for a color image.
nn::Tensor seg_forward(const SegNet& net, const ColorImage& color);

/// Mean per-pixel cross-entropy. Throws InvalidArgument on a label outside [0, C).
double seg_loss(const nn::Tensor& scores, const LabelImage& labels);

struct DetectedMask {
  int object_id = 0;
  BinaryMask mask;
};

/// Argmax labeling; one mask per non-background class with at least
/// `min_pixels` pixels, sorted by id, optionally passed through median3 and dilate5.
std::vector<DetectedMask> extract_masks(const nn::Tensor& scores, int min_pixels = 20,
                                        bool apply_filters = true);

/// Per-class intersection over union accumulated over all frames, averaged
/// over the object classes present in either ground truth or predictions.
/// Returns 1 when both are empty.
double mean_iou(const std::vector<std::vector<Annotation>>& truth,
                const std::vector<std::vector<DetectedMask>>& predicted);

struct SegEpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double heldout_miou = 0.0;
};

struct SegTrainResult {
  SegNet net;
  std::vector<SegEpochLog> history;
  double initial_loss = 0.0;
};

/// Mini-batch training on per-pixel cross-entropy. Held-out mean IoU uses
/// unfiltered masks; an empty held-out set scores the training frames.
SegTrainResult seg_train(const std::vector<RgbdFrame>& train, const std::vector<RgbdFrame>& heldout,
                         const SegConfig& config,
                         const std::function<void(const SegEpochLog&)>& on_epoch = {});

/// Detections of `net` on each frame.
std::vector<std::vector<DetectedMask>> predict_masks(const SegNet& net,
                                                     const std::vector<RgbdFrame>& frames,
                                                     bool apply_filters);

}  // namespace maskpose
