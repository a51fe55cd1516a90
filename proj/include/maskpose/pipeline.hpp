#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maskpose/errors.hpp"
#include "maskpose/fusionmodel.hpp"
#include "maskpose/metrics.hpp"
#include "maskpose/refiner.hpp"
#include "maskpose/segmodel.hpp"

namespace maskpose {

/// Prediction and ground truth disagree on frame or object ids.
class DataMismatch : public Error {
 public:
  using Error::Error;
};

/// Wall-clock milliseconds per stage for one object. Segmentation runs once
/// per frame and its time is reported on every object of that frame; stages
/// that did not run are empty.
struct StageLatency {
  std::optional<double> segmentation_ms;
  double cropping_ms = 0.0;
  double fusion_ms = 0.0;
  std::optional<double> refinement_ms;
  double total_ms() const {
    return segmentation_ms.value_or(0.0) + cropping_ms + fusion_ms + refinement_ms.value_or(0.0);
  }
};

struct FramePrediction {
  int frame_id = 0;
  PosePrediction prediction;
  StageLatency latency;
};

struct InferenceOptions {
  /// Crop with the annotated masks instead of segmenting.
  bool use_gt_masks = false;
  bool refine = true;
  /// Base seed of the per-object pixel selection.
  std::uint64_t seed = 0;
};

/// Networks of the full pipeline. `seg` may be null with use_gt_masks and
/// `refiner` may be null when refinement is off.
struct PipelineModels {
  const SegNet* seg = nullptr;
  const PoseNet* pose = nullptr;
  const RefinerNet* refiner = nullptr;
};

/// Segmentation (or annotated masks), mask filtering, cropping, fusion and
/// optional refinement for one frame. Objects whose mask is empty after
/// filtering or has no valid depth produce no record. Records are sorted by
/// object id.
std::vector<FramePrediction> infer_frame(const PipelineModels& models, const RgbdFrame& frame,
                                         const InferenceOptions& options);

/// One JSON object per record: frame_id, object_id, quaternion (w, x, y, z),
/// translation (meters), confidence, refined and latency_ms. The latency is
/// omitted when `with_latency` is false.
nlohmann::json prediction_to_json(const FramePrediction& p, bool with_latency = true);
/// Throws ParseError naming the missing or malformed field.
FramePrediction prediction_from_json(const nlohmann::json& json);

void write_predictions(const std::filesystem::path& path, const std::vector<FramePrediction>& predictions,
                       bool with_latency = true);
/// Blank lines are ignored. Throws MissingPrerequisite for a missing file and
/// ParseError with the line number for malformed content.
std::vector<FramePrediction> read_predictions(const std::filesystem::path& path);

struct ScoredPredictions {
  /// One record per annotation, in frame then object order. Annotations
  /// without a prediction are failures.
  std::vector<PoseErrorRecord> records;
  /// Predictions of objects that are not annotated in their frame.
  int false_positives = 0;
};

/// Matches predictions to the annotations of `frames`. Throws DataMismatch
/// listing the offending ids when a prediction names a frame outside `frames`
/// or an object outside `models`, or when a (frame, object) pair repeats.
ScoredPredictions score_predictions(const std::vector<FramePrediction>& predictions,
                                    const std::vector<RgbdFrame>& frames, const ModelCatalog& models);

/// Ground-truth poses as predictions, one per annotation.
std::vector<FramePrediction> ground_truth_predictions(const std::vector<RgbdFrame>& frames);

}  // namespace maskpose
