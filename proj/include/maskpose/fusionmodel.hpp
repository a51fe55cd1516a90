#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "maskpose/maskproc.hpp"
#include "maskpose/nn/module.hpp"

namespace maskpose {

/// Scale between meters and network units for point coordinates and translations.
inline constexpr double kGeometryScale = 0.1;

struct FusionConfig {
  int n_points = 500;
  int d_color = 32;
  int d_geom = 32;
  int d_mask = 32;
  int d_fused = 96;
  /// Encoder widths of the color and mask extractors, one per 2× downsampling.
  std::vector<int> extractor_widths{16, 32};
  /// Hidden widths of the rotation, translation and confidence heads.
  std::vector<int> head_widths{128, 64, 32};
  int loss_points = 500;
  double confidence_weight = 0.015;
  bool use_confidence = true;
  nn::OptimizerConfig optimizer{"sgd", 0.01};
  /// Object instances per optimizer step.
  int batch_size = 1;
  int epochs = 20;
  /// Rotate each training frame about the optical axis by a random angle.
  bool augment_roll = false;
  /// Pass ground-truth training masks through median3 and dilate5 like predicted ones.
  bool filter_training_masks = true;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json fusion_config_to_json(const FusionConfig& config);
FusionConfig fusion_config_from_json(const nlohmann::json& json, FusionConfig defaults = {});

/// Network input for one object: masked crop, chosen pixels and their
/// camera-frame points.
struct Observation {
  int object_id = 0;
  MaskedCrop crop;
  Points3 points;
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  /// Row-major crop indices of crop.chosen_pixels.
  std::vector<int> flat_indices;
};

/// Crops `frame` with `mask` as given and chooses `n_points` pixels.
/// Throws ObjectNotFound or NoValidDepth.
Observation make_observation(const RgbdFrame& frame, int object_id, const BinaryMask& mask,
                             int n_points, std::uint64_t seed);

/// Ground-truth mask as fed to the network: filtered when
/// config.filter_training_masks is set, unchanged otherwise.
BinaryMask prepare_gt_mask(const BinaryMask& mask, const FusionConfig& config);

/// Per-pixel pose hypotheses, one row per chosen pixel.
struct DensePrediction {
  Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor> raw_quaternions;
  /// Rows of raw_quaternions divided by max(norm, 1e-8), order w, x, y, z.
  Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor> quaternions;
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> translations;
  Eigen::VectorXd confidences;

  int size() const { return static_cast<int>(confidences.size()); }
};

struct PosePrediction {
  int object_id = 0;
  Pose pose;
  double confidence = 0.0;
  bool refined = false;
};

/// Graph outputs of one forward pass.
struct FusionOutputs {
  nn::Var color_map;       // [d_color, h, w]
  nn::Var mask_map;        // [d_mask, h, w]
  nn::Var color_emb;       // [d_color, N]
  nn::Var geom_emb;        // [d_geom, N]
  nn::Var mask_emb;        // [d_mask, N]
  nn::Var raw_quaternion;  // [4, N]
  nn::Var translation;     // [3, N], meters
  nn::Var confidence;      // [1, N]
};

/// Residual encoder-decoder keeping the input resolution.
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(nn::ParameterSet& params, const std::string& name, int in_channels,
                   const std::vector<int>& widths, int out_channels, std::mt19937_64& rng);
  /// [C_in, h, w] -> [out, h, w]; h and w must be multiples of 2^stages.
  nn::Var operator()(nn::Graph& g, const nn::Var& x) const;

 private:
  std::vector<nn::Conv2d> down_;
  std::vector<nn::Conv2d> res_;
  std::vector<nn::Conv2d> up_;
  nn::Conv2d out_;
};

/// Color, geometry and mask branches, dense fusion and the three heads.
class PoseNet {
 public:
  explicit PoseNet(FusionConfig config);

  const FusionConfig& config() const { return config_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

  /// crop color [3, h, w] -> [d_color, h, w]
  nn::Var extract_color_features(nn::Graph& g, const nn::Var& color) const;
  /// crop mask [1, h, w] -> [d_mask, h, w]
  nn::Var extract_mask_features(nn::Graph& g, const nn::Var& mask) const;
  /// centered, scaled points [3, N] -> [d_geom, N]
  nn::Var extract_geom_features(nn::Graph& g, const nn::Var& points) const;

  struct Heads {
    nn::Var raw_quaternion;
    nn::Var translation;  // network units, before scaling and centroid
    nn::Var confidence;
  };
  /// Concatenation, 1×1 fusion, global max-pool appended per pixel, heads.
  Heads fuse_and_predict(nn::Graph& g, const nn::Var& color_emb, const nn::Var& geom_emb,
                         const nn::Var& mask_emb) const;

  FusionOutputs forward(nn::Graph& g, const Observation& obs) const;

  void save(const std::filesystem::path& path, nlohmann::json extra = nlohmann::json::object()) const;
  /// Returns the network and the checkpoint header.
  static std::pair<PoseNet, nlohmann::json> load(const std::filesystem::path& path);

 private:
  FusionConfig config_;
  nn::ParameterSet params_;
  FeatureExtractor color_;
  FeatureExtractor mask_;
  std::vector<nn::Dense> geom_;
  nn::Dense fuse_;
  std::vector<nn::Dense> rot_head_;
  std::vector<nn::Dense> trans_head_;
  std::vector<nn::Dense> conf_head_;
};

nn::Tensor mask_to_tensor(const BinaryMask& mask);
/// [3, N] tensor of (points - centroid) / kGeometryScale.
nn::Tensor centered_points_tensor(const Points3& points, const Eigen::Vector3d& centroid);

DensePrediction to_dense_prediction(const FusionOutputs& out);
DensePrediction predict_dense(const PoseNet& net, const Observation& obs);

/// Per-pixel pose loss distances L_i. Symmetric models use the closest-point variant.
Eigen::VectorXd pose_loss_terms(const DensePrediction& pred, const Pose& gt,
                                const Points3& loss_points, bool symmetric);

/// (1/N) sum_i (L_i c_i - w log c_i); without confidence the plain mean of L_i.
double pose_loss(const DensePrediction& pred, const Pose& gt, const Points3& loss_points,
                 bool symmetric, double w, bool use_confidence = true);

/// Same loss as a graph node differentiable in raw_quaternion [4, N],
/// translation [3, N] (meters) and confidence [1, N]. `confidence` may be
/// null when use_confidence is false.
nn::Var pose_loss_node(nn::Graph& g, const nn::Var& raw_quaternion, const nn::Var& translation,
                       const nn::Var& confidence, const Pose& gt, const Points3& loss_points,
                       bool symmetric, double w, bool use_confidence);

/// Pose of the most confident pixel, lowest index on ties.
PosePrediction select_pose(const DensePrediction& pred, int object_id = 0);
/// Sign-aligned quaternion mean and translation mean; confidence is the mean confidence.
PosePrediction average_pose(const DensePrediction& pred, int object_id = 0);

struct PoseEpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  /// Mean ADD (or ADD-S for symmetric objects) over the held-out instances in millimeters.
  double heldout_add_mm = 0.0;
};

struct PoseTrainResult {
  PoseNet net;
  std::vector<PoseEpochLog> history;
  double initial_loss = 0.0;
};

/// Trains on ground-truth masks. An empty held-out set scores the training frames.
PoseTrainResult pose_train(const std::vector<RgbdFrame>& train, const std::vector<RgbdFrame>& heldout,
                           const ModelCatalog& models, const FusionConfig& config,
                           const std::function<void(const PoseEpochLog&)>& on_epoch = {});

/// Pose of one observation with the configured selection rule.
PosePrediction estimate_pose(const PoseNet& net, const Observation& obs);

/// Frame rotated by `angle` radians about the optical axis (requires fx = fy):
/// images are resampled with nearest neighbor about the principal point and
/// every pose is pre-composed with the matching camera roll. Annotations that
/// lose all pixels are dropped.
RgbdFrame roll_frame(const RgbdFrame& frame, double angle);

/// Per-observation seed shared by training, evaluation and inference.
std::uint64_t observation_seed(std::uint64_t base, int frame_id, int object_id);

}  // namespace maskpose
