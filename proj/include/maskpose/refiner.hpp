#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "maskpose/fusionmodel.hpp"

namespace maskpose {

struct RefinerConfig {
  int iterations = 2;
  int hidden = 64;
  /// Mean main-network train loss (meters) required before refiner training starts.
  double start_threshold = 0.016;
  nn::OptimizerConfig optimizer{"sgd", 0.01};
  int epochs = 10;
  /// Std of random rotation (radians) and translation (meters) noise added to
  /// the main network's estimate of each training instance.
  double perturb_rotation = 0.0;
  double perturb_translation = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json refiner_config_to_json(const RefinerConfig& config);
RefinerConfig refiner_config_from_json(const nlohmann::json& json, RefinerConfig defaults = {});

/// Observed points with the frozen main-network embeddings at the same pixels.
struct RefineInput {
  int object_id = 0;
  Points3 points;
  nn::Tensor color_emb;  // [d_color, N]
  nn::Tensor mask_emb;   // [d_mask, N]
};

RefineInput make_refine_input(const Observation& obs, const FusionOutputs& outputs);

/// Point network over the observation expressed in the current object frame,
/// fused with the embeddings, max-pooled, and two zero-initialized heads.
class RefinerNet {
 public:
  RefinerNet(RefinerConfig config, int d_color, int d_mask);

  const RefinerConfig& config() const { return config_; }
  int d_color() const { return d_color_; }
  int d_mask() const { return d_mask_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

  struct Delta {
    nn::Var raw_quaternion;  // [4, 1], (1 + r_w, r_x, r_y, r_z)
    nn::Var translation;     // [3, 1], meters in the object frame
  };
  /// Correction applied on the object side: the refined pose is current ∘ delta.
  Delta forward(nn::Graph& g, const Pose& current, const RefineInput& input) const;

  void save(const std::filesystem::path& path, nlohmann::json extra = nlohmann::json::object()) const;
  static RefinerNet load(const std::filesystem::path& path);

 private:
  RefinerConfig config_;
  int d_color_;
  int d_mask_;
  nn::ParameterSet params_;
  std::vector<nn::Dense> point_;
  nn::Dense fuse_;
  std::vector<nn::Dense> rot_;
  std::vector<nn::Dense> trans_;
};

/// Object-side correction as a Pose.
Pose delta_pose(const RefinerNet::Delta& delta);

/// Camera-frame residual r with compose(r, current) = current ∘ delta.
Pose refine_step(const RefinerNet& net, const Pose& current, const RefineInput& input);

/// Applies `iterations` residual updates; sets the refined flag.
PosePrediction refine(const RefinerNet& net, const PosePrediction& initial, const RefineInput& input,
                      int iterations);

struct RefinerEpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  /// Mean ADD (ADD-S for symmetric objects) after refinement, millimeters.
  double heldout_add_mm = 0.0;
};

struct RefinerTrainResult {
  RefinerNet net;
  std::vector<RefinerEpochLog> history;
  /// Mean ADD of the unrefined estimates on the scored set, millimeters.
  double baseline_add_mm = 0.0;
  /// Epoch whose parameters were kept (0 = untrained identity refiner).
  int best_epoch = 0;
};

/// Trains on ground-truth masks against the frozen main network. Throws
/// MissingPrerequisite when main_train_loss is not below config.start_threshold.
/// The kept parameters are those with the lowest held-out mean ADD (the
/// training frames when `heldout` is empty), including the untrained start.
RefinerTrainResult refiner_train(const std::vector<RgbdFrame>& train, const std::vector<RgbdFrame>& heldout,
                                 const ModelCatalog& models, const PoseNet& main, double main_train_loss,
                                 const RefinerConfig& config,
                                 const std::function<void(const RefinerEpochLog&)>& on_epoch = {});

}  // namespace maskpose
