#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "maskpose/frame.hpp"

namespace maskpose {

/// Object ids of the built-in catalog.
enum BuiltinObject : int { kCube = 1, kLPrism = 2, kPlate = 3 };

/// Built-in procedurally sampled models: a three-color cube, an L-shaped
/// prism (both asymmetric) and a square plate with 4-fold symmetry about z.
std::vector<ObjectModel> builtin_catalog();

/// Mean distance from each model point to its nearest neighbor.
double mean_point_spacing(const ObjectModel& model);

/// Side of the square each point is splatted to so masks have no holes for
/// objects no closer than `z_min`.
int splat_size(const ObjectModel& model, double fx, double z_min);

struct SplatObject {
  const ObjectModel* model = nullptr;
  Pose pose;
  int splat = 1;
};

struct RenderResult {
  ColorImage color;
  DepthImage depth;
  LabelImage labels;
};

/// Z-buffered point splatting. Pixels without any point keep depth 0, label 0
/// and the color given by `background` (black when empty). Throws
/// GenerationError when a posed point is not in front of the camera.
RenderResult splat_render(const std::vector<SplatObject>& objects,
                          const CameraIntrinsics& intrinsics,
                          const ColorImage* background = nullptr);

struct SceneConfig {
  CameraIntrinsics intrinsics{70.0, 70.0, 32.0, 32.0, 64, 64};
  std::vector<ObjectModel> catalog = builtin_catalog();
  int min_objects = 1;
  int max_objects = 3;
  Eigen::Vector3d translation_min{-0.15, -0.15, 0.6};
  Eigen::Vector3d translation_max{0.15, 0.15, 1.0};
  double depth_noise_std = 0.001;
  double color_noise_std = 3.0;
  /// Fraction of an object's unoccluded pixels that must stay visible.
  double min_visible_fraction = 0.6;
  int min_visible_pixels = 25;
  int max_retries = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json scene_config_to_json(const SceneConfig& config);
/// Missing keys keep their defaults; "object_ids" selects a subset of the built-in catalog.
SceneConfig scene_config_from_json(const nlohmann::json& json);

/// Deterministic per (config, seed). Throws GenerationError when no valid
/// placement is found within config.max_retries.
RgbdFrame generate_scene(const SceneConfig& config, std::uint64_t seed);

// On-disk layout:
//   root/models/<id>.xyz, root/models/<id>.meta.json
//   root/frames/<%06d>/{color.png, depth.png, label.png, meta.json}
//   root/splits/<name>.json

std::filesystem::path frame_dir(const std::filesystem::path& root, int frame_id);

/// Depth is stored as 16-bit millimeters.
void write_frame(const RgbdFrame& frame, const std::filesystem::path& dir);
/// Throws ParseError naming the offending file or field.
RgbdFrame load_frame(const std::filesystem::path& dir);

void write_catalog(const std::filesystem::path& root, const std::vector<ObjectModel>& models);
ModelCatalog load_catalog(const std::filesystem::path& root);

/// Sorted ids of all frame directories under root/frames.
std::vector<int> list_frames(const std::filesystem::path& root);

struct SplitManifest {
  std::vector<int> train;
  std::vector<int> test;
};

/// Shuffles all frames of the dataset and writes root/splits/{train,test}.json.
SplitManifest make_splits(const std::filesystem::path& root, double train_fraction,
                          std::uint64_t seed);
/// Split of an explicit frame list, no IO.
SplitManifest split_frames(std::vector<int> frame_ids, double train_fraction, std::uint64_t seed);
std::vector<int> load_split(const std::filesystem::path& root, const std::string& name);

/// Loads every frame of a split into memory.
std::vector<RgbdFrame> load_frames(const std::filesystem::path& root, const std::vector<int>& ids);

}  // namespace maskpose
