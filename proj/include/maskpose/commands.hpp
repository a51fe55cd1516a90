#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "maskpose/datasets.hpp"
#include "maskpose/fusionmodel.hpp"
#include "maskpose/metrics.hpp"
#include "maskpose/refiner.hpp"
#include "maskpose/segmodel.hpp"

namespace maskpose {

/// Everything a command needs. Every field has a default, so an empty JSON
/// object is a valid configuration.
struct RunConfig {
  std::filesystem::path dataset_root = "data";
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::filesystem::path output_dir = "output";
  /// Global seed; stage configs without an explicit "seed" inherit it.
  std::uint64_t seed = 0;
  /// Frames written by generate.
  int frame_count = 250;
  double train_fraction = 0.8;
  SceneConfig scene;
  SegConfig segmentation;
  FusionConfig fusion;
  RefinerConfig refiner;
  /// Crop with annotated masks at inference instead of segmenting.
  bool use_gt_masks = false;
  bool refine = true;
  /// Split used by infer and eval.
  std::string split = "test";
  /// Keeps every output byte-identical across runs: wall-clock latencies go
  /// to a sidecar file instead of the predictions.
  bool deterministic = false;

  void validate() const;
};

/// Keys: dataset_root, checkpoint_dir, output_dir, seed, frame_count,
/// train_fraction, scene, segmentation, fusion, refiner, use_gt_masks, refine,
/// split, deterministic. `seed_override` replaces the global seed before the
/// stage seeds inherit it. Throws InvalidArgument on bad values.
RunConfig run_config_from_json(const nlohmann::json& json, std::optional<std::uint64_t> seed_override = {});
nlohmann::json run_config_to_json(const RunConfig& config);
/// Reads a JSON file; a missing file is a MissingPrerequisite.
RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = {});

/// Checkpoint and log locations inside checkpoint_dir.
std::filesystem::path checkpoint_path(const RunConfig& config, const std::string& stage);
std::filesystem::path training_log_path(const RunConfig& config, const std::string& stage);
/// Predictions file of `split` inside output_dir.
std::filesystem::path predictions_path(const RunConfig& config, const std::string& split);
std::filesystem::path latency_path(const std::filesystem::path& predictions);

/// Writes `count` frames (ids 0..count-1), the object catalog and the
/// train/test splits. Refuses a dataset root that already holds frames.
void cmd_generate(const RunConfig& config, int count, std::ostream& log);

/// Trains stage "seg", "pose" or "refine" on the train split, logging the test
/// split per epoch (the refiner logs and selects on the train split). Writes
/// the checkpoint and a CSV log with one row per epoch.
void cmd_train(const RunConfig& config, const std::string& stage, std::ostream& log);

/// Runs the pipeline over `split` and writes the predictions file, returning
/// its path. Frames that fail to load are skipped with a warning.
std::filesystem::path cmd_infer(const RunConfig& config, const std::string& split, std::ostream& log);

/// Scores `predictions` against `split` and writes report.json, report.csv,
/// curve.csv and curve.png under `out_dir`.
MetricsReport cmd_eval(const RunConfig& config, const std::filesystem::path& predictions,
                       const std::string& split, const std::filesystem::path& out_dir, std::ostream& log);

/// Accuracy-threshold curve table: threshold_m, then ADD-S accuracy over all
/// instances, then one column per object. 200 rows from 0 to 10 cm.
std::string curve_csv(std::span<const PoseErrorRecord> records, const ModelCatalog& models);

/// Process exit code for an error escaping a command: 2 usage,
/// 3 missing prerequisite, 4 data error, 1 anything else.
int exit_code_for(const std::exception& error);

}  // namespace maskpose
