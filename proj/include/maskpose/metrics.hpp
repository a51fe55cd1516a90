#pragma once

#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "maskpose/geometry.hpp"

namespace maskpose {

enum class MetricKind { add, add_s };

/// Error sentinel for objects that were never detected or could not be posed.
inline constexpr double kFailedError = std::numeric_limits<double>::infinity();

/// Thresholds the evaluation reports are built around.
inline constexpr double kAucMaxThreshold = 0.10;
inline constexpr double kGripperThreshold = 0.02;
inline constexpr double kAddDiameterFraction = 0.10;

/// Mean distance between corresponding model points under both poses.
double add(const Points3& model_points, const Pose& gt, const Pose& pred);

/// Mean distance from every ground-truth-posed point to the closest
/// prediction-posed point. Uses a k-d tree over the prediction-posed points.
double add_s(const Points3& model_points, const Pose& gt, const Pose& pred);

struct PoseErrorRecord {
  int frame_id = 0;
  int object_id = 0;
  /// ADD for asymmetric objects, ADD-S for symmetric ones.
  double error = kFailedError;
  /// ADD-S regardless of symmetry; feeds the AUC and <2cm statistics.
  double add_s_error = kFailedError;
  MetricKind metric_kind = MetricKind::add;
  bool failed = true;
};

/// Scores one prediction against its ground truth using all model points.
PoseErrorRecord score_pose(int frame_id, const ObjectModel& model, const Pose& gt,
                           const Pose& pred);
/// Record for an annotated object without a usable prediction.
PoseErrorRecord failed_record(int frame_id, const ObjectModel& model);

/// Percentage of records (per object) with error < 10% of the diameter.
std::map<int, double> accuracy_add_10pct(std::span<const PoseErrorRecord> records,
                                         const ModelCatalog& models);

/// Area under the accuracy-threshold curve on [0, max_threshold], in [0, 100].
double auc(std::span<const double> errors, double max_threshold = kAucMaxThreshold);

/// Percentage of errors strictly below `threshold`.
double pct_below(std::span<const double> errors, double threshold = kGripperThreshold);

struct CurvePoint {
  double threshold = 0.0;
  double accuracy = 0.0;
};
/// Accuracy (percent of errors < threshold) at `steps` evenly spaced
/// thresholds from 0 to max_threshold inclusive.
std::vector<CurvePoint> accuracy_curve(std::span<const double> errors,
                                       double max_threshold = kAucMaxThreshold, int steps = 200);

struct ObjectMetrics {
  int object_id = 0;
  int n = 0;
  double add_acc_10pct = 0.0;
  double auc = 0.0;
  double pct_below_2cm = 0.0;
  bool operator==(const ObjectMetrics&) const = default;
};

struct MetricsReport {
  std::vector<ObjectMetrics> objects;
  /// Unweighted mean over objects; object_id is unused, n is the total count.
  ObjectMetrics average;
  bool operator==(const MetricsReport&) const = default;
};

MetricsReport build_report(std::span<const PoseErrorRecord> records, const ModelCatalog& models);

nlohmann::json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& json);
std::string report_to_csv(const MetricsReport& report);
MetricsReport report_from_csv(const std::string& csv);

}  // namespace maskpose
