#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "maskpose/image.hpp"

namespace maskpose {

/// N×3 row-major point set in meters.
using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Tolerance on |q| - 1 accepted as a unit quaternion.
inline constexpr double kUnitQuaternionTolerance = 1e-6;

/// Rigid transform x -> R x + t with R stored as a unit quaternion.
///
/// The quaternion is normalized and sign-canonicalized (w >= 0) whenever a
/// Pose is built, so two poses describing the same rotation serialize alike.
class Pose {
 public:
  Pose() = default;

  /// Throws InvalidArgument when |rotation| is not 1 within kUnitQuaternionTolerance.
  Pose(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& translation);

  /// Normalizes an arbitrary nonzero quaternion.
  static Pose from_unnormalized(const Eigen::Quaterniond& rotation,
                                const Eigen::Vector3d& translation);
  static Pose from_matrix(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);
  static Pose identity() { return {}; }

  const Eigen::Quaterniond& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }
  Eigen::Matrix3d rotation_matrix() const;

  Pose inverse() const;

  /// Applies the pose to a single point.
  Eigen::Vector3d operator*(const Eigen::Vector3d& point) const;

 private:
  Eigen::Quaterniond rotation_ = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation_ = Eigen::Vector3d::Zero();
};

/// Rotation matrix of a unit quaternion. Throws InvalidArgument otherwise.
Eigen::Matrix3d quat_to_matrix(const Eigen::Quaterniond& q);

/// output[i] = R * points[i] + t.
Points3 apply_pose(const Pose& pose, const Points3& points);

/// Pose equivalent to applying `inner` first and then `outer`.
Pose compose(const Pose& outer, const Pose& inner);

/// Rotation angle (radians) between two poses' rotations.
double rotation_angle_between(const Pose& a, const Pose& b);

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  /// Throws InvalidArgument if focal lengths are not positive or the
  /// principal point lies outside the image.
  void validate() const;
  bool operator==(const CameraIntrinsics&) const = default;
};

/// Continuous pinhole projection of a camera-frame point, (u, v).
Eigen::Vector2d project(const CameraIntrinsics& intrinsics, const Eigen::Vector3d& point);

/// Lifts pixels to camera-frame points using the pinhole model.
/// Throws InvalidPixel for out-of-bounds pixels or non-positive depth.
Points3 backproject(const DepthImage& depth, const CameraIntrinsics& intrinsics,
                    std::span<const Pixel> pixels);

/// Same as above for a depth crop whose (0, 0) sits at `origin` in the source image.
Points3 backproject(const DepthImage& depth, const CameraIntrinsics& intrinsics,
                    std::span<const Pixel> pixels, Pixel origin);

struct ObjectModel {
  int object_id = 0;
  Points3 points;
  /// Maximum pairwise extent in meters.
  double diameter = 0.0;
  bool symmetric = false;
  /// Optional per-point colors, same length as points when present.
  std::vector<Rgb> colors;

  /// Throws InvalidArgument when an invariant is violated.
  void validate() const;
};

/// Object models keyed by object id.
using ModelCatalog = std::map<int, ObjectModel>;

/// Exact maximum pairwise distance, O(n^2).
double max_pairwise_distance(const Points3& points);

/// Draws `count` model points, uniformly without replacement when
/// count <= |points| and with replacement otherwise. Deterministic per seed.
Points3 sample_model_points(const ObjectModel& model, int count, std::uint64_t seed);

/// Writes `<dir>/<id>.xyz` and `<dir>/<id>.meta.json`.
void write_model(const std::filesystem::path& dir, const ObjectModel& model);
/// Reads a model written by write_model. Throws ParseError on malformed files.
ObjectModel load_model(const std::filesystem::path& dir, int object_id);

}  // namespace maskpose
