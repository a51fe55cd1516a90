#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "maskpose/geometry.hpp"

namespace testing {

inline Eigen::Quaterniond random_quaternion(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q;
}

inline maskpose::Pose random_pose(std::mt19937_64& rng, double translation_scale = 0.5) {
  std::uniform_real_distribution<double> u(-translation_scale, translation_scale);
  return maskpose::Pose(random_quaternion(rng), Eigen::Vector3d(u(rng), u(rng), u(rng)));
}

inline maskpose::Points3 random_points(std::mt19937_64& rng, int n, double scale = 0.05) {
  std::uniform_real_distribution<double> u(-scale, scale);
  maskpose::Points3 p(n, 3);
  for (int i = 0; i < n; ++i) p.row(i) = Eigen::RowVector3d(u(rng), u(rng), u(rng));
  return p;
}

/// Fresh empty directory under the system temp directory.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("maskpose_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
