#include "maskpose/geometry.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "maskpose/errors.hpp"

namespace maskpose {
namespace {

Eigen::Quaterniond canonical(Eigen::Quaterniond q) {
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return q;
}

}  // namespace

Pose::Pose(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& translation)
    : translation_(translation) {
  const double norm = rotation.norm();
  if (!std::isfinite(norm) || std::abs(norm - 1.0) > kUnitQuaternionTolerance) {
    throw InvalidArgument("Pose: rotation quaternion is not unit (norm " + std::to_string(norm) +
                          ")");
  }
  if (!translation.allFinite()) throw InvalidArgument("Pose: non-finite translation");
  rotation_ = canonical(rotation);
}

Pose Pose::from_unnormalized(const Eigen::Quaterniond& rotation,
                             const Eigen::Vector3d& translation) {
  const double norm = rotation.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw InvalidArgument("Pose: cannot normalize a zero or non-finite quaternion");
  }
  return Pose(Eigen::Quaterniond(rotation.coeffs() / norm), translation);
}

Pose Pose::from_matrix(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation) {
  return from_unnormalized(Eigen::Quaterniond(rotation), translation);
}

Eigen::Matrix3d Pose::rotation_matrix() const { return quat_to_matrix(rotation_); }

Pose Pose::inverse() const {
  const Eigen::Quaterniond inv = rotation_.conjugate();
  return Pose(inv, -(quat_to_matrix(inv) * translation_));
}

Eigen::Vector3d Pose::operator*(const Eigen::Vector3d& point) const {
  return rotation_matrix() * point + translation_;
}

Eigen::Matrix3d quat_to_matrix(const Eigen::Quaterniond& q) {
  const double norm = q.norm();
  if (!std::isfinite(norm) || std::abs(norm - 1.0) > kUnitQuaternionTolerance) {
    throw InvalidArgument("quat_to_matrix: quaternion norm " + std::to_string(norm) +
                          " is not 1");
  }
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Eigen::Matrix3d r;
  r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
      2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
      2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
  return r;
}

Points3 apply_pose(const Pose& pose, const Points3& points) {
  if (!points.allFinite()) throw InvalidArgument("apply_pose: non-finite points");
  const Eigen::Matrix3d r = pose.rotation_matrix();
  Points3 out(points.rows(), 3);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    out.row(i) = (r * points.row(i).transpose() + pose.translation()).transpose();
  }
  return out;
}

Pose compose(const Pose& outer, const Pose& inner) {
  const Eigen::Quaterniond q = outer.rotation() * inner.rotation();
  return Pose::from_unnormalized(q, outer.rotation_matrix() * inner.translation() +
                                        outer.translation());
}

double rotation_angle_between(const Pose& a, const Pose& b) {
  const double d = std::abs(a.rotation().dot(b.rotation()));
  return 2.0 * std::acos(std::min(1.0, d));
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("intrinsics: focal lengths must be > 0");
  if (width <= 0 || height <= 0) throw InvalidArgument("intrinsics: image size must be > 0");
  if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height) {
    throw InvalidArgument("intrinsics: principal point outside the image");
  }
}

Eigen::Vector2d project(const CameraIntrinsics& k, const Eigen::Vector3d& p) {
  return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
}

Points3 backproject(const DepthImage& depth, const CameraIntrinsics& k,
                    std::span<const Pixel> pixels) {
  return backproject(depth, k, pixels, Pixel{0, 0});
}

Points3 backproject(const DepthImage& depth, const CameraIntrinsics& k,
                    std::span<const Pixel> pixels, Pixel origin) {
  Points3 out(static_cast<Eigen::Index>(pixels.size()), 3);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const Pixel px = pixels[i];
    if (!depth.contains(px.v, px.u)) {
      throw InvalidPixel("backproject: pixel (" + std::to_string(px.u) + "," +
                         std::to_string(px.v) + ") out of bounds");
    }
    const double z = depth(px.v, px.u);
    if (!(z > 0.0)) {
      throw InvalidPixel("backproject: pixel (" + std::to_string(px.u) + "," +
                         std::to_string(px.v) + ") has no depth");
    }
    out(static_cast<Eigen::Index>(i), 0) = (px.u + origin.u - k.cx) * z / k.fx;
    out(static_cast<Eigen::Index>(i), 1) = (px.v + origin.v - k.cy) * z / k.fy;
    out(static_cast<Eigen::Index>(i), 2) = z;
  }
  return out;
}

double max_pairwise_distance(const Points3& points) {
  double best = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < points.rows(); ++j) {
      best = std::max(best, (points.row(i) - points.row(j)).squaredNorm());
    }
  }
  return std::sqrt(best);
}

void ObjectModel::validate() const {
  if (points.rows() == 0) throw InvalidArgument("model " + std::to_string(object_id) + ": no points");
  if (!points.allFinite()) throw InvalidArgument("model: non-finite points");
  if (!(diameter > 0.0)) throw InvalidArgument("model: diameter must be > 0");
  if (max_pairwise_distance(points) > diameter + 1e-6) {
    throw InvalidArgument("model " + std::to_string(object_id) +
                          ": diameter smaller than the point extent");
  }
  if (!colors.empty() && colors.size() != static_cast<std::size_t>(points.rows())) {
    throw InvalidArgument("model: color table size does not match point count");
  }
}

Points3 sample_model_points(const ObjectModel& model, int count, std::uint64_t seed) {
  const auto n = static_cast<int>(model.points.rows());
  if (n == 0) throw InvalidArgument("sample_model_points: empty model");
  if (count < 1) throw InvalidArgument("sample_model_points: count must be >= 1");
  std::mt19937_64 rng(seed);
  Points3 out(count, 3);
  if (count <= n) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    // partial Fisher-Yates
    for (int i = 0; i < count; ++i) {
      std::uniform_int_distribution<int> pick(i, n - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
      out.row(i) = model.points.row(idx[static_cast<std::size_t>(i)]);
    }
  } else {
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (int i = 0; i < count; ++i) out.row(i) = model.points.row(pick(rng));
  }
  return out;
}

void write_model(const std::filesystem::path& dir, const ObjectModel& model) {
  model.validate();
  std::filesystem::create_directories(dir);
  const std::string id = std::to_string(model.object_id);
  {
    std::ofstream xyz(dir / (id + ".xyz"));
    if (!xyz) throw Error("cannot write " + (dir / (id + ".xyz")).string());
    xyz.precision(17);
    for (Eigen::Index i = 0; i < model.points.rows(); ++i) {
      xyz << model.points(i, 0) << ' ' << model.points(i, 1) << ' ' << model.points(i, 2) << '\n';
    }
  }
  nlohmann::json meta;
  meta["object_id"] = model.object_id;
  meta["diameter_m"] = model.diameter;
  meta["symmetric"] = model.symmetric;
  auto colors = nlohmann::json::array();
  for (const Rgb& c : model.colors) colors.push_back({c.r, c.g, c.b});
  meta["color_table"] = colors;
  std::ofstream out(dir / (id + ".meta.json"));
  if (!out) throw Error("cannot write " + (dir / (id + ".meta.json")).string());
  out << meta.dump() << '\n';
}

ObjectModel load_model(const std::filesystem::path& dir, int object_id) {
  const std::string id = std::to_string(object_id);
  const auto xyz_path = dir / (id + ".xyz");
  const auto meta_path = dir / (id + ".meta.json");
  std::ifstream xyz(xyz_path);
  if (!xyz) throw ParseError("missing model file " + xyz_path.string());
  std::vector<Eigen::Vector3d> pts;
  std::string line;
  int line_no = 0;
  while (std::getline(xyz, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    Eigen::Vector3d p;
    if (!(ss >> p.x() >> p.y() >> p.z())) {
      throw ParseError(xyz_path.string() + ":" + std::to_string(line_no) +
                       ": expected 'x y z'");
    }
    pts.push_back(p);
  }
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw ParseError("missing model metadata " + meta_path.string());
  ObjectModel model;
  model.object_id = object_id;
  try {
    const auto meta = nlohmann::json::parse(meta_in);
    model.diameter = meta.at("diameter_m").get<double>();
    model.symmetric = meta.at("symmetric").get<bool>();
    if (meta.contains("color_table")) {
      for (const auto& c : meta.at("color_table")) {
        model.colors.push_back({c.at(0).get<std::uint8_t>(), c.at(1).get<std::uint8_t>(),
                                c.at(2).get<std::uint8_t>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(meta_path.string() + ": " + e.what());
  }
  model.points.resize(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    model.points.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  }
  try {
    model.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(xyz_path.string() + ": " + e.what());
  }
  return model;
}

}  // namespace maskpose
