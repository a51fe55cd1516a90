#include "maskpose/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "maskpose/errors.hpp"
#include "maskpose/random.hpp"

namespace maskpose {
namespace {

using ShadeFn = std::function<double(const Eigen::Vector3d&)>;

struct ModelBuilder {
  double spacing = 0.005;
  ShadeFn shade;
  std::vector<Eigen::Vector3d> points;
  std::vector<Rgb> colors;
  std::set<std::tuple<long, long, long>> seen;

  // Grid-samples the parallelogram origin + a*edge_u + b*edge_v, a,b in [0,1].
  void rect(const Eigen::Vector3d& origin, const Eigen::Vector3d& edge_u,
            const Eigen::Vector3d& edge_v, Rgb color) {
    const int nu = std::max(2, static_cast<int>(std::lround(edge_u.norm() / spacing)) + 1);
    const int nv = std::max(2, static_cast<int>(std::lround(edge_v.norm() / spacing)) + 1);
    for (int i = 0; i < nu; ++i) {
      for (int j = 0; j < nv; ++j) {
        const Eigen::Vector3d p = origin + edge_u * (double(i) / (nu - 1)) +
                                  edge_v * (double(j) / (nv - 1));
        // shared face edges produce duplicates; keep the first
        const auto key = std::make_tuple(std::lround(p.x() * 1e7), std::lround(p.y() * 1e7),
                                         std::lround(p.z() * 1e7));
        if (!seen.insert(key).second) continue;
        const double f = shade ? shade(p) : 1.0;
        auto scale = [f](std::uint8_t c) {
          return static_cast<std::uint8_t>(std::clamp(std::lround(c * f), 0L, 255L));
        };
        points.push_back(p);
        colors.push_back({scale(color.r), scale(color.g), scale(color.b)});
      }
    }
  }

  ObjectModel finish(int id, const Eigen::Vector3d& center, double diameter, bool symmetric) {
    ObjectModel m;
    m.object_id = id;
    m.points.resize(static_cast<Eigen::Index>(points.size()), 3);
    for (std::size_t i = 0; i < points.size(); ++i) {
      m.points.row(static_cast<Eigen::Index>(i)) = (points[i] - center).transpose();
    }
    m.colors = colors;
    m.diameter = diameter;
    m.symmetric = symmetric;
    return m;
  }
};

double vertex_diameter(const std::vector<Eigen::Vector3d>& vertices) {
  double d = 0.0;
  for (const auto& a : vertices) {
    for (const auto& b : vertices) d = std::max(d, (a - b).norm());
  }
  return d;
}

ObjectModel make_cube() {
  constexpr double a = 0.10;
  ModelBuilder b;
  b.spacing = a / 17.0;
  b.shade = [](const Eigen::Vector3d& p) {
    return 0.78 + 0.22 * std::sin(40.0 * (p.x() + 2.0 * p.y() + 3.0 * p.z()));
  };
  const Eigen::Vector3d ex = Eigen::Vector3d::UnitX() * a, ey = Eigen::Vector3d::UnitY() * a,
                        ez = Eigen::Vector3d::UnitZ() * a, o = Eigen::Vector3d::Zero();
  // Each hue family covers two adjacent faces, so no rotation maps the
  // coloring onto itself.
  b.rect(o + ex, ey, ez, {220, 40, 40});      // +x
  b.rect(o + ey, ex, ez, {235, 110, 50});     // +y
  b.rect(o, ey, ez, {40, 190, 60});           // -x
  b.rect(o + ez, ex, ey, {120, 220, 110});    // +z
  b.rect(o, ex, ez, {50, 70, 220});           // -y
  b.rect(o, ex, ey, {110, 150, 245});         // -z
  std::vector<Eigen::Vector3d> corners;
  for (int i = 0; i < 8; ++i) corners.emplace_back((i & 1) * a, ((i >> 1) & 1) * a, ((i >> 2) & 1) * a);
  return b.finish(kCube, Eigen::Vector3d::Constant(a / 2), vertex_diameter(corners), false);
}

ObjectModel make_l_prism() {
  constexpr double len_x = 0.10, len_y = 0.08, thick = 0.035, depth = 0.08;
  ModelBuilder b;
  b.spacing = 0.0045;
  b.shade = [](const Eigen::Vector3d& p) {
    return 0.78 + 0.22 * std::cos(45.0 * (2.0 * p.x() - p.y() + 1.5 * p.z()));
  };
  const std::vector<Eigen::Vector2d> outline = {
      {0, 0}, {len_x, 0}, {len_x, thick}, {thick, thick}, {thick, len_y}, {0, len_y}};
  const Eigen::Vector3d ez = Eigen::Vector3d::UnitZ() * depth;
  // caps as two rectangles each
  for (int cap = 0; cap < 2; ++cap) {
    const Eigen::Vector3d z0 = cap == 0 ? Eigen::Vector3d::Zero() : ez;
    const Rgb c = cap == 0 ? Rgb{190, 150, 30} : Rgb{235, 215, 40};
    b.rect(z0, Eigen::Vector3d(len_x, 0, 0), Eigen::Vector3d(0, thick, 0), c);
    b.rect(z0 + Eigen::Vector3d(0, thick, 0), Eigen::Vector3d(thick, 0, 0),
           Eigen::Vector3d(0, len_y - thick, 0), c);
  }
  const Rgb sides[] = {{170, 60, 190}, {200, 90, 210}, {140, 40, 150},
                       {190, 70, 160}, {160, 80, 200}, {210, 110, 180}};
  std::vector<Eigen::Vector3d> vertices;
  for (std::size_t i = 0; i < outline.size(); ++i) {
    const Eigen::Vector2d& p = outline[i];
    const Eigen::Vector2d& q = outline[(i + 1) % outline.size()];
    const Eigen::Vector3d p3(p.x(), p.y(), 0.0), q3(q.x(), q.y(), 0.0);
    b.rect(p3, q3 - p3, ez, sides[i]);
    vertices.push_back(p3);
    vertices.push_back(p3 + ez);
  }
  return b.finish(kLPrism, Eigen::Vector3d(len_x / 2, len_y / 2, depth / 2),
                  vertex_diameter(vertices), false);
}

ObjectModel make_plate() {
  constexpr double side = 0.12, thick = 0.01;
  ModelBuilder b;
  b.spacing = 0.0045;
  // radial shading keeps the 4-fold symmetry of the appearance
  b.shade = [](const Eigen::Vector3d& p) {
    const double r = std::hypot(p.x() - side / 2, p.y() - side / 2);
    return 0.8 + 0.2 * std::cos(60.0 * r);
  };
  const Eigen::Vector3d ex = Eigen::Vector3d::UnitX() * side, ey = Eigen::Vector3d::UnitY() * side,
                        ez = Eigen::Vector3d::UnitZ() * thick, o = Eigen::Vector3d::Zero();
  b.rect(o + ez, ex, ey, {245, 150, 40});
  b.rect(o, ex, ey, {160, 95, 40});
  const Rgb rim{200, 120, 40};
  b.rect(o, ex, ez, rim);
  b.rect(o + ey, ex, ez, rim);
  b.rect(o, ey, ez, rim);
  b.rect(o + ex, ey, ez, rim);
  return b.finish(kPlate, Eigen::Vector3d(side / 2, side / 2, thick / 2),
                  std::sqrt(2 * side * side + thick * thick), true);
}

Eigen::Quaterniond random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q;
  do {
    q = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng));
  } while (q.norm() < 1e-6);
  q.normalize();
  return q;
}

std::uint8_t noisy(double value, double noise) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(value + noise), 0L, 255L));
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("missing file " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

}  // namespace

std::vector<ObjectModel> builtin_catalog() { return {make_cube(), make_l_prism(), make_plate()}; }

double mean_point_spacing(const ObjectModel& model) {
  const Eigen::Index n = model.points.rows();
  if (n < 2) throw InvalidArgument("mean_point_spacing: need at least 2 points");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) best = std::min(best, (model.points.row(i) - model.points.row(j)).squaredNorm());
    }
    sum += std::sqrt(best);
  }
  return sum / static_cast<double>(n);
}

int splat_size(const ObjectModel& model, double fx, double z_min) {
  if (!(z_min > 0.0)) throw InvalidArgument("splat_size: z_min must be > 0");
  return std::max(1, static_cast<int>(std::ceil(2.0 * fx * mean_point_spacing(model) / z_min)));
}

RenderResult splat_render(const std::vector<SplatObject>& objects, const CameraIntrinsics& k,
                          const ColorImage* background) {
  k.validate();
  RenderResult out;
  out.color = background ? *background : ColorImage(k.height, k.width);
  if (out.color.height() != k.height || out.color.width() != k.width) {
    throw InvalidArgument("splat_render: background size mismatch");
  }
  out.depth = DepthImage(k.height, k.width, 0.0);
  out.labels = LabelImage(k.height, k.width, 0);
  for (const SplatObject& obj : objects) {
    if (obj.model == nullptr || obj.splat < 1) throw InvalidArgument("splat_render: bad object");
    const Points3 posed = apply_pose(obj.pose, obj.model->points);
    const int lo = -(obj.splat - 1) / 2;
    const int hi = obj.splat / 2;
    for (Eigen::Index i = 0; i < posed.rows(); ++i) {
      const Eigen::Vector3d p = posed.row(i).transpose();
      if (!(p.z() > 0.0)) throw GenerationError("splat_render: point behind the camera");
      const Eigen::Vector2d uv = project(k, p);
      const long u = std::lround(uv.x()), v = std::lround(uv.y());
      const Rgb color = obj.model->colors.empty() ? Rgb{255, 255, 255}
                                                   : obj.model->colors[static_cast<std::size_t>(i)];
      for (int dv = lo; dv <= hi; ++dv) {
        for (int du = lo; du <= hi; ++du) {
          const long uu = u + du, vv = v + dv;
          if (uu < 0 || vv < 0 || uu >= k.width || vv >= k.height) continue;
          const int r = static_cast<int>(vv), c = static_cast<int>(uu);
          double& d = out.depth(r, c);
          if (d == 0.0 || p.z() < d) {
            d = p.z();
            out.labels(r, c) = static_cast<std::uint8_t>(obj.model->object_id);
            out.color(r, c) = color;
          }
        }
      }
    }
  }
  return out;
}

void SceneConfig::validate() const {
  intrinsics.validate();
  if (catalog.empty()) throw InvalidArgument("scene config: empty catalog");
  if (min_objects < 1 || min_objects > max_objects) {
    throw InvalidArgument("scene config: need 1 <= min_objects <= max_objects");
  }
  if (max_objects > static_cast<int>(catalog.size())) {
    throw InvalidArgument("scene config: more objects per scene than catalog entries");
  }
  if (!(translation_min.array() <= translation_max.array()).all()) {
    throw InvalidArgument("scene config: translation box min > max");
  }
  if (!(translation_min.z() > 0.0)) throw InvalidArgument("scene config: translation box must have z > 0");
  for (const auto& m : catalog) {
    if (!(translation_min.z() - m.diameter / 2 > 0.0)) {
      throw InvalidArgument("scene config: objects may cross the image plane");
    }
  }
  if (depth_noise_std < 0.0 || color_noise_std < 0.0) throw InvalidArgument("scene config: negative noise");
}

nlohmann::json scene_config_to_json(const SceneConfig& c) {
  std::vector<int> ids;
  for (const auto& m : c.catalog) ids.push_back(m.object_id);
  return {{"intrinsics",
           {{"fx", c.intrinsics.fx},
            {"fy", c.intrinsics.fy},
            {"cx", c.intrinsics.cx},
            {"cy", c.intrinsics.cy},
            {"width", c.intrinsics.width},
            {"height", c.intrinsics.height}}},
          {"min_objects", c.min_objects},
          {"max_objects", c.max_objects},
          {"translation_min", {c.translation_min.x(), c.translation_min.y(), c.translation_min.z()}},
          {"translation_max", {c.translation_max.x(), c.translation_max.y(), c.translation_max.z()}},
          {"depth_noise_std", c.depth_noise_std},
          {"color_noise_std", c.color_noise_std},
          {"min_visible_fraction", c.min_visible_fraction},
          {"min_visible_pixels", c.min_visible_pixels},
          {"max_retries", c.max_retries},
          {"seed", c.seed},
          {"object_ids", ids}};
}

SceneConfig scene_config_from_json(const nlohmann::json& j) {
  SceneConfig c;
  try {
    if (j.contains("intrinsics")) {
      const auto& k = j.at("intrinsics");
      c.intrinsics.fx = k.value("fx", c.intrinsics.fx);
      c.intrinsics.fy = k.value("fy", c.intrinsics.fy);
      c.intrinsics.cx = k.value("cx", c.intrinsics.cx);
      c.intrinsics.cy = k.value("cy", c.intrinsics.cy);
      c.intrinsics.width = k.value("width", c.intrinsics.width);
      c.intrinsics.height = k.value("height", c.intrinsics.height);
    }
    c.min_objects = j.value("min_objects", c.min_objects);
    c.max_objects = j.value("max_objects", c.max_objects);
    auto vec = [&](const char* key, Eigen::Vector3d& v) {
      if (!j.contains(key)) return;
      const auto& a = j.at(key);
      v = {a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()};
    };
    vec("translation_min", c.translation_min);
    vec("translation_max", c.translation_max);
    c.depth_noise_std = j.value("depth_noise_std", c.depth_noise_std);
    c.color_noise_std = j.value("color_noise_std", c.color_noise_std);
    c.min_visible_fraction = j.value("min_visible_fraction", c.min_visible_fraction);
    c.min_visible_pixels = j.value("min_visible_pixels", c.min_visible_pixels);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.seed = j.value("seed", c.seed);
    if (j.contains("object_ids")) {
      std::vector<ObjectModel> chosen;
      for (int id : j.at("object_ids").get<std::vector<int>>()) {
        auto it = std::find_if(c.catalog.begin(), c.catalog.end(),
                               [id](const ObjectModel& m) { return m.object_id == id; });
        if (it == c.catalog.end()) throw ParseError("scene config: unknown object id " + std::to_string(id));
        chosen.push_back(*it);
      }
      c.catalog = std::move(chosen);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("scene config: ") + e.what());
  }
  c.validate();
  return c;
}

RgbdFrame generate_scene(const SceneConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(derive_seed(config.seed, {seed}));
  const CameraIntrinsics& k = config.intrinsics;

  std::vector<int> splats;
  for (const auto& m : config.catalog) {
    splats.push_back(splat_size(m, k.fx, config.translation_min.z() - m.diameter / 2));
  }

  std::uniform_int_distribution<int> count_dist(config.min_objects, config.max_objects);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (int attempt = 0; attempt < config.max_retries; ++attempt) {
    const int count = count_dist(rng);
    std::vector<std::size_t> order(config.catalog.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(static_cast<std::size_t>(count));
    std::sort(order.begin(), order.end());

    std::vector<SplatObject> objects;
    for (std::size_t idx : order) {
      Eigen::Vector3d t;
      for (int a = 0; a < 3; ++a) {
        t(a) = config.translation_min(a) +
               unit(rng) * (config.translation_max(a) - config.translation_min(a));
      }
      objects.push_back({&config.catalog[idx], Pose(random_rotation(rng), t), splats[idx]});
    }

    bool ok = true;
    std::vector<int> solo(objects.size());
    try {
      for (std::size_t i = 0; i < objects.size(); ++i) {
        const RenderResult r = splat_render({objects[i]}, k);
        solo[i] = static_cast<int>(std::count_if(r.depth.data().begin(), r.depth.data().end(),
                                                 [](double d) { return d > 0.0; }));
      }
    } catch (const GenerationError&) {
      ok = false;
    }
    if (!ok) continue;

    ColorImage background(k.height, k.width);
    const double base = 60.0 + 100.0 * unit(rng);
    const double tint[3] = {15.0 * (2 * unit(rng) - 1), 15.0 * (2 * unit(rng) - 1),
                            15.0 * (2 * unit(rng) - 1)};
    for (Rgb& px : background.data()) {
      px = {noisy(base + tint[0], 12.0 * gauss(rng)), noisy(base + tint[1], 12.0 * gauss(rng)),
            noisy(base + tint[2], 12.0 * gauss(rng))};
    }
    RenderResult scene = splat_render(objects, k, &background);

    for (std::size_t i = 0; i < objects.size() && ok; ++i) {
      const auto id = static_cast<std::uint8_t>(objects[i].model->object_id);
      const int visible =
          static_cast<int>(std::count(scene.labels.data().begin(), scene.labels.data().end(), id));
      ok = visible >= config.min_visible_pixels &&
           visible >= config.min_visible_fraction * solo[i];
    }
    if (!ok) continue;

    RgbdFrame frame;
    frame.intrinsics = k;
    frame.color = std::move(scene.color);
    frame.depth = std::move(scene.depth);
    frame.labels = std::move(scene.labels);
    for (std::size_t i = 0; i < frame.labels.size(); ++i) {
      if (frame.labels.data()[i] == 0) continue;
      Rgb& px = frame.color.data()[i];
      px = {noisy(px.r, config.color_noise_std * gauss(rng)),
            noisy(px.g, config.color_noise_std * gauss(rng)),
            noisy(px.b, config.color_noise_std * gauss(rng))};
      double& d = frame.depth.data()[i];
      if (config.depth_noise_std > 0.0) d = std::max(1e-4, d + config.depth_noise_std * gauss(rng));
    }
    for (const SplatObject& obj : objects) {
      const auto id = static_cast<std::uint8_t>(obj.model->object_id);
      frame.annotations.push_back({obj.model->object_id, obj.pose, BinaryMask::from_label(frame.labels, id)});
    }
    frame.validate();
    return frame;
  }
  throw GenerationError("generate_scene: no valid placement after " +
                        std::to_string(config.max_retries) + " attempts");
}

std::filesystem::path frame_dir(const std::filesystem::path& root, int frame_id) {
  char name[16];
  std::snprintf(name, sizeof(name), "%06d", frame_id);
  return root / "frames" / name;
}

void write_frame(const RgbdFrame& frame, const std::filesystem::path& dir) {
  frame.validate();
  std::filesystem::create_directories(dir);
  const int h = frame.depth.height(), w = frame.depth.width();
  cv::Mat color(h, w, CV_8UC3), depth(h, w, CV_16UC1), label(h, w, CV_8UC1);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const Rgb px = frame.color(r, c);
      color.at<cv::Vec3b>(r, c) = {px.b, px.g, px.r};
      const long mm = std::lround(frame.depth(r, c) * 1000.0);
      if (mm > 65535) throw InvalidArgument("write_frame: depth exceeds 65.535 m");
      depth.at<std::uint16_t>(r, c) = static_cast<std::uint16_t>(mm);
      label.at<std::uint8_t>(r, c) = frame.labels.empty() ? 0 : frame.labels(r, c);
    }
  }
  // annotation masks are the label map; keep them consistent when absent
  if (frame.labels.empty()) {
    for (const auto& a : frame.annotations) {
      for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
          if (a.mask(r, c)) label.at<std::uint8_t>(r, c) = static_cast<std::uint8_t>(a.object_id);
        }
      }
    }
  }
  if (!cv::imwrite((dir / "color.png").string(), color) ||
      !cv::imwrite((dir / "depth.png").string(), depth) ||
      !cv::imwrite((dir / "label.png").string(), label)) {
    throw Error("write_frame: cannot write images to " + dir.string());
  }
  nlohmann::json meta;
  meta["frame_id"] = frame.frame_id;
  const auto& k = frame.intrinsics;
  meta["intrinsics"] = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx},
                        {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
  meta["objects"] = nlohmann::json::array();
  for (const auto& a : frame.annotations) {
    const auto& q = a.pose.rotation();
    const auto& t = a.pose.translation();
    meta["objects"].push_back({{"object_id", a.object_id},
                               {"quat_wxyz", {q.w(), q.x(), q.y(), q.z()}},
                               {"translation_m", {t.x(), t.y(), t.z()}}});
  }
  write_json(dir / "meta.json", meta);
}

RgbdFrame load_frame(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ParseError("missing frame directory " + dir.string());
  const auto meta_path = dir / "meta.json";
  const nlohmann::json meta = read_json(meta_path);
  RgbdFrame frame;
  try {
    frame.frame_id = meta.at("frame_id").get<int>();
    const auto& k = meta.at("intrinsics");
    frame.intrinsics = {k.at("fx").get<double>(), k.at("fy").get<double>(),
                        k.at("cx").get<double>(), k.at("cy").get<double>(),
                        k.at("width").get<int>(),  k.at("height").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(meta_path.string() + ": " + e.what());
  }

  auto read_image = [&](const char* name, int type) {
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) throw ParseError("missing file " + path.string());
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty() || m.type() != type) throw ParseError(path.string() + ": unexpected image format");
    if (m.rows != frame.intrinsics.height || m.cols != frame.intrinsics.width) {
      throw ParseError(path.string() + ": image size does not match intrinsics");
    }
    return m;
  };
  const cv::Mat color = read_image("color.png", CV_8UC3);
  const cv::Mat depth = read_image("depth.png", CV_16UC1);
  const cv::Mat label = read_image("label.png", CV_8UC1);
  const int h = color.rows, w = color.cols;
  frame.color = ColorImage(h, w);
  frame.depth = DepthImage(h, w);
  frame.labels = LabelImage(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const cv::Vec3b px = color.at<cv::Vec3b>(r, c);
      frame.color(r, c) = {px[2], px[1], px[0]};
      frame.depth(r, c) = depth.at<std::uint16_t>(r, c) / 1000.0;
      frame.labels(r, c) = label.at<std::uint8_t>(r, c);
    }
  }
  try {
    for (const auto& o : meta.at("objects")) {
      const auto& q = o.at("quat_wxyz");
      const auto& t = o.at("translation_m");
      Annotation a;
      a.object_id = o.at("object_id").get<int>();
      a.pose = Pose(Eigen::Quaterniond(q.at(0).get<double>(), q.at(1).get<double>(),
                                       q.at(2).get<double>(), q.at(3).get<double>()),
                    Eigen::Vector3d(t.at(0).get<double>(), t.at(1).get<double>(),
                                    t.at(2).get<double>()));
      a.mask = BinaryMask::from_label(frame.labels, static_cast<std::uint8_t>(a.object_id));
      frame.annotations.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(meta_path.string() + ": objects: " + e.what());
  } catch (const InvalidArgument& e) {
    throw ParseError(meta_path.string() + ": " + e.what());
  }
  try {
    frame.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(dir.string() + ": " + e.what());
  }
  return frame;
}

void write_catalog(const std::filesystem::path& root, const std::vector<ObjectModel>& models) {
  for (const auto& m : models) write_model(root / "models", m);
}

ModelCatalog load_catalog(const std::filesystem::path& root) {
  const auto dir = root / "models";
  if (!std::filesystem::is_directory(dir)) throw ParseError("missing models directory " + dir.string());
  ModelCatalog catalog;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    const std::string suffix = ".meta.json";
    if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) {
      continue;
    }
    int id = 0;
    try {
      id = std::stoi(name.substr(0, name.size() - suffix.size()));
    } catch (const std::exception&) {
      throw ParseError("unexpected model file " + entry.path().string());
    }
    catalog.emplace(id, load_model(dir, id));
  }
  if (catalog.empty()) throw ParseError("no models in " + dir.string());
  return catalog;
}

std::vector<int> list_frames(const std::filesystem::path& root) {
  const auto dir = root / "frames";
  std::vector<int> ids;
  if (!std::filesystem::is_directory(dir)) return ids;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.empty() || !std::all_of(name.begin(), name.end(), ::isdigit)) continue;
    ids.push_back(std::stoi(name));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

SplitManifest split_frames(std::vector<int> frame_ids, double train_fraction, std::uint64_t seed) {
  if (frame_ids.size() < 2) throw InvalidArgument("make_splits: need at least 2 frames");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw InvalidArgument("make_splits: train fraction must be in (0, 1)");
  }
  std::sort(frame_ids.begin(), frame_ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(frame_ids.begin(), frame_ids.end(), rng);
  const auto n = static_cast<long>(frame_ids.size());
  const long n_train = std::clamp(std::lround(train_fraction * static_cast<double>(n)), 1L, n - 1);
  SplitManifest m;
  m.train.assign(frame_ids.begin(), frame_ids.begin() + n_train);
  m.test.assign(frame_ids.begin() + n_train, frame_ids.end());
  std::sort(m.train.begin(), m.train.end());
  std::sort(m.test.begin(), m.test.end());
  return m;
}

SplitManifest make_splits(const std::filesystem::path& root, double train_fraction,
                          std::uint64_t seed) {
  SplitManifest m = split_frames(list_frames(root), train_fraction, seed);
  std::filesystem::create_directories(root / "splits");
  write_json(root / "splits" / "train.json", {{"name", "train"}, {"frame_ids", m.train}});
  write_json(root / "splits" / "test.json", {{"name", "test"}, {"frame_ids", m.test}});
  return m;
}

std::vector<int> load_split(const std::filesystem::path& root, const std::string& name) {
  const auto path = root / "splits" / (name + ".json");
  const nlohmann::json j = read_json(path);
  try {
    return j.at("frame_ids").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<RgbdFrame> load_frames(const std::filesystem::path& root, const std::vector<int>& ids) {
  std::vector<RgbdFrame> frames;
  frames.reserve(ids.size());
  for (int id : ids) frames.push_back(load_frame(frame_dir(root, id)));
  return frames;
}

}  // namespace maskpose
