#include "maskpose/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>
#include <set>

#include "maskpose/maskproc.hpp"

namespace maskpose {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::string join_ids(const std::vector<std::string>& items) {
  std::string s;
  const std::size_t shown = std::min<std::size_t>(items.size(), 20);
  for (std::size_t i = 0; i < shown; ++i) s += (i ? ", " : "") + items[i];
  if (items.size() > shown) s += ", ... (" + std::to_string(items.size()) + " total)";
  return s;
}

}  // namespace

std::vector<FramePrediction> infer_frame(const PipelineModels& models, const RgbdFrame& frame,
                                         const InferenceOptions& options) {
  if (models.pose == nullptr) throw InvalidArgument("infer_frame: pose network required");
  if (!options.use_gt_masks && models.seg == nullptr) {
    throw InvalidArgument("infer_frame: segmentation network required without ground-truth masks");
  }
  if (options.refine && models.refiner == nullptr) {
    throw InvalidArgument("infer_frame: refiner required when refinement is on");
  }
  const PoseNet& net = *models.pose;

  std::vector<DetectedMask> masks;
  std::optional<double> seg_ms;
  const auto t_seg = Clock::now();
  if (options.use_gt_masks) {
    for (const Annotation& a : frame.annotations) masks.push_back({a.object_id, a.mask});
  } else {
    masks = extract_masks(seg_forward(*models.seg, frame.color), models.seg->config().min_pixels, false);
    seg_ms = elapsed_ms(t_seg);
  }
  std::sort(masks.begin(), masks.end(),
            [](const DetectedMask& a, const DetectedMask& b) { return a.object_id < b.object_id; });

  std::vector<FramePrediction> out;
  for (const DetectedMask& m : masks) {
    FramePrediction rec;
    rec.frame_id = frame.frame_id;
    rec.latency.segmentation_ms = seg_ms;

    const auto t_crop = Clock::now();
    const BinaryMask filtered = options.use_gt_masks ? prepare_gt_mask(m.mask, net.config()) : filter_mask(m.mask);
    if (filtered.count() == 0) continue;
    Observation obs;
    try {
      obs = make_observation(frame, m.object_id, filtered, net.config().n_points,
                             observation_seed(options.seed, frame.frame_id, m.object_id));
    } catch (const NoValidDepth&) {
      continue;
    }
    rec.latency.cropping_ms = elapsed_ms(t_crop);

    const auto t_fuse = Clock::now();
    nn::Graph g(false);
    const FusionOutputs outputs = net.forward(g, obs);
    const DensePrediction dense = to_dense_prediction(outputs);
    rec.prediction = net.config().use_confidence ? select_pose(dense, m.object_id) : average_pose(dense, m.object_id);
    rec.latency.fusion_ms = elapsed_ms(t_fuse);

    if (options.refine) {
      const auto t_ref = Clock::now();
      rec.prediction = refine(*models.refiner, rec.prediction, make_refine_input(obs, outputs),
                              models.refiner->config().iterations);
      rec.latency.refinement_ms = elapsed_ms(t_ref);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

nlohmann::json prediction_to_json(const FramePrediction& p, bool with_latency) {
  const Eigen::Quaterniond& q = p.prediction.pose.rotation();
  const Eigen::Vector3d& t = p.prediction.pose.translation();
  nlohmann::json j = {{"frame_id", p.frame_id},
                      {"object_id", p.prediction.object_id},
                      {"quaternion_wxyz", {q.w(), q.x(), q.y(), q.z()}},
                      {"translation_m", {t.x(), t.y(), t.z()}},
                      {"confidence", p.prediction.confidence},
                      {"refined", p.prediction.refined}};
  if (with_latency) {
    nlohmann::json lat = nlohmann::json::object();
    if (p.latency.segmentation_ms) lat["segmentation"] = *p.latency.segmentation_ms;
    lat["cropping"] = p.latency.cropping_ms;
    lat["fusion"] = p.latency.fusion_ms;
    if (p.latency.refinement_ms) lat["refinement"] = *p.latency.refinement_ms;
    lat["total"] = p.latency.total_ms();
    j["latency_ms"] = lat;
  }
  return j;
}

FramePrediction prediction_from_json(const nlohmann::json& j) {
  auto field = [&](const char* name) -> const nlohmann::json& {
    if (!j.is_object() || !j.contains(name)) throw ParseError(std::string("prediction: missing field '") + name + "'");
    return j.at(name);
  };
  try {
    FramePrediction p;
    p.frame_id = field("frame_id").get<int>();
    p.prediction.object_id = field("object_id").get<int>();
    const auto q = field("quaternion_wxyz").get<std::vector<double>>();
    const auto t = field("translation_m").get<std::vector<double>>();
    if (q.size() != 4 || t.size() != 3) throw ParseError("prediction: quaternion needs 4 and translation 3 values");
    p.prediction.pose = Pose(Eigen::Quaterniond(q[0], q[1], q[2], q[3]), Eigen::Vector3d(t[0], t[1], t[2]));
    p.prediction.confidence = field("confidence").get<double>();
    p.prediction.refined = field("refined").get<bool>();
    if (j.contains("latency_ms")) {
      const auto& lat = j.at("latency_ms");
      if (lat.contains("segmentation")) p.latency.segmentation_ms = lat.at("segmentation").get<double>();
      p.latency.cropping_ms = lat.value("cropping", 0.0);
      p.latency.fusion_ms = lat.value("fusion", 0.0);
      if (lat.contains("refinement")) p.latency.refinement_ms = lat.at("refinement").get<double>();
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("prediction: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("prediction: ") + e.what());
  }
}

void write_predictions(const std::filesystem::path& path, const std::vector<FramePrediction>& predictions,
                       bool with_latency) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  for (const FramePrediction& p : predictions) out << prediction_to_json(p, with_latency).dump() << '\n';
  if (!out) throw InvalidArgument("failed writing " + path.string());
}

std::vector<FramePrediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingPrerequisite("predictions file not found: " + path.string());
  std::vector<FramePrediction> out;
  std::string line;
  for (int number = 1; std::getline(in, line); ++number) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(prediction_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

ScoredPredictions score_predictions(const std::vector<FramePrediction>& predictions,
                                    const std::vector<RgbdFrame>& frames, const ModelCatalog& models) {
  std::map<int, const RgbdFrame*> by_frame;
  for (const RgbdFrame& f : frames) by_frame[f.frame_id] = &f;

  std::vector<std::string> orphans;
  std::map<std::pair<int, int>, const FramePrediction*> by_key;
  for (const FramePrediction& p : predictions) {
    const std::string id = "(frame " + std::to_string(p.frame_id) + ", object " +
                           std::to_string(p.prediction.object_id) + ")";
    if (!by_frame.contains(p.frame_id)) {
      orphans.push_back(id + " unknown frame");
    } else if (!models.contains(p.prediction.object_id)) {
      orphans.push_back(id + " unknown object");
    } else if (!by_key.emplace(std::make_pair(p.frame_id, p.prediction.object_id), &p).second) {
      orphans.push_back(id + " repeated");
    }
  }
  if (!orphans.empty()) {
    throw DataMismatch("predictions do not match the dataset: " + join_ids(orphans));
  }

  ScoredPredictions out;
  std::set<std::pair<int, int>> matched;
  for (const auto& [frame_id, frame] : by_frame) {
    std::vector<const Annotation*> anns;
    for (const Annotation& a : frame->annotations) anns.push_back(&a);
    std::sort(anns.begin(), anns.end(), [](const Annotation* a, const Annotation* b) { return a->object_id < b->object_id; });
    for (const Annotation* a : anns) {
      const auto model = models.find(a->object_id);
      if (model == models.end()) {
        throw DataMismatch("frame " + std::to_string(frame_id) + " annotates object " +
                           std::to_string(a->object_id) + " missing from the catalog");
      }
      const auto key = std::make_pair(frame_id, a->object_id);
      const auto it = by_key.find(key);
      if (it == by_key.end()) {
        out.records.push_back(failed_record(frame_id, model->second));
      } else {
        out.records.push_back(score_pose(frame_id, model->second, a->pose, it->second->prediction.pose));
        matched.insert(key);
      }
    }
  }
  out.false_positives = static_cast<int>(by_key.size() - matched.size());
  return out;
}

std::vector<FramePrediction> ground_truth_predictions(const std::vector<RgbdFrame>& frames) {
  std::vector<FramePrediction> out;
  for (const RgbdFrame& f : frames) {
    for (const Annotation& a : f.annotations) {
      FramePrediction p;
      p.frame_id = f.frame_id;
      p.prediction = {a.object_id, a.pose, 1.0, false};
      out.push_back(p);
    }
  }
  return out;
}

}  // namespace maskpose
