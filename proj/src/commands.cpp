#include "maskpose/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

#include "maskpose/errors.hpp"
#include "maskpose/pipeline.hpp"
#include "maskpose/plot.hpp"

namespace maskpose {

namespace fs = std::filesystem;

namespace {

template <class Config, class Parse>
Config stage_config(const nlohmann::json& j, const char* key, Config defaults, std::uint64_t seed, Parse parse) {
  defaults.seed = seed;
  if (!j.contains(key)) return defaults;
  return parse(j.at(key), defaults);
}

void require_dataset(const RunConfig& config) {
  for (const char* split : {"train", "test"}) {
    const fs::path p = config.dataset_root / "splits" / (std::string(split) + ".json");
    if (!fs::exists(p)) {
      throw MissingPrerequisite("dataset split " + p.string() + " not found; run `generate` first");
    }
  }
}

fs::path require_checkpoint(const RunConfig& config, const std::string& stage, const std::string& producer) {
  const fs::path p = checkpoint_path(config, stage);
  if (!fs::exists(p)) {
    throw MissingPrerequisite(stage + " checkpoint " + p.string() + " not found; run `train --stage " + producer +
                              "` first");
  }
  return p;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

/// CSV training log written row by row so an interrupted run keeps its history.
class CsvLog {
 public:
  CsvLog(const fs::path& path, const std::string& header) : out_(path, std::ios::binary) {
    if (!out_) throw InvalidArgument("cannot write " + path.string());
    out_ << header << '\n';
  }
  void row(int epoch, double a, double b) {
    out_ << epoch << ',' << format_double(a) << ',' << format_double(b) << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw InvalidArgument("cannot write " + path.string());
}

ModelCatalog load_models(const RunConfig& config) { return load_catalog(config.dataset_root); }

/// ADD-S accuracy curves: all instances first, then one per object id.
std::vector<CurveSeries> curve_series(std::span<const PoseErrorRecord> records, const ModelCatalog& models) {
  std::map<int, std::vector<double>> per_object;
  std::vector<double> pooled;
  for (const auto& r : records) {
    if (!models.contains(r.object_id)) throw DataMismatch("record for unknown object " + std::to_string(r.object_id));
    per_object[r.object_id].push_back(r.add_s_error);
    pooled.push_back(r.add_s_error);
  }
  std::vector<CurveSeries> series{{"all", accuracy_curve(pooled)}};
  for (const auto& [id, errors] : per_object) series.push_back({"object_" + std::to_string(id), accuracy_curve(errors)});
  return series;
}

}  // namespace

void RunConfig::validate() const {
  if (frame_count < 1) throw InvalidArgument("frame_count must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InvalidArgument("train_fraction must be in (0, 1)");
  scene.validate();
  segmentation.validate();
  fusion.validate();
  refiner.validate();
  int max_id = 0;
  for (const auto& m : scene.catalog) max_id = std::max(max_id, m.object_id);
  if (segmentation.num_classes <= max_id) {
    throw InvalidArgument("segmentation.num_classes must exceed the largest object id (" + std::to_string(max_id) +
                          ")");
  }
  if (split.empty()) throw InvalidArgument("split must not be empty");
}

RunConfig run_config_from_json(const nlohmann::json& j, std::optional<std::uint64_t> seed_override) {
  if (!j.is_object()) throw InvalidArgument("configuration must be a JSON object");
  RunConfig c;
  try {
    c.dataset_root = j.value("dataset_root", c.dataset_root.string());
    c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir.string());
    c.output_dir = j.value("output_dir", c.output_dir.string());
    c.seed = seed_override ? *seed_override : j.value("seed", c.seed);
    c.frame_count = j.value("frame_count", c.frame_count);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.scene = j.contains("scene") ? scene_config_from_json(j.at("scene")) : SceneConfig{};
    if (!j.contains("scene") || !j.at("scene").contains("seed")) c.scene.seed = c.seed;
    c.segmentation = stage_config(j, "segmentation", SegConfig{}, c.seed, seg_config_from_json);
    c.fusion = stage_config(j, "fusion", FusionConfig{}, c.seed, fusion_config_from_json);
    c.refiner = stage_config(j, "refiner", RefinerConfig{}, c.seed, refiner_config_from_json);
    c.use_gt_masks = j.value("use_gt_masks", c.use_gt_masks);
    c.refine = j.value("refine", c.refine);
    c.split = j.value("split", c.split);
    c.deterministic = j.value("deterministic", c.deterministic);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("configuration: ") + e.what());
  } catch (const ParseError& e) {
    throw InvalidArgument(std::string("configuration: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json run_config_to_json(const RunConfig& c) {
  return {{"dataset_root", c.dataset_root.string()},
          {"checkpoint_dir", c.checkpoint_dir.string()},
          {"output_dir", c.output_dir.string()},
          {"seed", c.seed},
          {"frame_count", c.frame_count},
          {"train_fraction", c.train_fraction},
          {"scene", scene_config_to_json(c.scene)},
          {"segmentation", seg_config_to_json(c.segmentation)},
          {"fusion", fusion_config_to_json(c.fusion)},
          {"refiner", refiner_config_to_json(c.refiner)},
          {"use_gt_masks", c.use_gt_masks},
          {"refine", c.refine},
          {"split", c.split},
          {"deterministic", c.deterministic}};
}

RunConfig load_run_config(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw MissingPrerequisite("configuration file " + path.string() + " not found");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
  return run_config_from_json(j, seed_override);
}

fs::path checkpoint_path(const RunConfig& config, const std::string& stage) {
  if (stage == "seg") return config.checkpoint_dir / "seg.ckpt";
  if (stage == "pose") return config.checkpoint_dir / "pose.ckpt";
  if (stage == "refine") return config.checkpoint_dir / "refiner.ckpt";
  throw InvalidArgument("unknown stage '" + stage + "' (expected seg, pose or refine)");
}

fs::path training_log_path(const RunConfig& config, const std::string& stage) {
  return fs::path(checkpoint_path(config, stage)).replace_extension(".log.csv");
}

fs::path predictions_path(const RunConfig& config, const std::string& split) {
  return config.output_dir / ("predictions_" + split + ".jsonl");
}

fs::path latency_path(const fs::path& predictions) {
  return fs::path(predictions).replace_extension(".latency.jsonl");
}

void cmd_generate(const RunConfig& config, int count, std::ostream& log) {
  if (count < 1) throw InvalidArgument("generate: frame count must be >= 1, got " + std::to_string(count));
  const fs::path frames = config.dataset_root / "frames";
  if (fs::exists(frames) && !fs::is_empty(frames)) {
    throw InvalidArgument("generate: " + frames.string() + " already holds frames; choose an empty dataset_root");
  }
  fs::create_directories(frames);
  write_catalog(config.dataset_root, config.scene.catalog);
  for (int i = 0; i < count; ++i) {
    RgbdFrame f = generate_scene(config.scene, static_cast<std::uint64_t>(i));
    f.frame_id = i;
    write_frame(f, frame_dir(config.dataset_root, i));
  }
  const SplitManifest m = make_splits(config.dataset_root, config.train_fraction, config.seed);
  log << "generated " << count << " frames in " << config.dataset_root.string() << " (train " << m.train.size()
      << ", test " << m.test.size() << ")\n";
}

void cmd_train(const RunConfig& config, const std::string& stage, std::ostream& log) {
  const fs::path ckpt = checkpoint_path(config, stage);
  require_dataset(config);
  fs::path pose_ckpt;
  if (stage == "refine") pose_ckpt = require_checkpoint(config, "pose", "pose");
  fs::create_directories(config.checkpoint_dir);

  const std::vector<RgbdFrame> train = load_frames(config.dataset_root, load_split(config.dataset_root, "train"));
  if (train.empty()) throw DataMismatch("train split is empty");
  const fs::path log_path = training_log_path(config, stage);

  if (stage == "seg") {
    const auto test = load_frames(config.dataset_root, load_split(config.dataset_root, "test"));
    CsvLog csv(log_path, "epoch,train_loss,heldout_miou");
    SegTrainResult r = seg_train(train, test, config.segmentation, [&](const SegEpochLog& e) {
      csv.row(e.epoch, e.train_loss, e.heldout_miou);
      log << "seg epoch " << e.epoch << " loss " << format_double(e.train_loss) << " held-out mIoU "
          << format_double(e.heldout_miou) << '\n';
    });
    r.net.save(ckpt, {{"final_train_loss", r.history.empty() ? r.initial_loss : r.history.back().train_loss}});
  } else if (stage == "pose") {
    const auto test = load_frames(config.dataset_root, load_split(config.dataset_root, "test"));
    CsvLog csv(log_path, "epoch,train_loss,heldout_add_mm");
    PoseTrainResult r = pose_train(train, test, load_models(config), config.fusion, [&](const PoseEpochLog& e) {
      csv.row(e.epoch, e.train_loss, e.heldout_add_mm);
      log << "pose epoch " << e.epoch << " loss " << format_double(e.train_loss) << " held-out ADD "
          << format_double(e.heldout_add_mm) << " mm\n";
    });
    r.net.save(ckpt, {{"final_train_loss", r.history.empty() ? r.initial_loss : r.history.back().train_loss}});
  } else {
    auto [main, header] = PoseNet::load(pose_ckpt);
    if (!header.contains("final_train_loss")) throw ParseError(pose_ckpt.string() + ": missing final_train_loss");
    const double main_loss = header.at("final_train_loss").get<double>();
    CsvLog csv(log_path, "epoch,train_loss,train_add_mm");
    RefinerTrainResult r = refiner_train(train, {}, load_models(config), main, main_loss, config.refiner,
                                         [&](const RefinerEpochLog& e) {
                                           csv.row(e.epoch, e.train_loss, e.heldout_add_mm);
                                           log << "refine epoch " << e.epoch << " loss "
                                               << format_double(e.train_loss) << " train ADD "
                                               << format_double(e.heldout_add_mm) << " mm\n";
                                         });
    log << "refiner keeps epoch " << r.best_epoch << " (unrefined ADD " << format_double(r.baseline_add_mm)
        << " mm)\n";
    r.net.save(ckpt, {{"best_epoch", r.best_epoch}, {"baseline_add_mm", r.baseline_add_mm}});
  }
  log << "wrote " << ckpt.string() << " and " << log_path.string() << '\n';
}

fs::path cmd_infer(const RunConfig& config, const std::string& split, std::ostream& log) {
  require_dataset(config);
  std::optional<SegNet> seg;
  std::optional<RefinerNet> refiner;
  const PoseNet pose = PoseNet::load(require_checkpoint(config, "pose", "pose")).first;
  if (!config.use_gt_masks) seg.emplace(SegNet::load(require_checkpoint(config, "seg", "seg")));
  if (config.refine) refiner.emplace(RefinerNet::load(require_checkpoint(config, "refine", "refine")));
  const PipelineModels models{seg ? &*seg : nullptr, &pose, refiner ? &*refiner : nullptr};
  const InferenceOptions options{config.use_gt_masks, config.refine, config.seed};

  std::vector<FramePrediction> all;
  int skipped = 0;
  const std::vector<int> ids = load_split(config.dataset_root, split);
  for (int id : ids) {
    RgbdFrame frame;
    try {
      frame = load_frame(frame_dir(config.dataset_root, id));
    } catch (const ParseError& e) {
      log << "warning: skipping frame " << id << ": " << e.what() << '\n';
      ++skipped;
      continue;
    }
    const auto preds = infer_frame(models, frame, options);
    all.insert(all.end(), preds.begin(), preds.end());
  }

  fs::create_directories(config.output_dir);
  const fs::path out = predictions_path(config, split);
  write_predictions(out, all, !config.deterministic);
  if (config.deterministic) {
    std::ofstream lat(latency_path(out), std::ios::binary);
    for (const FramePrediction& p : all) {
      nlohmann::json j = prediction_to_json(p);
      lat << nlohmann::json{{"frame_id", p.frame_id}, {"object_id", p.prediction.object_id},
                            {"latency_ms", j.at("latency_ms")}}
                 .dump()
          << '\n';
    }
  }

  StageLatency mean;
  for (const FramePrediction& p : all) {
    if (p.latency.segmentation_ms) mean.segmentation_ms = mean.segmentation_ms.value_or(0.0) + *p.latency.segmentation_ms;
    mean.cropping_ms += p.latency.cropping_ms;
    mean.fusion_ms += p.latency.fusion_ms;
    if (p.latency.refinement_ms) mean.refinement_ms = mean.refinement_ms.value_or(0.0) + *p.latency.refinement_ms;
  }
  log << "wrote " << all.size() << " predictions for " << ids.size() - skipped << " frames to " << out.string();
  if (skipped) log << " (" << skipped << " frames skipped)";
  log << '\n';
  if (!all.empty()) {
    const double n = static_cast<double>(all.size());
    log << "mean latency per object (ms):";
    if (mean.segmentation_ms) log << " segmentation " << format_double(*mean.segmentation_ms / n);
    log << " cropping " << format_double(mean.cropping_ms / n) << " fusion " << format_double(mean.fusion_ms / n);
    if (mean.refinement_ms) log << " refinement " << format_double(*mean.refinement_ms / n);
    log << " total " << format_double(mean.total_ms() / n) << '\n';
  }
  return out;
}

std::string curve_csv(std::span<const PoseErrorRecord> records, const ModelCatalog& models) {
  const std::vector<CurveSeries> series = curve_series(records, models);
  std::string out = "threshold_m";
  for (const auto& s : series) out += ',' + s.label;
  out += '\n';
  for (std::size_t k = 0; k < series.front().points.size(); ++k) {
    out += format_double(series.front().points[k].threshold);
    for (const auto& s : series) out += ',' + format_double(s.points[k].accuracy);
    out += '\n';
  }
  return out;
}

MetricsReport cmd_eval(const RunConfig& config, const fs::path& predictions, const std::string& split,
                       const fs::path& out_dir, std::ostream& log) {
  require_dataset(config);
  const std::vector<FramePrediction> preds = read_predictions(predictions);
  if (preds.empty()) throw DataMismatch("no predictions in " + predictions.string());
  const ModelCatalog models = load_models(config);
  const auto frames = load_frames(config.dataset_root, load_split(config.dataset_root, split));
  const ScoredPredictions scored = score_predictions(preds, frames, models);
  const MetricsReport report = build_report(scored.records, models);

  fs::create_directories(out_dir);
  write_text(out_dir / "report.json", report_to_json(report).dump(2) + "\n");
  write_text(out_dir / "report.csv", report_to_csv(report));
  write_text(out_dir / "curve.csv", curve_csv(scored.records, models));

  render_curves(out_dir / "curve.png", curve_series(scored.records, models), "ADD-S accuracy vs threshold");

  int failed = 0;
  for (const auto& r : scored.records) failed += r.failed ? 1 : 0;
  log << "scored " << scored.records.size() << " instances (" << failed << " without a pose, "
      << scored.false_positives << " unmatched predictions)\n";
  for (const auto& o : report.objects) {
    log << "object " << o.object_id << ": n " << o.n << " ADD<10% " << format_double(o.add_acc_10pct) << " AUC "
        << format_double(o.auc) << " <2cm " << format_double(o.pct_below_2cm) << '\n';
  }
  log << "average: ADD<10% " << format_double(report.average.add_acc_10pct) << " AUC "
      << format_double(report.average.auc) << " <2cm " << format_double(report.average.pct_below_2cm) << '\n';
  log << "wrote report.json, report.csv, curve.csv and curve.png to " << out_dir.string() << '\n';
  return report;
}

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const InvalidArgument*>(&error)) return 2;
  if (dynamic_cast<const MissingPrerequisite*>(&error)) return 3;
  if (dynamic_cast<const Error*>(&error) || dynamic_cast<const fs::filesystem_error*>(&error)) return 4;
  return 1;
}

}  // namespace maskpose
