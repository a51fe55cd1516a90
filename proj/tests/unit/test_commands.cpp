#include <doctest.h>

#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "maskpose/commands.hpp"
#include "maskpose/errors.hpp"
#include "maskpose/pipeline.hpp"

using namespace maskpose;
namespace fs = std::filesystem;

namespace {

nlohmann::json tiny_json(const fs::path& root) {
  return {{"dataset_root", (root / "data").string()},
          {"checkpoint_dir", (root / "ckpt").string()},
          {"output_dir", (root / "out").string()},
          {"seed", 3},
          {"train_fraction", 0.75},
          {"segmentation", {{"widths", {4, 4}}, {"epochs", 2}, {"batch_size", 2}, {"min_pixels", 0}}},
          {"fusion",
           {{"n_points", 16},
            {"d_color", 4},
            {"d_geom", 4},
            {"d_mask", 4},
            {"d_fused", 8},
            {"extractor_widths", {4}},
            {"head_widths", {8}},
            {"loss_points", 30},
            {"epochs", 2}}},
          {"refiner", {{"hidden", 8}, {"epochs", 2}, {"start_threshold", 100.0}}},
          {"use_gt_masks", true},
          {"deterministic", true}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// generate, train all stages, infer and eval; returns the config used.
RunConfig full_flow(const fs::path& root) {
  const RunConfig c = run_config_from_json(tiny_json(root));
  std::ostringstream log;
  cmd_generate(c, 8, log);
  for (const char* stage : {"seg", "pose", "refine"}) cmd_train(c, stage, log);
  const fs::path preds = cmd_infer(c, "test", log);
  cmd_eval(c, preds, "test", c.output_dir / "eval", log);
  return c;
}

}  // namespace

TEST_CASE("configuration parsing and seed inheritance") {
  const RunConfig empty = run_config_from_json(nlohmann::json::object());
  CHECK(empty.dataset_root == "data");
  CHECK(empty.frame_count == 250);
  CHECK(empty.split == "test");

  nlohmann::json j = {{"seed", 9}, {"fusion", {{"seed", 4}}}};
  const RunConfig c = run_config_from_json(j);
  CHECK(c.seed == 9);
  CHECK(c.scene.seed == 9);
  CHECK(c.segmentation.seed == 9);
  CHECK(c.refiner.seed == 9);
  CHECK(c.fusion.seed == 4);
  const RunConfig o = run_config_from_json(j, 12);
  CHECK(o.seed == 12);
  CHECK(o.segmentation.seed == 12);
  CHECK(o.fusion.seed == 4);

  const RunConfig back = run_config_from_json(run_config_to_json(c));
  CHECK(run_config_to_json(back) == run_config_to_json(c));

  CHECK_THROWS_AS(run_config_from_json(nlohmann::json::array()), InvalidArgument);
  CHECK_THROWS_AS(run_config_from_json({{"train_fraction", 1.5}}), InvalidArgument);
  CHECK_THROWS_AS(run_config_from_json({{"segmentation", {{"num_classes", 2}}}}), InvalidArgument);
  CHECK_THROWS_AS(run_config_from_json({{"fusion", {{"n_points", "x"}}}}), InvalidArgument);
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), MissingPrerequisite);
}

TEST_CASE("paths and exit codes") {
  RunConfig c;
  c.checkpoint_dir = "ck";
  c.output_dir = "out";
  CHECK(checkpoint_path(c, "refine") == fs::path("ck/refiner.ckpt"));
  CHECK(training_log_path(c, "pose") == fs::path("ck/pose.log.csv"));
  CHECK(predictions_path(c, "test") == fs::path("out/predictions_test.jsonl"));
  CHECK(latency_path("out/predictions_test.jsonl") == fs::path("out/predictions_test.latency.jsonl"));
  CHECK_THROWS_AS(checkpoint_path(c, "other"), InvalidArgument);

  CHECK(exit_code_for(InvalidArgument("x")) == 2);
  CHECK(exit_code_for(MissingPrerequisite("x")) == 3);
  CHECK(exit_code_for(ParseError("x")) == 4);
  CHECK(exit_code_for(DataMismatch("x")) == 4);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("commands report missing prerequisites") {
  const fs::path root = testing::scratch_dir("cmd_missing");
  const RunConfig c = run_config_from_json(tiny_json(root));
  std::ostringstream log;
  CHECK_THROWS_AS(cmd_train(c, "seg", log), MissingPrerequisite);
  CHECK_THROWS_AS(cmd_generate(c, 0, log), InvalidArgument);
  cmd_generate(c, 4, log);
  CHECK_THROWS_AS(cmd_generate(c, 4, log), InvalidArgument);
  CHECK_THROWS_AS(cmd_train(c, "refine", log), MissingPrerequisite);
  CHECK_THROWS_AS(cmd_infer(c, "test", log), MissingPrerequisite);
  CHECK_THROWS_AS(cmd_eval(c, c.output_dir / "none.jsonl", "test", c.output_dir, log), MissingPrerequisite);

  fs::create_directories(c.output_dir);
  std::ofstream(c.output_dir / "empty.jsonl").close();
  CHECK_THROWS_AS(cmd_eval(c, c.output_dir / "empty.jsonl", "test", c.output_dir, log), DataMismatch);
}

TEST_CASE("the full flow writes every artifact and repeats byte for byte") {
  const fs::path a = testing::scratch_dir("cmd_flow_a");
  const fs::path b = testing::scratch_dir("cmd_flow_b");
  const RunConfig ca = full_flow(a);
  const RunConfig cb = full_flow(b);

  for (const char* stage : {"seg", "pose", "refine"}) {
    CHECK(slurp(checkpoint_path(ca, stage)) == slurp(checkpoint_path(cb, stage)));
    const std::string log = slurp(training_log_path(ca, stage));
    CHECK(log == slurp(training_log_path(cb, stage)));
    CHECK(std::count(log.begin(), log.end(), '\n') == 3);
  }
  const fs::path pa = predictions_path(ca, "test");
  CHECK(slurp(pa) == slurp(predictions_path(cb, "test")));
  CHECK(slurp(pa).find("latency_ms") == std::string::npos);
  CHECK(fs::exists(latency_path(pa)));

  const fs::path eval = ca.output_dir / "eval";
  for (const char* f : {"report.json", "report.csv", "curve.csv"}) {
    CHECK(slurp(eval / f) == slurp(cb.output_dir / "eval" / f));
  }
  CHECK(fs::file_size(eval / "curve.png") > 0);
  const std::string curve = slurp(eval / "curve.csv");
  CHECK(curve.rfind("threshold_m,all", 0) == 0);
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 201);

  const MetricsReport report = report_from_json(nlohmann::json::parse(slurp(eval / "report.json")));
  int annotated = 0;
  for (const auto& f : load_frames(ca.dataset_root, load_split(ca.dataset_root, "test"))) {
    annotated += static_cast<int>(f.annotations.size());
  }
  int counted = 0;
  for (const auto& o : report.objects) counted += o.n;
  CHECK(counted == annotated);

  std::ostringstream log;
  const fs::path gt = ca.output_dir / "gt.jsonl";
  write_predictions(gt, ground_truth_predictions(load_frames(ca.dataset_root, load_split(ca.dataset_root, "test"))));
  const MetricsReport perfect = cmd_eval(ca, gt, "test", ca.output_dir / "gt_eval", log);
  CHECK(perfect.average.auc == doctest::Approx(100.0));
  CHECK_THROWS_AS(cmd_eval(ca, gt, "train", ca.output_dir / "bad", log), DataMismatch);
}
