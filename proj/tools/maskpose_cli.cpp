#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "maskpose/commands.hpp"

using namespace maskpose;

int main(int argc, char** argv) {
  CLI::App app{"Mask-based 6D pose estimation: data generation, training, inference and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  app.add_option("--config", config_path, "JSON run configuration (defaults are used for missing keys)");
  app.add_option("--seed", seed, "Global seed, inherited by stage configs without their own");
  app.add_flag("--deterministic", deterministic, "Byte-identical outputs; latencies go to a sidecar file");

  auto* generate = app.add_subcommand("generate", "Write a synthetic RGB-D dataset with splits");
  std::optional<int> count;
  generate->add_option("--count", count, "Number of frames (default: frame_count from the config)");

  auto* train = app.add_subcommand("train", "Train one stage");
  std::string stage;
  train->add_option("--stage", stage, "seg, pose or refine")->required()->check(CLI::IsMember({"seg", "pose", "refine"}));

  std::optional<std::string> split;
  auto* infer = app.add_subcommand("infer", "Run the pipeline over a split and write predictions");
  bool use_gt_masks = false, no_refine = false;
  infer->add_option("--split", split, "Split name (default: split from the config)");
  infer->add_flag("--use-gt-masks", use_gt_masks, "Crop with annotated masks instead of segmenting");
  infer->add_flag("--no-refine", no_refine, "Skip iterative refinement");

  auto* eval = app.add_subcommand("eval", "Score predictions and write reports and curves");
  std::string predictions, out_dir;
  eval->add_option("--split", split, "Split name (default: split from the config)");
  eval->add_option("--predictions", predictions, "Predictions file (default: the infer output for the split)");
  eval->add_option("--out", out_dir, "Report directory (default: <output_dir>/eval_<split>)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    RunConfig config = config_path.empty() ? run_config_from_json(nlohmann::json::object(), seed)
                                           : load_run_config(config_path, seed);
    config.deterministic = config.deterministic || deterministic;
    if (use_gt_masks) config.use_gt_masks = true;
    if (no_refine) config.refine = false;
    const std::string s = split.value_or(config.split);

    if (generate->parsed()) {
      cmd_generate(config, count.value_or(config.frame_count), std::cout);
    } else if (train->parsed()) {
      cmd_train(config, stage, std::cout);
    } else if (infer->parsed()) {
      cmd_infer(config, s, std::cout);
    } else if (eval->parsed()) {
      cmd_eval(config, predictions.empty() ? predictions_path(config, s) : std::filesystem::path(predictions), s,
               out_dir.empty() ? config.output_dir / ("eval_" + s) : std::filesystem::path(out_dir), std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
