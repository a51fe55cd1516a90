#include <doctest.h>

#include <random>

#include "fixtures.hpp"
#include "maskpose/datasets.hpp"
#include "maskpose/errors.hpp"
#include "maskpose/refiner.hpp"

using namespace maskpose;
using nn::Tensor;

namespace {

FusionConfig tiny_fusion() {
  FusionConfig c;
  c.n_points = 24;
  c.d_color = 6;
  c.d_geom = 6;
  c.d_mask = 4;
  c.d_fused = 10;
  c.extractor_widths = {4};
  c.head_widths = {12};
  c.loss_points = 40;
  c.seed = 2;
  return c;
}

RefinerConfig tiny_refiner() {
  RefinerConfig c;
  c.hidden = 12;
  c.seed = 4;
  return c;
}

RgbdFrame scene(std::uint64_t seed) {
  SceneConfig sc;
  sc.seed = 8;
  RgbdFrame f = generate_scene(sc, seed);
  f.frame_id = static_cast<int>(seed);
  return f;
}

RefineInput input_for(const PoseNet& net, const RgbdFrame& f) {
  const Annotation& a = f.annotations.at(0);
  const Observation obs = make_observation(f, a.object_id, a.mask, net.config().n_points, 3);
  nn::Graph g(false);
  return make_refine_input(obs, net.forward(g, obs));
}

void randomize(RefinerNet& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 0.2);
  for (auto& e : net.params().entries()) {
    for (double& v : e.second->value.values()) v = d(rng);
  }
}

}  // namespace

TEST_CASE("a zero-initialized refiner leaves the pose unchanged") {
  const PoseNet main(tiny_fusion());
  const RefinerNet net(tiny_refiner(), main.config().d_color, main.config().d_mask);
  const RgbdFrame f = scene(1);
  const RefineInput in = input_for(main, f);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const PosePrediction start{in.object_id, testing::random_pose(rng), 0.7, false};
    const PosePrediction out = refine(net, start, in, 3);
    CHECK(out.refined);
    CHECK(out.confidence == 0.7);
    CHECK(out.pose.rotation().coeffs() == start.pose.rotation().coeffs());
    CHECK(out.pose.translation() == start.pose.translation());
  }
  const PosePrediction perfect{in.object_id, f.annotations[0].pose, 1.0, false};
  CHECK(refine(net, perfect, in, 2).pose.translation() == perfect.pose.translation());
}

TEST_CASE("the camera-side residual equals the object-side correction") {
  const PoseNet main(tiny_fusion());
  RefinerNet net(tiny_refiner(), main.config().d_color, main.config().d_mask);
  randomize(net, 11);
  const RefineInput in = input_for(main, scene(2));
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose current = testing::random_pose(rng);
    nn::Graph g(false);
    const Pose delta = delta_pose(net.forward(g, current, in));
    const Pose expect = compose(current, delta);
    const Pose got = compose(refine_step(net, current, in), current);
    CHECK(rotation_angle_between(got, expect) < 1e-9);
    CHECK((got.translation() - expect.translation()).norm() < 1e-9);
  }
  const PosePrediction start{in.object_id, testing::random_pose(rng), 0.5, false};
  const PosePrediction once = refine(net, start, in, 1);
  const PosePrediction twice = refine(net, start, in, 2);
  const PosePrediction again = refine(net, once, in, 1);
  CHECK(rotation_angle_between(twice.pose, again.pose) < 1e-9);
  CHECK((twice.pose.translation() - again.pose.translation()).norm() < 1e-9);
  CHECK_THROWS_AS(refine(net, start, in, 0), InvalidArgument);
}

TEST_CASE("refiner input validation") {
  const PoseNet main(tiny_fusion());
  const RefinerNet net(tiny_refiner(), main.config().d_color, main.config().d_mask);
  RefineInput in = input_for(main, scene(3));
  nn::Graph g(false);
  RefineInput wrong = in;
  wrong.color_emb = Tensor({main.config().d_color + 1, static_cast<int>(in.points.rows())});
  CHECK_THROWS_AS(net.forward(g, Pose{}, wrong), InvalidArgument);
  RefineInput empty = in;
  empty.points.resize(0, 3);
  CHECK_THROWS_AS(net.forward(g, Pose{}, empty), InvalidArgument);
  CHECK_THROWS_AS(RefinerNet(tiny_refiner(), 0, 4), InvalidArgument);
}

TEST_CASE("refiner checkpoint and config round trips") {
  const PoseNet main(tiny_fusion());
  RefinerNet net(tiny_refiner(), main.config().d_color, main.config().d_mask);
  randomize(net, 12);
  net.params().quantize_to_float();
  const auto path = testing::scratch_dir("refiner") / "refiner.ckpt";
  net.save(path);
  const RefinerNet loaded = RefinerNet::load(path);
  CHECK(loaded.d_color() == net.d_color());
  CHECK(loaded.d_mask() == net.d_mask());
  for (std::size_t i = 0; i < net.params().entries().size(); ++i) {
    CHECK(loaded.params().entries()[i].second->value.values() == net.params().entries()[i].second->value.values());
  }
  CHECK_THROWS_AS(PoseNet::load(path), ParseError);

  RefinerConfig c = tiny_refiner();
  c.perturb_rotation = 0.1;
  c.optimizer = {"adam", 1e-4};
  CHECK(refiner_config_to_json(refiner_config_from_json(refiner_config_to_json(c))) == refiner_config_to_json(c));
  CHECK_THROWS_AS(refiner_config_from_json({{"iterations", 0}}), InvalidArgument);
}

TEST_CASE("refiner training waits for the main network") {
  const PoseNet main(tiny_fusion());
  const std::vector<RgbdFrame> frames{scene(4)};
  ModelCatalog models;
  for (const ObjectModel& o : builtin_catalog()) models[o.object_id] = o;
  const RefinerConfig c = tiny_refiner();
  CHECK_THROWS_AS(refiner_train(frames, {}, models, main, c.start_threshold, c), MissingPrerequisite);
  CHECK_THROWS_AS(refiner_train(frames, {}, models, main, 1.0, c), MissingPrerequisite);
}

TEST_CASE("refiner training never worsens the scored set") {
  const PoseNet main(tiny_fusion());
  const std::vector<RgbdFrame> frames{scene(5), scene(6)};
  ModelCatalog models;
  for (const ObjectModel& o : builtin_catalog()) models[o.object_id] = o;
  RefinerConfig c = tiny_refiner();
  c.epochs = 3;
  c.optimizer = {"adam", 1e-3};
  int calls = 0;
  const RefinerTrainResult r = refiner_train(frames, {}, models, main, 0.0, c, [&](const RefinerEpochLog&) { ++calls; });
  CHECK(calls == 3);
  CHECK(r.history.size() == 3);
  CHECK(r.best_epoch >= 0);
  CHECK(r.best_epoch <= 3);
  const double kept = r.best_epoch == 0 ? r.baseline_add_mm : r.history[static_cast<std::size_t>(r.best_epoch - 1)].heldout_add_mm;
  CHECK(kept <= r.baseline_add_mm + 1e-3);
  const RefinerTrainResult again = refiner_train(frames, {}, models, main, 0.0, c);
  CHECK(again.best_epoch == r.best_epoch);
  for (std::size_t i = 0; i < r.history.size(); ++i) CHECK(again.history[i].train_loss == r.history[i].train_loss);
}
