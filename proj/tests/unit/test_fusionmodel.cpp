#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "maskpose/datasets.hpp"
#include "maskpose/errors.hpp"
#include "maskpose/fusionmodel.hpp"

using namespace maskpose;
using nn::Tensor;
using nn::Var;

namespace {

FusionConfig tiny_config() {
  FusionConfig c;
  c.n_points = 24;
  c.d_color = 6;
  c.d_geom = 6;
  c.d_mask = 4;
  c.d_fused = 10;
  c.extractor_widths = {4};
  c.head_widths = {12, 8};
  c.loss_points = 40;
  c.seed = 5;
  return c;
}

RgbdFrame scene(std::uint64_t seed, int objects = 1) {
  SceneConfig sc;
  sc.seed = 3;
  sc.min_objects = objects;
  sc.max_objects = objects;
  RgbdFrame f = generate_scene(sc, seed);
  f.frame_id = static_cast<int>(seed);
  return f;
}

ModelCatalog catalog() {
  ModelCatalog m;
  for (const ObjectModel& o : builtin_catalog()) m[o.object_id] = o;
  return m;
}

DensePrediction dense_from(const std::vector<Pose>& poses, const std::vector<double>& confidences) {
  DensePrediction p;
  const auto n = static_cast<Eigen::Index>(poses.size());
  p.raw_quaternions.resize(n, 4);
  p.translations.resize(n, 3);
  p.confidences.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Quaterniond& q = poses[static_cast<std::size_t>(i)].rotation();
    p.raw_quaternions.row(i) << q.w(), q.x(), q.y(), q.z();
    p.translations.row(i) = poses[static_cast<std::size_t>(i)].translation().transpose();
    p.confidences(i) = confidences[static_cast<std::size_t>(i)];
  }
  p.quaternions = p.raw_quaternions;
  return p;
}

std::vector<Pose> random_poses(std::mt19937_64& rng, int n) {
  std::vector<Pose> out;
  for (int i = 0; i < n; ++i) out.push_back(testing::random_pose(rng, 0.1));
  return out;
}

}  // namespace

TEST_CASE("pure translation error equals the offset length") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose gt = testing::random_pose(rng);
    const Eigen::Vector3d offset = testing::random_points(rng, 1, 0.2).row(0).transpose();
    const Pose pred(gt.rotation(), gt.translation() + offset);
    const Points3 x = testing::random_points(rng, 50);
    const DensePrediction d = dense_from({pred}, {1.0});
    CHECK(std::abs(pose_loss(d, gt, x, false, 0.015, false) - offset.norm()) < 1e-9);
  }
}

TEST_CASE("confidence-weighted loss follows its closed form") {
  std::mt19937_64 rng(2);
  const Pose gt = testing::random_pose(rng);
  const Points3 x = testing::random_points(rng, 30);
  const DensePrediction d = dense_from(random_poses(rng, 3), {0.2, 0.5, 0.9});
  const Eigen::VectorXd l = pose_loss_terms(d, gt, x, false);
  double expect = 0.0;
  for (int i = 0; i < 3; ++i) expect += l(i) * d.confidences(i) - 0.015 * std::log(d.confidences(i));
  CHECK(pose_loss(d, gt, x, false, 0.015) == doctest::Approx(expect / 3).epsilon(1e-12));
  CHECK(pose_loss(d, gt, x, false, 0.015, false) == doctest::Approx(l.mean()).epsilon(1e-12));
}

TEST_CASE("pose loss gradients match central differences") {
  std::mt19937_64 rng(3);
  const ObjectModel cube = builtin_catalog()[0];
  const Points3 x = sample_model_points(cube, 60, 4);
  const Pose gt(testing::random_quaternion(rng), Eigen::Vector3d(0.02, -0.01, 0.8));
  const int n = 5;
  Tensor q = testing::random_tensor({4, n}, rng);
  Tensor t({3, n});
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) t[static_cast<std::size_t>(a * n + i)] = gt.translation()(a) + 0.03 * (rng() % 7 - 3.0) / 3.0;
  }
  Tensor c({1, n});
  for (int i = 0; i < n; ++i) c[static_cast<std::size_t>(i)] = 0.2 + 0.15 * i;
  for (bool symmetric : {false, true}) {
    for (bool use_conf : {true, false}) {
      const double err = testing::gradient_error(
          [&](nn::Graph& g, const std::vector<Var>& v) {
            return pose_loss_node(g, v[0], v[1], v[2], gt, x, symmetric, 0.015, use_conf);
          },
          {q, t, c}, 1e-6);
      CAPTURE(symmetric);
      CAPTURE(use_conf);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("loss node value equals the plain loss") {
  std::mt19937_64 rng(4);
  const Points3 x = testing::random_points(rng, 40);
  const Pose gt = testing::random_pose(rng);
  DensePrediction d = dense_from(random_poses(rng, 4), {0.3, 0.4, 0.6, 0.7});
  Tensor q({4, 4}), t({3, 4}), c({1, 4});
  for (int i = 0; i < 4; ++i) {
    for (int a = 0; a < 4; ++a) q[static_cast<std::size_t>(a * 4 + i)] = d.raw_quaternions(i, a);
    for (int a = 0; a < 3; ++a) t[static_cast<std::size_t>(a * 4 + i)] = d.translations(i, a);
    c[static_cast<std::size_t>(i)] = d.confidences(i);
  }
  nn::Graph g(false);
  for (bool symmetric : {false, true}) {
    const Var l = pose_loss_node(g, nn::constant(q), nn::constant(t), nn::constant(c), gt, x, symmetric, 0.015, true);
    CHECK(l->value[0] == doctest::Approx(pose_loss(d, gt, x, symmetric, 0.015)).epsilon(1e-12));
  }
}

TEST_CASE("closest-point loss never exceeds the matched loss") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Points3 x = testing::random_points(rng, 80);
    const Pose gt = testing::random_pose(rng);
    const DensePrediction d = dense_from(random_poses(rng, 3), {0.5, 0.5, 0.5});
    const Eigen::VectorXd sym = pose_loss_terms(d, gt, x, true);
    const Eigen::VectorXd asym = pose_loss_terms(d, gt, x, false);
    for (int i = 0; i < 3; ++i) CHECK(sym(i) <= asym(i) + 1e-12);
  }
}

TEST_CASE("per-pixel loss terms are invariant to a shared rigid transform") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const Points3 x = testing::random_points(rng, 40);
    const Pose gt = testing::random_pose(rng);
    const std::vector<Pose> preds = random_poses(rng, 3);
    const Pose t = testing::random_pose(rng);
    std::vector<Pose> moved;
    for (const Pose& p : preds) moved.push_back(compose(t, p));
    const DensePrediction a = dense_from(preds, {1, 1, 1});
    const DensePrediction b = dense_from(moved, {1, 1, 1});
    for (bool symmetric : {false, true}) {
      const Eigen::VectorXd la = pose_loss_terms(a, gt, x, symmetric);
      const Eigen::VectorXd lb = pose_loss_terms(b, compose(t, gt), x, symmetric);
      CHECK((la - lb).cwiseAbs().maxCoeff() <= 1e-9);
    }
  }
}

TEST_CASE("select_pose takes the most confident pixel and the first on ties") {
  std::mt19937_64 rng(7);
  const std::vector<Pose> poses = random_poses(rng, 4);
  const PosePrediction p = select_pose(dense_from(poses, {0.2, 0.8, 0.8, 0.1}), 3);
  CHECK(p.object_id == 3);
  CHECK(p.confidence == 0.8);
  CHECK((p.pose.translation() - poses[1].translation()).norm() == 0.0);
  CHECK_THROWS_AS(select_pose(DensePrediction{}), InvalidArgument);
}

TEST_CASE("average_pose aligns quaternion signs") {
  std::mt19937_64 rng(8);
  const Pose base = testing::random_pose(rng);
  const Eigen::Quaterniond q = base.rotation();
  DensePrediction d = dense_from({base, Pose(q, base.translation() + Eigen::Vector3d(0.02, 0, 0))}, {0.4, 0.6});
  d.quaternions.row(1) *= -1.0;
  d.raw_quaternions.row(1) *= -1.0;
  const PosePrediction p = average_pose(d, 2);
  CHECK(p.pose.rotation().angularDistance(q) < 1e-9);
  CHECK((p.pose.translation() - (base.translation() + Eigen::Vector3d(0.01, 0, 0))).norm() < 1e-12);
  CHECK(p.confidence == doctest::Approx(0.5));
}

TEST_CASE("forward pass shapes and ranges") {
  const FusionConfig c = tiny_config();
  const PoseNet net(c);
  const RgbdFrame f = scene(1);
  const Annotation& a = f.annotations.at(0);
  const Observation obs = make_observation(f, a.object_id, a.mask, c.n_points, 9);
  nn::Graph g(false);
  const FusionOutputs out = net.forward(g, obs);
  const int h = obs.crop.bbox.height, w = obs.crop.bbox.width;
  CHECK(out.color_map->value.shape() == std::vector<int>{c.d_color, h, w});
  CHECK(out.mask_map->value.shape() == std::vector<int>{c.d_mask, h, w});
  CHECK(out.color_emb->value.shape() == std::vector<int>{c.d_color, c.n_points});
  CHECK(out.geom_emb->value.shape() == std::vector<int>{c.d_geom, c.n_points});
  CHECK(out.mask_emb->value.shape() == std::vector<int>{c.d_mask, c.n_points});
  CHECK(out.raw_quaternion->value.shape() == std::vector<int>{4, c.n_points});
  CHECK(out.translation->value.shape() == std::vector<int>{3, c.n_points});
  const DensePrediction d = to_dense_prediction(out);
  CHECK(d.size() == c.n_points);
  for (int i = 0; i < d.size(); ++i) {
    CHECK(d.confidences(i) > 0.0);
    CHECK(d.confidences(i) <= 1.0);
    CHECK(std::abs(d.quaternions.row(i).norm() - 1.0) < 1e-9);
    CHECK(std::isfinite(d.translations.row(i).sum()));
  }
  CHECK_THROWS_AS(net.extract_color_features(g, nn::constant(Tensor({1, 16, 16}))), InvalidArgument);
  CHECK_THROWS_AS(net.extract_geom_features(g, nn::constant(Tensor({2, 5}))), InvalidArgument);
}

TEST_CASE("the mask branch changes the fused output") {
  const FusionConfig c = tiny_config();
  const PoseNet net(c);
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor color = testing::random_tensor({c.d_color, 8}, rng);
    const Tensor geom = testing::random_tensor({c.d_geom, 8}, rng);
    const Tensor mask = testing::random_tensor({c.d_mask, 8}, rng);
    nn::Graph g(false);
    const auto with = net.fuse_and_predict(g, nn::constant(color), nn::constant(geom), nn::constant(mask));
    const auto without = net.fuse_and_predict(g, nn::constant(color), nn::constant(geom),
                                              nn::constant(Tensor({c.d_mask, 8})));
    CHECK(with.raw_quaternion->value.values() != without.raw_quaternion->value.values());
  }
}

TEST_CASE("translations are centered on the observed points") {
  const FusionConfig c = tiny_config();
  const PoseNet net(c);
  const RgbdFrame f = scene(2);
  const Annotation& a = f.annotations.at(0);
  const Observation obs = make_observation(f, a.object_id, a.mask, c.n_points, 1);
  nn::Graph g(false);
  const FusionOutputs out = net.forward(g, obs);
  const auto heads = net.fuse_and_predict(g, out.color_emb, out.geom_emb, out.mask_emb);
  const DensePrediction d = to_dense_prediction(out);
  for (int i = 0; i < c.n_points; ++i) {
    for (int axis = 0; axis < 3; ++axis) {
      const double head = heads.translation->value[static_cast<std::size_t>(axis * c.n_points + i)];
      CHECK(d.translations(i, axis) == doctest::Approx(obs.centroid(axis) + kGeometryScale * head).epsilon(1e-12));
    }
  }
  CHECK(obs.points.rows() == c.n_points);
  CHECK(static_cast<int>(obs.flat_indices.size()) == c.n_points);
}

TEST_CASE("pose checkpoint round trip is exact") {
  FusionConfig c = tiny_config();
  c.augment_roll = true;
  const PoseNet net(c);
  const auto path = testing::scratch_dir("pose") / "pose.ckpt";
  net.save(path, {{"final_train_loss", 0.5}});
  const auto [loaded, header] = PoseNet::load(path);
  CHECK(header.at("final_train_loss") == 0.5);
  CHECK(fusion_config_to_json(loaded.config()) == fusion_config_to_json(c));
  REQUIRE(loaded.params().entries().size() == net.params().entries().size());
  for (std::size_t i = 0; i < net.params().entries().size(); ++i) {
    CHECK(loaded.params().entries()[i].second->value.values() == net.params().entries()[i].second->value.values());
  }
  const RgbdFrame f = scene(3);
  const Observation obs = make_observation(f, f.annotations[0].object_id, f.annotations[0].mask, c.n_points, 2);
  CHECK(predict_dense(loaded, obs).raw_quaternions == predict_dense(net, obs).raw_quaternions);
}

TEST_CASE("fusion config JSON round trip and validation") {
  FusionConfig c = tiny_config();
  c.use_confidence = false;
  c.optimizer = {"adam", 1e-3};
  CHECK(fusion_config_to_json(fusion_config_from_json(fusion_config_to_json(c))) == fusion_config_to_json(c));
  CHECK(fusion_config_from_json(nlohmann::json::object()).n_points == 500);
  CHECK_THROWS_AS(fusion_config_from_json({{"n_points", 0}}), InvalidArgument);
  CHECK_THROWS_AS(fusion_config_from_json({{"confidence_weight", 0.0}}), InvalidArgument);
  CHECK_THROWS_AS(fusion_config_from_json({{"n_points", "many"}}), ParseError);
}

TEST_CASE("rolling a frame by a quarter turn moves points with the pose") {
  const RgbdFrame f = scene(4, 1);
  const double angle = std::numbers::pi / 2;
  const RgbdFrame r = roll_frame(f, angle);
  REQUIRE(r.annotations.size() == 1);
  const Pose roll(Eigen::Quaterniond(Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitZ())), Eigen::Vector3d::Zero());
  const Annotation& before = f.annotations[0];
  const Annotation& after = r.annotations[0];
  CHECK(after.object_id == before.object_id);
  CHECK(rotation_angle_between(after.pose, compose(roll, before.pose)) < 1e-12);
  CHECK(after.mask.count() == before.mask.count());
  auto centroid = [](const RgbdFrame& frame, const BinaryMask& mask) {
    std::vector<Pixel> px;
    for (int v = 0; v < mask.height(); ++v) {
      for (int u = 0; u < mask.width(); ++u) {
        if (mask(v, u)) px.push_back({u, v});
      }
    }
    return Eigen::Vector3d(backproject(frame.depth, frame.intrinsics, px).colwise().mean().transpose());
  };
  CHECK((centroid(r, after.mask) - roll * centroid(f, before.mask)).norm() < 1e-9);

  const RgbdFrame same = roll_frame(f, 0.0);
  CHECK(same.depth == f.depth);
  CHECK(same.labels == f.labels);
}

TEST_CASE("pose training lowers the loss and is reproducible") {
  FusionConfig c = tiny_config();
  c.epochs = 8;
  c.optimizer = {"adam", 3e-3};
  const std::vector<RgbdFrame> frames{scene(5, 2), scene(6, 2)};
  const ModelCatalog models = catalog();
  int calls = 0;
  const PoseTrainResult a = pose_train(frames, {}, models, c, [&](const PoseEpochLog& l) {
    ++calls;
    CHECK(l.epoch == calls);
    CHECK(l.heldout_add_mm > 0.0);
  });
  CHECK(calls == 8);
  CHECK(a.history.back().train_loss < a.initial_loss);
  const PoseTrainResult b = pose_train(frames, {}, models, c);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].heldout_add_mm == b.history[i].heldout_add_mm);
  }
  CHECK_THROWS_AS(pose_train(frames, {}, ModelCatalog{}, c), InvalidArgument);
}
