#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "maskpose/datasets.hpp"
#include "maskpose/errors.hpp"

using namespace maskpose;
namespace fs = std::filesystem;

TEST_CASE("built-in catalog") {
  const auto catalog = builtin_catalog();
  REQUIRE(catalog.size() == 3);
  std::set<int> ids;
  for (const auto& m : catalog) {
    ids.insert(m.object_id);
    m.validate();
    CHECK(m.diameter == doctest::Approx(max_pairwise_distance(m.points)));
    CHECK(m.symmetric == (m.object_id == kPlate));
  }
  CHECK(ids == std::set<int>{kCube, kLPrism, kPlate});
}

TEST_CASE("generated scenes are deterministic and consistent") {
  SceneConfig config;
  config.seed = 21;
  const RgbdFrame a = generate_scene(config, 4);
  const RgbdFrame b = generate_scene(config, 4);
  const RgbdFrame c = generate_scene(config, 5);
  CHECK(a.depth == b.depth);
  CHECK(a.color == b.color);
  CHECK_FALSE(a.depth == c.depth);
  a.validate();
  CHECK(a.annotations.size() >= 1);
  CHECK(a.annotations.size() <= 3);
  for (const Annotation& ann : a.annotations) {
    CHECK(ann.mask == BinaryMask::from_label(a.labels, static_cast<std::uint8_t>(ann.object_id)));
    CHECK(ann.mask.count() >= config.min_visible_pixels);
  }
  for (int r = 0; r < a.labels.height(); ++r) {
    for (int col = 0; col < a.labels.width(); ++col) CHECK((a.labels(r, col) == 0) == (a.depth(r, col) == 0.0));
  }
}

TEST_CASE("frames round trip through files") {
  SceneConfig config;
  config.seed = 22;
  const RgbdFrame f = generate_scene(config, 0);
  const auto dir = testing::scratch_dir("frame");
  write_frame(f, dir / "000000");
  const RgbdFrame g = load_frame(dir / "000000");
  CHECK(g.color == f.color);
  CHECK(g.labels == f.labels);
  CHECK(g.intrinsics == f.intrinsics);
  double worst = 0.0;
  for (std::size_t i = 0; i < f.depth.size(); ++i) worst = std::max(worst, std::abs(g.depth.data()[i] - f.depth.data()[i]));
  CHECK(worst <= 0.0005);
  REQUIRE(g.annotations.size() == f.annotations.size());
  for (std::size_t i = 0; i < f.annotations.size(); ++i) {
    CHECK(g.annotations[i].object_id == f.annotations[i].object_id);
    CHECK(g.annotations[i].mask == f.annotations[i].mask);
    CHECK((g.annotations[i].pose.translation() - f.annotations[i].pose.translation()).norm() < 1e-12);
    CHECK(rotation_angle_between(g.annotations[i].pose, f.annotations[i].pose) < 1e-6);
  }

  fs::remove(dir / "000000" / "depth.png");
  CHECK_THROWS_AS(load_frame(dir / "000000"), ParseError);
  CHECK_THROWS_AS(load_frame(dir / "missing"), ParseError);
  std::ofstream(dir / "000000" / "meta.json") << "{ not json";
  CHECK_THROWS_AS(load_frame(dir / "000000"), ParseError);
}

TEST_CASE("catalogs round trip") {
  const auto dir = testing::scratch_dir("catalog");
  write_catalog(dir, builtin_catalog());
  const ModelCatalog loaded = load_catalog(dir);
  REQUIRE(loaded.size() == 3);
  for (const auto& m : builtin_catalog()) {
    const ObjectModel& l = loaded.at(m.object_id);
    CHECK(l.symmetric == m.symmetric);
    CHECK((l.points - m.points).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(l.diameter == doctest::Approx(m.diameter).epsilon(1e-12));
  }
}

TEST_CASE("splits partition the frames") {
  std::vector<int> ids(25);
  for (int i = 0; i < 25; ++i) ids[static_cast<std::size_t>(i)] = i * 2;
  const SplitManifest m = split_frames(ids, 0.8, 3);
  CHECK(m.train.size() == 20);
  CHECK(m.test.size() == 5);
  std::set<int> all(m.train.begin(), m.train.end());
  all.insert(m.test.begin(), m.test.end());
  CHECK(all.size() == 25);
  CHECK(split_frames(ids, 0.8, 3).test == m.test);
  CHECK_THROWS_AS(split_frames({1}, 0.5, 0), InvalidArgument);
  CHECK_THROWS_AS(split_frames(ids, 1.0, 0), InvalidArgument);

  SceneConfig config;
  config.seed = 23;
  const auto dir = testing::scratch_dir("splits");
  for (int i = 0; i < 5; ++i) {
    RgbdFrame f = generate_scene(config, static_cast<std::uint64_t>(i));
    f.frame_id = i;
    write_frame(f, frame_dir(dir, i));
  }
  CHECK(list_frames(dir) == std::vector<int>{0, 1, 2, 3, 4});
  const SplitManifest written = make_splits(dir, 0.6, 1);
  CHECK(load_split(dir, "train") == written.train);
  CHECK(load_split(dir, "test") == written.test);
  CHECK(load_frames(dir, written.test).size() == written.test.size());
  CHECK_THROWS_AS(load_split(dir, "nope"), ParseError);
}

TEST_CASE("scene configs round trip and select objects") {
  SceneConfig config;
  config.seed = 9;
  config.max_objects = 2;
  const SceneConfig back = scene_config_from_json(scene_config_to_json(config));
  CHECK(scene_config_to_json(back) == scene_config_to_json(config));

  const SceneConfig only_cube = scene_config_from_json({{"object_ids", {1}}, {"max_objects", 1}});
  REQUIRE(only_cube.catalog.size() == 1);
  CHECK(only_cube.catalog[0].object_id == kCube);
  for (int i = 0; i < 5; ++i) {
    for (const auto& a : generate_scene(only_cube, static_cast<std::uint64_t>(i)).annotations) CHECK(a.object_id == kCube);
  }
  CHECK_THROWS_AS(scene_config_from_json({{"object_ids", {42}}}), ParseError);
}
