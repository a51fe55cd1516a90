#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "maskpose/datasets.hpp"
#include "maskpose/errors.hpp"
#include "maskpose/maskproc.hpp"
#include "maskpose/segmodel.hpp"

using namespace maskpose;
using nn::Tensor;

namespace {

SegConfig small_config() {
  SegConfig c;
  c.widths = {4, 6};
  c.seed = 17;
  return c;
}

RgbdFrame small_frame(std::uint64_t seed) {
  SceneConfig sc;
  sc.seed = 40;
  RgbdFrame f = generate_scene(sc, seed);
  f.frame_id = static_cast<int>(seed);
  return f;
}

Tensor scores_from(const std::vector<std::vector<int>>& argmax, int classes) {
  const int h = static_cast<int>(argmax.size()), w = static_cast<int>(argmax[0].size());
  Tensor t({classes, h, w});
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      t[static_cast<std::size_t>((argmax[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] * h + r) * w + c)] = 1.0;
    }
  }
  return t;
}

}  // namespace

TEST_CASE("seg_loss gradients match central differences") {
  SegNet net(small_config());
  const RgbdFrame f = small_frame(0);
  auto loss_of = [&] { return seg_loss(seg_forward(net, f.color), f.labels); };

  nn::Graph g;
  std::vector<int> labels(f.labels.data().begin(), f.labels.data().end());
  g.backward(g.softmax_cross_entropy(net.forward(g, nn::constant(color_to_tensor(f.color))), labels));
  CHECK(loss_of() == doctest::Approx(seg_loss(seg_forward(net, f.color), f.labels)));

  std::mt19937_64 rng(3);
  double diff = 0.0, na = 0.0, nn_ = 0.0;
  for (const auto& [name, var] : net.params().entries()) {
    std::uniform_int_distribution<std::size_t> pick(0, var->value.size() - 1);
    for (int k = 0; k < 3; ++k) {
      const std::size_t i = pick(rng);
      const double keep = var->value[i], h = 1e-5;
      var->value[i] = keep + h;
      const double up = loss_of();
      var->value[i] = keep - h;
      const double down = loss_of();
      var->value[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double analytic = var->grad[i];
      diff += (analytic - numeric) * (analytic - numeric);
      na += analytic * analytic;
      nn_ += numeric * numeric;
    }
  }
  CHECK(std::sqrt(diff) / (std::sqrt(na) + std::sqrt(nn_)) < 1e-4);
}

TEST_CASE("seg_loss values and errors") {
  LabelImage labels(2, 2, 0);
  labels(0, 1) = 3;
  CHECK(seg_loss(Tensor({4, 2, 2}, 0.0), labels) == doctest::Approx(std::log(4.0)));
  Tensor confident({4, 2, 2}, 0.0);
  for (int i = 0; i < 4; ++i) confident[static_cast<std::size_t>(labels.data()[static_cast<std::size_t>(i)] * 4 + i)] = 50.0;
  CHECK(seg_loss(confident, labels) < 1e-20);
  labels(1, 1) = 4;
  CHECK_THROWS_AS(seg_loss(Tensor({4, 2, 2}), labels), InvalidArgument);
  CHECK_THROWS_AS(seg_loss(Tensor({4, 3, 2}), LabelImage(2, 2, 0)), InvalidArgument);
}

TEST_CASE("extract_masks labels by argmax and drops small classes") {
  const Tensor s = scores_from({{0, 1, 1, 0, 0, 0},
                                {0, 1, 1, 0, 3, 0},
                                {0, 0, 0, 0, 0, 0}},
                               4);
  const auto masks = extract_masks(s, 2, false);
  REQUIRE(masks.size() == 1);
  CHECK(masks[0].object_id == 1);
  CHECK(masks[0].mask.count() == 4);
  const auto all = extract_masks(s, 1, false);
  REQUIRE(all.size() == 2);
  CHECK(all[1].object_id == 3);
  const auto filtered = extract_masks(s, 2, true);
  REQUIRE(filtered.size() == 1);
  CHECK(filtered[0].mask == filter_mask(masks[0].mask));
  CHECK(extract_masks(Tensor({4, 3, 3}), 1, false).empty());
}

TEST_CASE("mean IoU") {
  const RgbdFrame f = small_frame(1);
  std::vector<DetectedMask> perfect;
  for (const auto& a : f.annotations) perfect.push_back({a.object_id, a.mask});
  CHECK(mean_iou({f.annotations}, {perfect}) == 1.0);
  CHECK(mean_iou({{}}, {{}}) == 1.0);

  BinaryMask a(1, 4), b(1, 4);
  a.set(0, 0, true);
  a.set(0, 1, true);
  b.set(0, 1, true);
  b.set(0, 2, true);
  const std::vector<Annotation> truth{{1, Pose{}, a}};
  CHECK(mean_iou({truth}, {{{1, b}}}) == doctest::Approx(1.0 / 3.0));
  // A missed class and a spurious class both count as zero.
  CHECK(mean_iou({truth}, {{{2, b}}}) == 0.0);
  CHECK_THROWS_AS(mean_iou({truth}, {}), InvalidArgument);
}

TEST_CASE("segmentation overfits two frames and round trips") {
  SegConfig c = small_config();
  c.widths = {8, 16};
  c.epochs = 150;
  c.batch_size = 1;
  c.optimizer = {"adam", 1e-2};
  c.optimizer.final_lr_fraction = 0.1;
  const std::vector<RgbdFrame> frames{small_frame(2), small_frame(3)};
  int calls = 0;
  const SegTrainResult r = seg_train(frames, {}, c, [&](const SegEpochLog&) { ++calls; });
  CHECK(calls == 150);
  REQUIRE(r.history.size() == 150);
  CHECK(r.history.back().train_loss < 0.05 * r.initial_loss);
  CHECK(r.history.back().heldout_miou > 0.6);

  const auto path = testing::scratch_dir("seg") / "seg.ckpt";
  r.net.save(path);
  const SegNet loaded = SegNet::load(path);
  CHECK(seg_forward(loaded, frames[0].color).values() == seg_forward(r.net, frames[0].color).values());
}

TEST_CASE("segmentation training is reproducible") {
  SegConfig c = small_config();
  c.epochs = 6;
  c.optimizer = {"adam", 1e-2};
  const std::vector<RgbdFrame> frames{small_frame(2), small_frame(3)};
  const SegTrainResult a = seg_train(frames, {}, c);
  const SegTrainResult b = seg_train(frames, {}, c);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].train_loss == b.history[i].train_loss);
  CHECK(seg_forward(a.net, frames[0].color).values() == seg_forward(b.net, frames[0].color).values());
}
