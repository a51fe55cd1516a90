#include "maskpose/segmodel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "maskpose/errors.hpp"
#include "maskpose/maskproc.hpp"
#include "maskpose/random.hpp"

namespace maskpose {

using nn::Graph;
using nn::Tensor;
using nn::Var;

void SegConfig::validate() const {
  if (num_classes < 2 || num_classes > 256) throw InvalidArgument("seg config: num_classes must be in [2, 256]");
  if (widths.empty()) throw InvalidArgument("seg config: at least one stage is required");
  for (int w : widths) {
    if (w < 1) throw InvalidArgument("seg config: widths must be positive");
  }
  if (batch_size < 1) throw InvalidArgument("seg config: batch_size must be >= 1");
  if (epochs < 0) throw InvalidArgument("seg config: epochs must be >= 0");
  if (min_pixels < 0) throw InvalidArgument("seg config: min_pixels must be >= 0");
  optimizer.validate();
}

nlohmann::json seg_config_to_json(const SegConfig& c) {
  return {{"num_classes", c.num_classes}, {"widths", c.widths},
          {"optimizer", nn::optimizer_to_json(c.optimizer)},
          {"batch_size", c.batch_size},   {"epochs", c.epochs},
          {"min_pixels", c.min_pixels},   {"augment_flip", c.augment_flip},
          {"seed", c.seed}};
}

SegConfig seg_config_from_json(const nlohmann::json& j, SegConfig c) {
  try {
    c.num_classes = j.value("num_classes", c.num_classes);
    c.widths = j.value("widths", c.widths);
    if (j.contains("optimizer")) c.optimizer = nn::optimizer_from_json(j.at("optimizer"), c.optimizer);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.min_pixels = j.value("min_pixels", c.min_pixels);
    c.augment_flip = j.value("augment_flip", c.augment_flip);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("seg config: ") + e.what());
  }
  c.validate();
  return c;
}

Tensor color_to_tensor(const ColorImage& color) {
  const int h = color.height(), w = color.width();
  Tensor t({3, h, w});
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < hw; ++i) {
    const Rgb& px = color.data()[i];
    t[i] = px.r / 255.0;
    t[hw + i] = px.g / 255.0;
    t[2 * hw + i] = px.b / 255.0;
  }
  return t;
}

SegNet::SegNet(SegConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(derive_seed(config_.seed, {0x5e6}));
  const auto& w = config_.widths;
  const int stages = static_cast<int>(w.size());
  int in = 3;
  for (int s = 0; s < stages; ++s) {
    encoder_.push_back(nn::make_conv2d(params_, "enc" + std::to_string(s), in, w[s], 3, rng));
    in = w[s];
  }
  for (int s = stages - 1; s >= 0; --s) {
    const int from = s == stages - 1 ? w[s] : w[s + 1];
    decoder_.push_back(nn::make_conv2d(params_, "dec" + std::to_string(s), from, w[s], 3, rng));
  }
  head_ = nn::make_conv2d(params_, "head", w[0], config_.num_classes, 1, rng);
  params_.quantize_to_float();
}

Var SegNet::forward(Graph& g, const Var& input) const {
  const Tensor& x = input->value;
  const int stages = static_cast<int>(encoder_.size());
  const int factor = 1 << stages;
  if (x.rank() != 3 || x.dim(0) != 3 || x.dim(1) % factor != 0 || x.dim(2) % factor != 0) {
    throw InvalidArgument("seg_forward: expected [3, H, W] with H, W multiples of " +
                          std::to_string(factor) + ", got " + x.shape_string());
  }
  std::vector<Var> skips;
  Var h = input;
  for (const auto& conv : encoder_) {
    h = g.silu(conv(g, h));
    skips.push_back(h);
    h = g.avg_pool2(h);
  }
  for (int i = 0; i < stages; ++i) {
    const int s = stages - 1 - i;
    h = g.add(g.silu(decoder_[static_cast<std::size_t>(i)](g, g.upsample2(h))),
              skips[static_cast<std::size_t>(s)]);
  }
  return head_(g, h);
}

void SegNet::save(const std::filesystem::path& path, nlohmann::json extra) const {
  extra["kind"] = "seg";
  extra["config"] = seg_config_to_json(config_);
  nn::save_checkpoint(path, std::move(extra), params_);
}

SegNet SegNet::load(const std::filesystem::path& path) {
  const nn::Checkpoint ck = nn::read_checkpoint(path);
  if (ck.header.value("kind", "") != "seg") throw ParseError(path.string() + " is not a segmentation checkpoint");
  SegNet net(seg_config_from_json(ck.header.at("config")));
  net.params_.load(ck);
  return net;
}

Tensor seg_forward(const SegNet& net, const ColorImage& color) {
  Graph g(false);
  return net.forward(g, nn::constant(color_to_tensor(color)))->value;
}

namespace {

std::vector<int> label_vector(const LabelImage& labels, int num_classes) {
  std::vector<int> out(labels.data().begin(), labels.data().end());
  for (int l : out) {
    if (l >= num_classes) {
      throw InvalidArgument("label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  return out;
}

void flip_horizontal(Tensor& t) {
  const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      double* row = t.data() + (static_cast<std::size_t>(ch) * h + y) * w;
      std::reverse(row, row + w);
    }
  }
}

void flip_horizontal(std::vector<int>& labels, int h, int w) {
  for (int y = 0; y < h; ++y) {
    std::reverse(labels.begin() + static_cast<long>(y) * w, labels.begin() + static_cast<long>(y + 1) * w);
  }
}

double mean_loss(const SegNet& net, const std::vector<RgbdFrame>& frames) {
  double total = 0.0;
  for (const auto& f : frames) total += seg_loss(seg_forward(net, f.color), f.labels);
  return total / static_cast<double>(frames.size());
}

}  // namespace

double seg_loss(const Tensor& scores, const LabelImage& labels) {
  if (scores.rank() != 3 || scores.dim(1) != labels.height() || scores.dim(2) != labels.width()) {
    throw InvalidArgument("seg_loss: scores " + scores.shape_string() + " do not match labels");
  }
  const std::vector<int> lab = label_vector(labels, scores.dim(0));
  Graph g(false);
  return g.softmax_cross_entropy(nn::constant(scores), lab)->value[0];
}

std::vector<DetectedMask> extract_masks(const Tensor& scores, int min_pixels, bool apply_filters) {
  if (scores.rank() != 3 || scores.dim(0) < 1) throw InvalidArgument("extract_masks: expected [C, H, W] scores");
  const int c = scores.dim(0), h = scores.dim(1), w = scores.dim(2);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  LabelImage argmax(h, w, 0);
  std::vector<int> counts(static_cast<std::size_t>(c), 0);
  for (std::size_t i = 0; i < hw; ++i) {
    int best = 0;
    for (int k = 1; k < c; ++k) {
      if (scores[static_cast<std::size_t>(k) * hw + i] > scores[static_cast<std::size_t>(best) * hw + i]) best = k;
    }
    argmax.data()[i] = static_cast<std::uint8_t>(best);
    ++counts[static_cast<std::size_t>(best)];
  }
  std::vector<DetectedMask> out;
  for (int k = 1; k < c; ++k) {
    const int n = counts[static_cast<std::size_t>(k)];
    if (n == 0 || n < min_pixels) continue;
    BinaryMask m = BinaryMask::from_label(argmax, static_cast<std::uint8_t>(k));
    if (apply_filters) m = filter_mask(m);
    if (m.count() == 0) continue;
    out.push_back({k, std::move(m)});
  }
  return out;
}

double mean_iou(const std::vector<std::vector<Annotation>>& truth,
                const std::vector<std::vector<DetectedMask>>& predicted) {
  if (truth.size() != predicted.size()) throw InvalidArgument("mean_iou: frame counts differ");
  std::map<int, std::pair<long, long>> acc;  // id -> (intersection, union)
  for (std::size_t f = 0; f < truth.size(); ++f) {
    std::map<int, const BinaryMask*> gt, pr;
    for (const auto& a : truth[f]) gt[a.object_id] = &a.mask;
    for (const auto& d : predicted[f]) pr[d.object_id] = &d.mask;
    std::set<int> ids;
    for (const auto& [id, m] : gt) ids.insert(id);
    for (const auto& [id, m] : pr) ids.insert(id);
    for (int id : ids) {
      const BinaryMask* a = gt.count(id) ? gt[id] : nullptr;
      const BinaryMask* b = pr.count(id) ? pr[id] : nullptr;
      const BinaryMask* ref = a ? a : b;
      long inter = 0, uni = 0;
      for (std::size_t i = 0; i < ref->grid().size(); ++i) {
        const bool x = a && a->grid().data()[i];
        const bool y = b && b->grid().data()[i];
        inter += x && y;
        uni += x || y;
      }
      acc[id].first += inter;
      acc[id].second += uni;
    }
  }
  if (acc.empty()) return 1.0;
  double sum = 0.0;
  int n = 0;
  for (const auto& [id, iu] : acc) {
    if (iu.second == 0) continue;
    sum += static_cast<double>(iu.first) / static_cast<double>(iu.second);
    ++n;
  }
  return n == 0 ? 1.0 : sum / n;
}

std::vector<std::vector<DetectedMask>> predict_masks(const SegNet& net, const std::vector<RgbdFrame>& frames,
                                                     bool apply_filters) {
  std::vector<std::vector<DetectedMask>> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    out.push_back(extract_masks(seg_forward(net, f.color), net.config().min_pixels, apply_filters));
  }
  return out;
}

SegTrainResult seg_train(const std::vector<RgbdFrame>& train, const std::vector<RgbdFrame>& heldout,
                         const SegConfig& config, const std::function<void(const SegEpochLog&)>& on_epoch) {
  if (train.empty()) throw InvalidArgument("seg_train: empty training set");
  config.validate();
  SegTrainResult result{SegNet(config), {}, 0.0};
  SegNet& net = result.net;
  const std::vector<RgbdFrame>& scored = heldout.empty() ? train : heldout;
  std::vector<std::vector<Annotation>> scored_truth;
  for (const auto& f : scored) scored_truth.push_back(f.annotations);

  std::vector<Tensor> inputs;
  std::vector<std::vector<int>> labels;
  for (const auto& f : train) {
    inputs.push_back(color_to_tensor(f.color));
    labels.push_back(label_vector(f.labels, config.num_classes));
  }
  result.initial_loss = mean_loss(net, train);

  nn::Optimizer opt(config.optimizer);
  std::mt19937_64 rng(derive_seed(config.seed, {0x5e6, 1}));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const double inv_batch = 1.0 / config.batch_size;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    opt.set_epoch(epoch, config.epochs);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    int in_batch = 0;
    for (std::size_t idx : order) {
      Tensor x = inputs[idx];
      std::vector<int> lab = labels[idx];
      if (config.augment_flip && (rng() & 1U)) {
        flip_horizontal(x);
        flip_horizontal(lab, x.dim(1), x.dim(2));
      }
      Graph g;
      Var loss = g.softmax_cross_entropy(net.forward(g, nn::constant(std::move(x))), lab);
      total += loss->value[0];
      g.backward(g.scale(loss, inv_batch));
      if (++in_batch == config.batch_size) {
        opt.step(net.params());
        in_batch = 0;
      }
    }
    if (in_batch > 0) opt.step(net.params());
    SegEpochLog log{epoch + 1, total / static_cast<double>(train.size()),
                    mean_iou(scored_truth, predict_masks(net, scored, false))};
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  net.params().quantize_to_float();
  return result;
}

}  // namespace maskpose
