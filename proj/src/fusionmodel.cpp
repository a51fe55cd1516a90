#include "maskpose/fusionmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "maskpose/errors.hpp"
#include "maskpose/kdtree.hpp"
#include "maskpose/metrics.hpp"
#include "maskpose/random.hpp"
#include "maskpose/segmodel.hpp"

namespace maskpose {

using nn::Graph;
using nn::Tensor;
using nn::Var;

namespace {

constexpr double kMinQuaternionNorm = 1e-8;

void require_positive(int v, const char* name) {
  if (v < 1) throw InvalidArgument(std::string("fusion config: ") + name + " must be >= 1");
}

}  // namespace

void FusionConfig::validate() const {
  require_positive(n_points, "n_points");
  require_positive(d_color, "d_color");
  require_positive(d_geom, "d_geom");
  require_positive(d_mask, "d_mask");
  require_positive(d_fused, "d_fused");
  require_positive(loss_points, "loss_points");
  require_positive(batch_size, "batch_size");
  if (extractor_widths.empty()) throw InvalidArgument("fusion config: extractor_widths is empty");
  for (int w : extractor_widths) require_positive(w, "extractor_widths");
  for (int w : head_widths) require_positive(w, "head_widths");
  if (!(confidence_weight > 0.0)) throw InvalidArgument("fusion config: confidence_weight must be > 0");
  if (epochs < 0) throw InvalidArgument("fusion config: epochs must be >= 0");
  optimizer.validate();
}

nlohmann::json fusion_config_to_json(const FusionConfig& c) {
  return {{"n_points", c.n_points},
          {"d_color", c.d_color},
          {"d_geom", c.d_geom},
          {"d_mask", c.d_mask},
          {"d_fused", c.d_fused},
          {"extractor_widths", c.extractor_widths},
          {"head_widths", c.head_widths},
          {"loss_points", c.loss_points},
          {"confidence_weight", c.confidence_weight},
          {"use_confidence", c.use_confidence},
          {"optimizer", nn::optimizer_to_json(c.optimizer)},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"augment_roll", c.augment_roll},
          {"filter_training_masks", c.filter_training_masks},
          {"seed", c.seed}};
}

FusionConfig fusion_config_from_json(const nlohmann::json& j, FusionConfig c) {
  try {
    c.n_points = j.value("n_points", c.n_points);
    c.d_color = j.value("d_color", c.d_color);
    c.d_geom = j.value("d_geom", c.d_geom);
    c.d_mask = j.value("d_mask", c.d_mask);
    c.d_fused = j.value("d_fused", c.d_fused);
    c.extractor_widths = j.value("extractor_widths", c.extractor_widths);
    c.head_widths = j.value("head_widths", c.head_widths);
    c.loss_points = j.value("loss_points", c.loss_points);
    c.confidence_weight = j.value("confidence_weight", c.confidence_weight);
    c.use_confidence = j.value("use_confidence", c.use_confidence);
    if (j.contains("optimizer")) c.optimizer = nn::optimizer_from_json(j.at("optimizer"), c.optimizer);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.augment_roll = j.value("augment_roll", c.augment_roll);
    c.filter_training_masks = j.value("filter_training_masks", c.filter_training_masks);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("fusion config: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t observation_seed(std::uint64_t base, int frame_id, int object_id) {
  return derive_seed(base, {0x0b5, static_cast<std::uint64_t>(frame_id), static_cast<std::uint64_t>(object_id)});
}

Observation make_observation(const RgbdFrame& frame, int object_id, const BinaryMask& mask, int n_points,
                             std::uint64_t seed) {
  Observation obs;
  obs.object_id = object_id;
  obs.crop = crop_with_mask(frame, mask);
  choose_points(obs.crop, n_points, seed);
  obs.points = chosen_points(obs.crop, frame.intrinsics);
  obs.centroid = obs.points.colwise().mean().transpose();
  const int w = obs.crop.bbox.width;
  for (const Pixel& p : obs.crop.chosen_pixels) obs.flat_indices.push_back(p.v * w + p.u);
  return obs;
}

BinaryMask prepare_gt_mask(const BinaryMask& mask, const FusionConfig& config) {
  return config.filter_training_masks ? filter_mask(mask) : mask;
}

Tensor mask_to_tensor(const BinaryMask& mask) {
  Tensor t({1, mask.height(), mask.width()});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = mask.grid().data()[i] ? 1.0 : 0.0;
  return t;
}

Tensor centered_points_tensor(const Points3& points, const Eigen::Vector3d& centroid) {
  const int n = static_cast<int>(points.rows());
  Tensor t({3, n});
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      t[static_cast<std::size_t>(a) * n + i] = (points(i, a) - centroid(a)) / kGeometryScale;
    }
  }
  return t;
}

FeatureExtractor::FeatureExtractor(nn::ParameterSet& params, const std::string& name, int in_channels,
                                   const std::vector<int>& widths, int out_channels, std::mt19937_64& rng) {
  std::vector<int> level(widths);
  level.push_back(widths.back());
  int in = in_channels;
  for (std::size_t s = 0; s < level.size(); ++s) {
    const std::string id = name + ".l" + std::to_string(s);
    down_.push_back(nn::make_conv2d(params, id + ".conv", in, level[s], 3, rng));
    res_.push_back(nn::make_conv2d(params, id + ".res", level[s], level[s], 3, rng));
    in = level[s];
  }
  for (std::size_t s = level.size() - 1; s-- > 0;) {
    up_.push_back(nn::make_conv2d(params, name + ".up" + std::to_string(s), level[s + 1], level[s], 3, rng));
  }
  out_ = nn::make_conv2d(params, name + ".out", level[0], out_channels, 1, rng);
}

Var FeatureExtractor::operator()(Graph& g, const Var& x) const {
  const int factor = 1 << (down_.size() - 1);
  const Tensor& v = x->value;
  if (v.rank() != 3 || v.dim(1) % factor != 0 || v.dim(2) % factor != 0) {
    throw InvalidArgument("feature extractor: expected [C, h, w] with h, w multiples of " +
                          std::to_string(factor) + ", got " + v.shape_string());
  }
  std::vector<Var> skips;
  Var h = x;
  for (std::size_t s = 0; s < down_.size(); ++s) {
    if (s > 0) h = g.avg_pool2(h);
    h = g.silu(down_[s](g, h));
    h = g.add(h, g.silu(res_[s](g, h)));
    skips.push_back(h);
  }
  for (std::size_t i = 0; i < up_.size(); ++i) {
    const std::size_t s = down_.size() - 2 - i;
    h = g.add(g.silu(up_[i](g, g.upsample2(h))), skips[s]);
  }
  return g.silu(out_(g, h));
}

PoseNet::PoseNet(FusionConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(derive_seed(config_.seed, {0xf05}));
  const auto& c = config_;
  color_ = FeatureExtractor(params_, "color", 3, c.extractor_widths, c.d_color, rng);
  mask_ = FeatureExtractor(params_, "mask", 1, c.extractor_widths, c.d_mask, rng);
  geom_.push_back(nn::make_dense(params_, "geom0", 3, 64, rng));
  geom_.push_back(nn::make_dense(params_, "geom1", 64, 64, rng));
  geom_.push_back(nn::make_dense(params_, "geom2", 64, c.d_geom, rng));
  fuse_ = nn::make_dense(params_, "fuse", c.d_color + c.d_geom + c.d_mask, c.d_fused, rng);
  auto head = [&](const std::string& name, int out) {
    std::vector<nn::Dense> layers;
    int in = 2 * c.d_fused;
    for (std::size_t i = 0; i < c.head_widths.size(); ++i) {
      layers.push_back(nn::make_dense(params_, name + std::to_string(i), in, c.head_widths[i], rng));
      in = c.head_widths[i];
    }
    layers.push_back(nn::make_dense(params_, name + std::to_string(c.head_widths.size()), in, out, rng));
    return layers;
  };
  rot_head_ = head("rot", 4);
  trans_head_ = head("trans", 3);
  conf_head_ = head("conf", 1);
  params_.quantize_to_float();
}

Var PoseNet::extract_color_features(Graph& g, const Var& color) const {
  if (color->value.rank() != 3 || color->value.dim(0) != 3) throw InvalidArgument("color input must be [3, h, w]");
  return color_(g, color);
}

Var PoseNet::extract_mask_features(Graph& g, const Var& mask) const {
  if (mask->value.rank() != 3 || mask->value.dim(0) != 1) throw InvalidArgument("mask input must be [1, h, w]");
  return mask_(g, mask);
}

Var PoseNet::extract_geom_features(Graph& g, const Var& points) const {
  if (points->value.rank() != 2 || points->value.dim(0) != 3 || points->value.dim(1) < 1) {
    throw InvalidArgument("geometry input must be [3, N] with N >= 1");
  }
  Var h = points;
  for (const auto& layer : geom_) h = g.silu(layer(g, h));
  return h;
}

PoseNet::Heads PoseNet::fuse_and_predict(Graph& g, const Var& color_emb, const Var& geom_emb,
                                         const Var& mask_emb) const {
  const int n = color_emb->value.dim(1);
  if (geom_emb->value.dim(1) != n || mask_emb->value.dim(1) != n) {
    throw InvalidArgument("fuse_and_predict: point counts differ across modalities");
  }
  Var local = g.silu(fuse_(g, g.concat({color_emb, geom_emb, mask_emb})));
  Var feat = g.concat({local, g.repeat_columns(g.max_columns(local), n)});
  auto run = [&](const std::vector<nn::Dense>& layers) {
    Var h = feat;
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) h = g.silu(layers[i](g, h));
    return layers.back()(g, h);
  };
  return {run(rot_head_), run(trans_head_), g.sigmoid(run(conf_head_))};
}

FusionOutputs PoseNet::forward(Graph& g, const Observation& obs) const {
  FusionOutputs out;
  out.color_map = extract_color_features(g, nn::constant(color_to_tensor(obs.crop.color)));
  out.mask_map = extract_mask_features(g, nn::constant(mask_to_tensor(obs.crop.mask)));
  out.color_emb = g.gather_columns(out.color_map, obs.flat_indices);
  out.mask_emb = g.gather_columns(out.mask_map, obs.flat_indices);
  out.geom_emb = extract_geom_features(g, nn::constant(centered_points_tensor(obs.points, obs.centroid)));
  const Heads h = fuse_and_predict(g, out.color_emb, out.geom_emb, out.mask_emb);
  const int n = static_cast<int>(obs.points.rows());
  Tensor offset({3, n});
  for (int a = 0; a < 3; ++a) std::fill_n(offset.data() + static_cast<std::size_t>(a) * n, n, obs.centroid(a));
  out.raw_quaternion = h.raw_quaternion;
  out.translation = g.add_constant(g.scale(h.translation, kGeometryScale), offset);
  out.confidence = h.confidence;
  return out;
}

void PoseNet::save(const std::filesystem::path& path, nlohmann::json extra) const {
  extra["kind"] = "pose";
  extra["config"] = fusion_config_to_json(config_);
  nn::save_checkpoint(path, std::move(extra), params_);
}

std::pair<PoseNet, nlohmann::json> PoseNet::load(const std::filesystem::path& path) {
  nn::Checkpoint ck = nn::read_checkpoint(path);
  if (ck.header.value("kind", "") != "pose") throw ParseError(path.string() + " is not a pose checkpoint");
  PoseNet net(fusion_config_from_json(ck.header.at("config")));
  net.params_.load(ck);
  return {std::move(net), std::move(ck.header)};
}

DensePrediction to_dense_prediction(const FusionOutputs& out) {
  const Tensor& q = out.raw_quaternion->value;
  const Tensor& t = out.translation->value;
  const Tensor& c = out.confidence->value;
  const int n = q.dim(1);
  DensePrediction p;
  p.raw_quaternions.resize(n, 4);
  p.quaternions.resize(n, 4);
  p.translations.resize(n, 3);
  p.confidences.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 4; ++a) p.raw_quaternions(i, a) = q[static_cast<std::size_t>(a) * n + i];
    for (int a = 0; a < 3; ++a) p.translations(i, a) = t[static_cast<std::size_t>(a) * n + i];
    p.confidences(i) = c[static_cast<std::size_t>(i)];
    p.quaternions.row(i) = p.raw_quaternions.row(i) / std::max(p.raw_quaternions.row(i).norm(), kMinQuaternionNorm);
  }
  return p;
}

DensePrediction predict_dense(const PoseNet& net, const Observation& obs) {
  Graph g(false);
  return to_dense_prediction(net.forward(g, obs));
}

namespace {

Eigen::Matrix3d rotation_of(const Eigen::Vector4d& q) {
  const double w = q(0), x = q(1), y = q(2), z = q(3);
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

/// d(sum_ab G_ab R_ab)/dq for the rotation formula above.
Eigen::Vector4d rotation_vjp(const Eigen::Vector4d& q, const Eigen::Matrix3d& gr) {
  const double w = q(0), x = q(1), y = q(2), z = q(3);
  Eigen::Matrix3d dw, dx, dy, dz;
  dw << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
  dx << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
  dy << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
  dz << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
  return {(gr.array() * dw.array()).sum(), (gr.array() * dx.array()).sum(),
          (gr.array() * dy.array()).sum(), (gr.array() * dz.array()).sum()};
}

struct TermGrads {
  Eigen::VectorXd terms;
  /// dL_i / d raw quaternion and dL_i / d translation, one row per pixel.
  Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor> d_quat;
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> d_trans;
};

/// Per-pixel pose loss terms and, optionally, their gradients with respect to
/// the raw quaternions and translations.
TermGrads compute_terms(const Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor>& raw,
                        const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>& trans, const Pose& gt,
                        const Points3& x, bool symmetric, bool with_grad) {
  const Eigen::Index n = raw.rows(), m = x.rows();
  if (m < 1) throw InvalidArgument("pose loss: no loss points");
  if (trans.rows() != n) throw InvalidArgument("pose loss: quaternion and translation counts differ");
  const Points3 target = apply_pose(gt, x);
  std::unique_ptr<KdTree3> tree;
  if (symmetric) tree = std::make_unique<KdTree3>(x);
  TermGrads out;
  out.terms.resize(n);
  if (with_grad) {
    out.d_quat.setZero(n, 4);
    out.d_trans.setZero(n, 3);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector4d q = raw.row(i).transpose();
    const double norm = q.norm();
    const double scale = std::max(norm, kMinQuaternionNorm);
    const Eigen::Vector4d qh = q / scale;
    const Eigen::Matrix3d r = rotation_of(qh);
    const Eigen::Vector3d t = trans.row(i).transpose();
    double sum = 0.0;
    Eigen::Vector3d gt_sum = Eigen::Vector3d::Zero();
    Eigen::Matrix3d gr_sum = Eigen::Matrix3d::Zero();
    for (Eigen::Index j = 0; j < m; ++j) {
      const Eigen::Vector3d y = target.row(j).transpose();
      Eigen::Index k = j;
      if (symmetric) k = tree->nearest(r.transpose() * (y - t)).index;
      const Eigen::Vector3d xk = x.row(k).transpose();
      const Eigen::Vector3d d = r * xk + t - y;
      const double len = d.norm();
      sum += len;
      if (with_grad && len > 0.0) {
        const Eigen::Vector3d u = d / len;
        gt_sum += u;
        gr_sum += u * xk.transpose();
      }
    }
    out.terms(i) = sum / static_cast<double>(m);
    if (!with_grad) continue;
    out.d_trans.row(i) = gt_sum.transpose() / static_cast<double>(m);
    const Eigen::Vector4d g_qh = rotation_vjp(qh, gr_sum / static_cast<double>(m));
    Eigen::Vector4d g_q = g_qh / scale;
    if (norm > kMinQuaternionNorm) g_q -= qh * (qh.dot(g_qh) / scale);
    out.d_quat.row(i) = g_q.transpose();
  }
  return out;
}

}  // namespace

Eigen::VectorXd pose_loss_terms(const DensePrediction& pred, const Pose& gt, const Points3& loss_points,
                                bool symmetric) {
  return compute_terms(pred.quaternions, pred.translations, gt, loss_points, symmetric, false).terms;
}

double pose_loss(const DensePrediction& pred, const Pose& gt, const Points3& loss_points, bool symmetric,
                 double w, bool use_confidence) {
  const Eigen::VectorXd terms = pose_loss_terms(pred, gt, loss_points, symmetric);
  const auto n = static_cast<double>(terms.size());
  if (!use_confidence) return terms.sum() / n;
  double total = 0.0;
  for (Eigen::Index i = 0; i < terms.size(); ++i) {
    const double c = pred.confidences(i);
    total += terms(i) * c - w * std::log(c);
  }
  return total / n;
}

Var pose_loss_node(Graph& g, const Var& raw_quaternion, const Var& translation, const Var& confidence,
                   const Pose& gt, const Points3& loss_points, bool symmetric, double w, bool use_confidence) {
  const Tensor& qv = raw_quaternion->value;
  const Tensor& tv = translation->value;
  if (qv.rank() != 2 || qv.dim(0) != 4 || tv.rank() != 2 || tv.dim(0) != 3 || tv.dim(1) != qv.dim(1)) {
    throw InvalidArgument("pose_loss_node: expected [4, N] quaternions and [3, N] translations");
  }
  const int n = qv.dim(1);
  if (use_confidence && (!confidence || confidence->value.size() != static_cast<std::size_t>(n))) {
    throw InvalidArgument("pose_loss_node: confidence must be [1, N]");
  }
  Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor> raw(n, 4);
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> trans(n, 3);
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 4; ++a) raw(i, a) = qv[static_cast<std::size_t>(a) * n + i];
    for (int a = 0; a < 3; ++a) trans(i, a) = tv[static_cast<std::size_t>(a) * n + i];
  }
  auto tg = std::make_shared<TermGrads>(compute_terms(raw, trans, gt, loss_points, symmetric, true));
  Eigen::VectorXd coeff = Eigen::VectorXd::Constant(n, 1.0 / n);
  Eigen::VectorXd d_conf = Eigen::VectorXd::Zero(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    if (use_confidence) {
      const double c = confidence->value[static_cast<std::size_t>(i)];
      total += tg->terms(i) * c - w * std::log(c);
      coeff(i) = c / n;
      d_conf(i) = (tg->terms(i) - w / c) / n;
    } else {
      total += tg->terms(i);
    }
  }
  std::vector<Var> inputs{raw_quaternion, translation};
  if (use_confidence) inputs.push_back(confidence);
  return g.custom(Tensor({1}, total / n), inputs,
                  [raw_quaternion, translation, confidence, tg, coeff, d_conf, n, use_confidence](const Tensor& go) {
                    const double s = go[0];
                    if (raw_quaternion->requires_grad) {
                      Tensor& gq = raw_quaternion->grad_buffer();
                      for (int i = 0; i < n; ++i) {
                        for (int a = 0; a < 4; ++a) gq[static_cast<std::size_t>(a) * n + i] += s * coeff(i) * tg->d_quat(i, a);
                      }
                    }
                    if (translation->requires_grad) {
                      Tensor& gt_ = translation->grad_buffer();
                      for (int i = 0; i < n; ++i) {
                        for (int a = 0; a < 3; ++a) gt_[static_cast<std::size_t>(a) * n + i] += s * coeff(i) * tg->d_trans(i, a);
                      }
                    }
                    if (use_confidence && confidence->requires_grad) {
                      Tensor& gc = confidence->grad_buffer();
                      for (int i = 0; i < n; ++i) gc[static_cast<std::size_t>(i)] += s * d_conf(i);
                    }
                  });
}

PosePrediction select_pose(const DensePrediction& pred, int object_id) {
  if (pred.size() < 1) throw InvalidArgument("select_pose: empty prediction");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < pred.confidences.size(); ++i) {
    if (pred.confidences(i) > pred.confidences(best)) best = i;
  }
  const auto& q = pred.quaternions.row(best);
  PosePrediction p;
  p.object_id = object_id;
  p.pose = Pose::from_unnormalized(Eigen::Quaterniond(q(0), q(1), q(2), q(3)), pred.translations.row(best).transpose());
  p.confidence = pred.confidences(best);
  return p;
}

PosePrediction average_pose(const DensePrediction& pred, int object_id) {
  if (pred.size() < 1) throw InvalidArgument("average_pose: empty prediction");
  Eigen::Vector4d ref = pred.quaternions.row(0).transpose();
  Eigen::Vector4d sum = Eigen::Vector4d::Zero();
  for (Eigen::Index i = 0; i < pred.quaternions.rows(); ++i) {
    Eigen::Vector4d q = pred.quaternions.row(i).transpose();
    sum += q.dot(ref) < 0.0 ? -q : q;
  }
  if (sum.norm() < kMinQuaternionNorm) sum = ref;
  PosePrediction p;
  p.object_id = object_id;
  p.pose = Pose::from_unnormalized(Eigen::Quaterniond(sum(0), sum(1), sum(2), sum(3)),
                                   pred.translations.colwise().mean().transpose());
  p.confidence = pred.confidences.mean();
  return p;
}

PosePrediction estimate_pose(const PoseNet& net, const Observation& obs) {
  const DensePrediction d = predict_dense(net, obs);
  return net.config().use_confidence ? select_pose(d, obs.object_id) : average_pose(d, obs.object_id);
}

RgbdFrame roll_frame(const RgbdFrame& frame, double angle) {
  const CameraIntrinsics& k = frame.intrinsics;
  if (k.fx != k.fy) throw InvalidArgument("roll_frame: requires fx == fy");
  const int h = frame.depth.height(), w = frame.depth.width();
  RgbdFrame out;
  out.frame_id = frame.frame_id;
  out.intrinsics = k;
  out.color = ColorImage(h, w);
  out.depth = DepthImage(h, w, 0.0);
  out.labels = LabelImage(h, w, 0);
  const double c = std::cos(angle), s = std::sin(angle);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const double du = u - k.cx, dv = v - k.cy;
      const int su = static_cast<int>(std::lround(c * du + s * dv + k.cx));
      const int sv = static_cast<int>(std::lround(-s * du + c * dv + k.cy));
      const int cu = std::clamp(su, 0, w - 1), cv = std::clamp(sv, 0, h - 1);
      out.color(v, u) = frame.color(cv, cu);
      if (su != cu || sv != cv) continue;
      out.depth(v, u) = frame.depth(sv, su);
      out.labels(v, u) = frame.labels(sv, su);
    }
  }
  const Pose roll(Eigen::Quaterniond(Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitZ())), Eigen::Vector3d::Zero());
  for (const Annotation& a : frame.annotations) {
    BinaryMask m = BinaryMask::from_label(out.labels, static_cast<std::uint8_t>(a.object_id));
    if (m.count() == 0) {
      for (auto& l : out.labels.data()) {
        if (l == a.object_id) l = 0;
      }
      continue;
    }
    out.annotations.push_back({a.object_id, compose(roll, a.pose), std::move(m)});
  }
  return out;
}

namespace {

double instance_error(const ObjectModel& model, const Pose& gt, const Pose& pred) {
  return model.symmetric ? add_s(model.points, gt, pred) : add(model.points, gt, pred);
}

double heldout_add_mm(const PoseNet& net, const std::vector<RgbdFrame>& frames, const ModelCatalog& models) {
  const FusionConfig& c = net.config();
  double sum = 0.0;
  int count = 0;
  for (const RgbdFrame& f : frames) {
    for (const Annotation& a : f.annotations) {
      const auto it = models.find(a.object_id);
      if (it == models.end()) continue;
      double err = kFailedError;
      try {
        const Observation obs = make_observation(f, a.object_id, prepare_gt_mask(a.mask, c), c.n_points,
                                                 observation_seed(c.seed, f.frame_id, a.object_id));
        err = instance_error(it->second, a.pose, estimate_pose(net, obs).pose);
      } catch (const NoValidDepth&) {
      }
      sum += err;
      ++count;
    }
  }
  return count == 0 ? 0.0 : 1000.0 * sum / count;
}

}  // namespace

PoseTrainResult pose_train(const std::vector<RgbdFrame>& train, const std::vector<RgbdFrame>& heldout,
                           const ModelCatalog& models, const FusionConfig& config,
                           const std::function<void(const PoseEpochLog&)>& on_epoch) {
  config.validate();
  struct Sample {
    std::size_t frame;
    int object_id;
  };
  std::vector<Sample> samples;
  for (std::size_t f = 0; f < train.size(); ++f) {
    for (const Annotation& a : train[f].annotations) {
      if (!models.count(a.object_id)) throw InvalidArgument("pose_train: no model for object " + std::to_string(a.object_id));
      samples.push_back({f, a.object_id});
    }
  }
  if (samples.empty()) throw InvalidArgument("pose_train: no annotated objects in the training set");

  PoseTrainResult result{PoseNet(config), {}, 0.0};
  PoseNet& net = result.net;
  nn::Optimizer opt(config.optimizer);
  std::mt19937_64 rng(derive_seed(config.seed, {0xf05, 1}));
  std::uniform_real_distribution<double> angle_dist(-std::numbers::pi, std::numbers::pi);
  const double inv_batch = 1.0 / config.batch_size;

  auto instance_loss = [&](Graph& g, const RgbdFrame& frame, int object_id, std::uint64_t stream) -> Var {
    const Annotation* ann = nullptr;
    for (const Annotation& a : frame.annotations) {
      if (a.object_id == object_id) ann = &a;
    }
    if (ann == nullptr) return nullptr;
    const ObjectModel& model = models.at(object_id);
    Observation obs;
    try {
      obs = make_observation(frame, object_id, prepare_gt_mask(ann->mask, config), config.n_points,
                             derive_seed(stream, {static_cast<std::uint64_t>(frame.frame_id),
                                                  static_cast<std::uint64_t>(object_id)}));
    } catch (const NoValidDepth&) {
      return nullptr;
    }
    const Points3 pts = sample_model_points(model, config.loss_points,
                                            derive_seed(stream, {static_cast<std::uint64_t>(frame.frame_id),
                                                                 static_cast<std::uint64_t>(object_id), 7}));
    const FusionOutputs out = net.forward(g, obs);
    return pose_loss_node(g, out.raw_quaternion, out.translation, out.confidence, ann->pose, pts, model.symmetric,
                          config.confidence_weight, config.use_confidence);
  };

  {
    double total = 0.0;
    int count = 0;
    for (const Sample& s : samples) {
      Graph g(false);
      if (Var l = instance_loss(g, train[s.frame], s.object_id, derive_seed(config.seed, {0xf05, 2}))) {
        total += l->value[0];
        ++count;
      }
    }
    result.initial_loss = count ? total / count : 0.0;
  }

  const std::vector<RgbdFrame>& scored = heldout.empty() ? train : heldout;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    opt.set_epoch(epoch, config.epochs);
    std::shuffle(order.begin(), order.end(), rng);
    const std::uint64_t stream = derive_seed(config.seed, {0xf05, 3, static_cast<std::uint64_t>(epoch)});
    double total = 0.0;
    int count = 0, in_batch = 0;
    for (std::size_t idx : order) {
      const Sample& s = samples[idx];
      Var loss;
      Graph g;
      if (config.augment_roll) {
        const RgbdFrame rolled = roll_frame(train[s.frame], angle_dist(rng));
        loss = instance_loss(g, rolled, s.object_id, stream);
      } else {
        loss = instance_loss(g, train[s.frame], s.object_id, stream);
      }
      if (!loss) continue;
      total += loss->value[0];
      ++count;
      g.backward(g.scale(loss, inv_batch));
      if (++in_batch == config.batch_size) {
        opt.step(net.params());
        in_batch = 0;
      }
    }
    if (in_batch > 0) opt.step(net.params());
    PoseEpochLog log{epoch + 1, count ? total / count : 0.0, heldout_add_mm(net, scored, models)};
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  net.params().quantize_to_float();
  return result;
}

}  // namespace maskpose
