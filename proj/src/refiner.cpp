#include "maskpose/refiner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "maskpose/errors.hpp"
#include "maskpose/metrics.hpp"
#include "maskpose/random.hpp"

namespace maskpose {

using nn::Graph;
using nn::Tensor;
using nn::Var;

void RefinerConfig::validate() const {
  if (iterations < 1) throw InvalidArgument("refiner config: iterations must be >= 1");
  if (hidden < 1) throw InvalidArgument("refiner config: hidden must be >= 1");
  if (!(start_threshold > 0.0)) throw InvalidArgument("refiner config: start_threshold must be > 0");
  if (epochs < 0) throw InvalidArgument("refiner config: epochs must be >= 0");
  if (perturb_rotation < 0.0 || perturb_translation < 0.0) {
    throw InvalidArgument("refiner config: perturbations must be >= 0");
  }
  optimizer.validate();
}

nlohmann::json refiner_config_to_json(const RefinerConfig& c) {
  return {{"iterations", c.iterations},
          {"hidden", c.hidden},
          {"start_threshold", c.start_threshold},
          {"optimizer", nn::optimizer_to_json(c.optimizer)},
          {"epochs", c.epochs},
          {"perturb_rotation", c.perturb_rotation},
          {"perturb_translation", c.perturb_translation},
          {"seed", c.seed}};
}

RefinerConfig refiner_config_from_json(const nlohmann::json& j, RefinerConfig c) {
  try {
    c.iterations = j.value("iterations", c.iterations);
    c.hidden = j.value("hidden", c.hidden);
    c.start_threshold = j.value("start_threshold", c.start_threshold);
    if (j.contains("optimizer")) c.optimizer = nn::optimizer_from_json(j.at("optimizer"), c.optimizer);
    c.epochs = j.value("epochs", c.epochs);
    c.perturb_rotation = j.value("perturb_rotation", c.perturb_rotation);
    c.perturb_translation = j.value("perturb_translation", c.perturb_translation);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("refiner config: ") + e.what());
  }
  c.validate();
  return c;
}

RefineInput make_refine_input(const Observation& obs, const FusionOutputs& outputs) {
  return {obs.object_id, obs.points, outputs.color_emb->value, outputs.mask_emb->value};
}

RefinerNet::RefinerNet(RefinerConfig config, int d_color, int d_mask)
    : config_(std::move(config)), d_color_(d_color), d_mask_(d_mask) {
  config_.validate();
  if (d_color < 1 || d_mask < 1) throw InvalidArgument("refiner: embedding widths must be >= 1");
  std::mt19937_64 rng(derive_seed(config_.seed, {0x7ef}));
  const int h = config_.hidden;
  point_.push_back(nn::make_dense(params_, "point0", 3, 64, rng));
  point_.push_back(nn::make_dense(params_, "point1", 64, 64, rng));
  fuse_ = nn::make_dense(params_, "fuse", 64 + d_color + d_mask, h, rng);
  rot_.push_back(nn::make_dense(params_, "rot0", h, h, rng));
  rot_.push_back(nn::make_dense(params_, "rot1", h, 4, rng, true));
  trans_.push_back(nn::make_dense(params_, "trans0", h, h, rng));
  trans_.push_back(nn::make_dense(params_, "trans1", h, 3, rng, true));
  params_.quantize_to_float();
}

RefinerNet::Delta RefinerNet::forward(Graph& g, const Pose& current, const RefineInput& input) const {
  const int n = static_cast<int>(input.points.rows());
  if (n < 1) throw InvalidArgument("refine: no observed points");
  if (input.color_emb.rank() != 2 || input.color_emb.dim(0) != d_color_ || input.color_emb.dim(1) != n ||
      input.mask_emb.rank() != 2 || input.mask_emb.dim(0) != d_mask_ || input.mask_emb.dim(1) != n) {
    throw InvalidArgument("refine: embeddings must be [d, N] matching the network and the point count");
  }
  const Pose inv = current.inverse();
  const Eigen::Matrix3d r = inv.rotation_matrix();
  Tensor local({3, n});
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d p = r * input.points.row(i).transpose() + inv.translation();
    for (int a = 0; a < 3; ++a) local[static_cast<std::size_t>(a) * n + i] = p(a) / kGeometryScale;
  }
  Var h = nn::constant(std::move(local));
  for (const auto& layer : point_) h = g.silu(layer(g, h));
  Var feat = g.silu(fuse_(g, g.concat({h, nn::constant(input.color_emb), nn::constant(input.mask_emb)})));
  Var global = g.max_columns(feat);
  Var rq = rot_[1](g, g.silu(rot_[0](g, global)));
  Var rt = trans_[1](g, g.silu(trans_[0](g, global)));
  return {g.add_constant(rq, Tensor({4, 1}, {1.0, 0.0, 0.0, 0.0})), g.scale(rt, kGeometryScale)};
}

void RefinerNet::save(const std::filesystem::path& path, nlohmann::json extra) const {
  extra["kind"] = "refiner";
  extra["config"] = refiner_config_to_json(config_);
  extra["d_color"] = d_color_;
  extra["d_mask"] = d_mask_;
  nn::save_checkpoint(path, std::move(extra), params_);
}

RefinerNet RefinerNet::load(const std::filesystem::path& path) {
  const nn::Checkpoint ck = nn::read_checkpoint(path);
  if (ck.header.value("kind", "") != "refiner") throw ParseError(path.string() + " is not a refiner checkpoint");
  RefinerNet net(refiner_config_from_json(ck.header.at("config")), ck.header.at("d_color").get<int>(),
                 ck.header.at("d_mask").get<int>());
  net.params_.load(ck);
  return net;
}

Pose delta_pose(const RefinerNet::Delta& delta) {
  const Tensor& q = delta.raw_quaternion->value;
  const Tensor& t = delta.translation->value;
  return Pose::from_unnormalized(Eigen::Quaterniond(q[0], q[1], q[2], q[3]), Eigen::Vector3d(t[0], t[1], t[2]));
}

namespace {

bool is_identity(const RefinerNet::Delta& d) {
  const Tensor& q = d.raw_quaternion->value;
  const Tensor& t = d.translation->value;
  return q[0] == 1.0 && q[1] == 0.0 && q[2] == 0.0 && q[3] == 0.0 && t[0] == 0.0 && t[1] == 0.0 && t[2] == 0.0;
}

}  // namespace

Pose refine_step(const RefinerNet& net, const Pose& current, const RefineInput& input) {
  Graph g(false);
  const RefinerNet::Delta d = net.forward(g, current, input);
  if (is_identity(d)) return Pose::identity();
  return compose(compose(current, delta_pose(d)), current.inverse());
}

PosePrediction refine(const RefinerNet& net, const PosePrediction& initial, const RefineInput& input,
                      int iterations) {
  if (iterations < 1) throw InvalidArgument("refine: iterations must be >= 1");
  PosePrediction out = initial;
  for (int k = 0; k < iterations; ++k) {
    Graph g(false);
    const RefinerNet::Delta d = net.forward(g, out.pose, input);
    if (is_identity(d)) continue;
    const Pose residual = compose(compose(out.pose, delta_pose(d)), out.pose.inverse());
    out.pose = compose(residual, out.pose);
  }
  out.refined = true;
  return out;
}

namespace {

struct RefineSample {
  const ObjectModel* model = nullptr;
  Pose gt;
  PosePrediction initial;
  RefineInput input;
};

std::vector<RefineSample> prepare(const std::vector<RgbdFrame>& frames, const ModelCatalog& models,
                                  const PoseNet& main) {
  const FusionConfig& c = main.config();
  std::vector<RefineSample> out;
  for (const RgbdFrame& f : frames) {
    for (const Annotation& a : f.annotations) {
      const auto it = models.find(a.object_id);
      if (it == models.end()) throw InvalidArgument("refiner_train: no model for object " + std::to_string(a.object_id));
      Observation obs;
      try {
        obs = make_observation(f, a.object_id, prepare_gt_mask(a.mask, c), c.n_points,
                               observation_seed(c.seed, f.frame_id, a.object_id));
      } catch (const NoValidDepth&) {
        continue;
      }
      Graph g(false);
      const FusionOutputs outputs = main.forward(g, obs);
      const DensePrediction dense = to_dense_prediction(outputs);
      PosePrediction initial = c.use_confidence ? select_pose(dense, a.object_id) : average_pose(dense, a.object_id);
      out.push_back({&it->second, a.pose, initial, make_refine_input(obs, outputs)});
    }
  }
  return out;
}

double instance_error(const RefineSample& s, const Pose& pred) {
  return s.model->symmetric ? add_s(s.model->points, s.gt, pred) : add(s.model->points, s.gt, pred);
}

double mean_add_mm(const RefinerNet* net, const std::vector<RefineSample>& samples) {
  if (samples.empty()) return 0.0;
  double sum = 0.0;
  for (const RefineSample& s : samples) {
    const Pose pred = net ? refine(*net, s.initial, s.input, net->config().iterations).pose : s.initial.pose;
    sum += instance_error(s, pred);
  }
  return 1000.0 * sum / static_cast<double>(samples.size());
}

Pose perturb(const Pose& pose, double rot_std, double trans_std, std::mt19937_64& rng) {
  if (rot_std == 0.0 && trans_std == 0.0) return pose;
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Eigen::Vector3d axis_angle(rot_std * gauss(rng), rot_std * gauss(rng), rot_std * gauss(rng));
  const Eigen::Vector3d dt(trans_std * gauss(rng), trans_std * gauss(rng), trans_std * gauss(rng));
  const double angle = axis_angle.norm();
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
  if (angle > 0.0) q = Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis_angle / angle));
  return Pose(q * pose.rotation(), pose.translation() + dt);
}

}  // namespace

RefinerTrainResult refiner_train(const std::vector<RgbdFrame>& train, const std::vector<RgbdFrame>& heldout,
                                 const ModelCatalog& models, const PoseNet& main, double main_train_loss,
                                 const RefinerConfig& config,
                                 const std::function<void(const RefinerEpochLog&)>& on_epoch) {
  config.validate();
  if (!(main_train_loss < config.start_threshold)) {
    throw MissingPrerequisite("refiner training needs a main network with mean train loss below " +
                              std::to_string(config.start_threshold) + " (current " +
                              std::to_string(main_train_loss) + "); train the pose stage longer");
  }
  const std::vector<RefineSample> samples = prepare(train, models, main);
  if (samples.empty()) throw InvalidArgument("refiner_train: no usable training instances");
  const std::vector<RefineSample> scored = heldout.empty() ? samples : prepare(heldout, models, main);
  const FusionConfig& mc = main.config();

  RefinerTrainResult result{RefinerNet(config, mc.d_color, mc.d_mask), {}, 0.0, 0};
  RefinerNet& net = result.net;
  result.baseline_add_mm = mean_add_mm(nullptr, scored);
  double best = mean_add_mm(&net, scored);
  std::vector<Tensor> best_values;
  for (const auto& e : net.params().entries()) best_values.push_back(e.second->value);

  nn::Optimizer opt(config.optimizer);
  std::mt19937_64 rng(derive_seed(config.seed, {0x7ef, 1}));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    opt.set_epoch(epoch, config.epochs);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    int terms = 0;
    for (std::size_t idx : order) {
      const RefineSample& s = samples[idx];
      const Points3 pts = sample_model_points(*s.model, mc.loss_points,
                                              derive_seed(config.seed, {0x7ef, 2, static_cast<std::uint64_t>(epoch), idx}));
      Pose pose = perturb(s.initial.pose, config.perturb_rotation, config.perturb_translation, rng);
      for (int k = 0; k < config.iterations; ++k) {
        Graph g;
        const RefinerNet::Delta d = net.forward(g, pose, s.input);
        const Pose target = compose(pose.inverse(), s.gt);
        Var loss = pose_loss_node(g, d.raw_quaternion, d.translation, nullptr, target, pts, s.model->symmetric,
                                  mc.confidence_weight, false);
        total += loss->value[0];
        ++terms;
        g.backward(g.scale(loss, 1.0 / config.iterations));
        pose = compose(pose, delta_pose(d));
      }
      opt.step(net.params());
    }
    net.params().quantize_to_float();
    const double score = mean_add_mm(&net, scored);
    if (score < best) {
      best = score;
      result.best_epoch = epoch + 1;
      best_values.clear();
      for (const auto& e : net.params().entries()) best_values.push_back(e.second->value);
    }
    RefinerEpochLog log{epoch + 1, terms ? total / terms : 0.0, score};
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  for (std::size_t i = 0; i < best_values.size(); ++i) net.params().entries()[i].second->value = best_values[i];
  net.params().quantize_to_float();
  return result;
}

}  // namespace maskpose
