#include "maskpose/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "maskpose/errors.hpp"
#include "maskpose/kdtree.hpp"

namespace maskpose {

double add(const Points3& model_points, const Pose& gt, const Pose& pred) {
  if (model_points.rows() == 0) throw InvalidArgument("add: empty model points");
  const Points3 a = apply_pose(gt, model_points);
  const Points3 b = apply_pose(pred, model_points);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) sum += (a.row(i) - b.row(i)).norm();
  return sum / static_cast<double>(a.rows());
}

double add_s(const Points3& model_points, const Pose& gt, const Pose& pred) {
  if (model_points.rows() == 0) throw InvalidArgument("add_s: empty model points");
  const Points3 a = apply_pose(gt, model_points);
  const KdTree3 tree(apply_pose(pred, model_points));
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    sum += std::sqrt(tree.nearest(a.row(i).transpose()).squared_distance);
  }
  return sum / static_cast<double>(a.rows());
}

PoseErrorRecord score_pose(int frame_id, const ObjectModel& model, const Pose& gt,
                           const Pose& pred) {
  PoseErrorRecord r;
  r.frame_id = frame_id;
  r.object_id = model.object_id;
  r.failed = false;
  r.add_s_error = add_s(model.points, gt, pred);
  r.metric_kind = model.symmetric ? MetricKind::add_s : MetricKind::add;
  r.error = model.symmetric ? r.add_s_error : add(model.points, gt, pred);
  return r;
}

PoseErrorRecord failed_record(int frame_id, const ObjectModel& model) {
  PoseErrorRecord r;
  r.frame_id = frame_id;
  r.object_id = model.object_id;
  r.metric_kind = model.symmetric ? MetricKind::add_s : MetricKind::add;
  return r;
}

std::map<int, double> accuracy_add_10pct(std::span<const PoseErrorRecord> records,
                                         const ModelCatalog& models) {
  std::map<int, std::pair<int, int>> counts;  // correct, total
  for (const auto& r : records) {
    const auto it = models.find(r.object_id);
    if (it == models.end()) {
      throw InvalidArgument("accuracy_add_10pct: unknown object id " + std::to_string(r.object_id));
    }
    auto& [correct, total] = counts[r.object_id];
    ++total;
    if (!r.failed && r.error < kAddDiameterFraction * it->second.diameter) ++correct;
  }
  std::map<int, double> out;
  for (const auto& [id, c] : counts) out[id] = 100.0 * c.first / c.second;
  return out;
}

double auc(std::span<const double> errors, double max_threshold) {
  if (errors.empty()) throw InvalidArgument("auc: empty error list");
  if (!(max_threshold > 0.0)) throw InvalidArgument("auc: threshold must be > 0");
  double sum = 0.0;
  for (double e : errors) {
    if (std::isnan(e) || e < 0.0) throw InvalidArgument("auc: errors must be >= 0");
    sum += std::max(0.0, 1.0 - e / max_threshold);
  }
  return 100.0 * sum / static_cast<double>(errors.size());
}

double pct_below(std::span<const double> errors, double threshold) {
  if (errors.empty()) throw InvalidArgument("pct_below: empty error list");
  const auto hits = std::count_if(errors.begin(), errors.end(),
                                  [&](double e) { return e < threshold; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(errors.size());
}

std::vector<CurvePoint> accuracy_curve(std::span<const double> errors, double max_threshold,
                                       int steps) {
  if (steps < 2) throw InvalidArgument("accuracy_curve: need at least 2 steps");
  std::vector<CurvePoint> curve;
  curve.reserve(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    const double t = max_threshold * k / (steps - 1);
    curve.push_back({t, pct_below(errors, t)});
  }
  return curve;
}

MetricsReport build_report(std::span<const PoseErrorRecord> records, const ModelCatalog& models) {
  if (records.empty()) throw InvalidArgument("build_report: no records");
  const auto acc = accuracy_add_10pct(records, models);
  MetricsReport report;
  for (const auto& [id, add_acc] : acc) {
    std::vector<double> errs;
    for (const auto& r : records) {
      if (r.object_id == id) errs.push_back(r.failed ? kFailedError : r.add_s_error);
    }
    report.objects.push_back(
        {id, static_cast<int>(errs.size()), add_acc, auc(errs), pct_below(errs)});
  }
  const double k = static_cast<double>(report.objects.size());
  for (const auto& o : report.objects) {
    report.average.n += o.n;
    report.average.add_acc_10pct += o.add_acc_10pct / k;
    report.average.auc += o.auc / k;
    report.average.pct_below_2cm += o.pct_below_2cm / k;
  }
  return report;
}

nlohmann::json report_to_json(const MetricsReport& report) {
  nlohmann::json j;
  j["objects"] = nlohmann::json::array();
  for (const auto& o : report.objects) {
    j["objects"].push_back({{"object_id", o.object_id},
                            {"n", o.n},
                            {"add_acc_10pct", o.add_acc_10pct},
                            {"auc", o.auc},
                            {"pct_below_2cm", o.pct_below_2cm}});
  }
  j["average"] = {{"n", report.average.n},
                  {"add_acc_10pct", report.average.add_acc_10pct},
                  {"auc", report.average.auc},
                  {"pct_below_2cm", report.average.pct_below_2cm}};
  return j;
}

MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    for (const auto& o : j.at("objects")) {
      r.objects.push_back({o.at("object_id").get<int>(), o.at("n").get<int>(),
                           o.at("add_acc_10pct").get<double>(), o.at("auc").get<double>(),
                           o.at("pct_below_2cm").get<double>()});
    }
    const auto& a = j.at("average");
    r.average = {0, a.at("n").get<int>(), a.at("add_acc_10pct").get<double>(),
                 a.at("auc").get<double>(), a.at("pct_below_2cm").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metrics report: ") + e.what());
  }
  return r;
}

namespace {

std::string csv_row(const std::string& id, const ObjectMetrics& o) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%d,%.17g,%.17g,%.17g\n", id.c_str(), o.n, o.add_acc_10pct,
                o.auc, o.pct_below_2cm);
  return buf;
}

}  // namespace

std::string report_to_csv(const MetricsReport& report) {
  std::string out = "object_id,n,add_acc_10pct,auc,pct_below_2cm\n";
  for (const auto& o : report.objects) out += csv_row(std::to_string(o.object_id), o);
  out += csv_row("average", report.average);
  return out;
}

MetricsReport report_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "object_id,n,add_acc_10pct,auc,pct_below_2cm") {
    throw ParseError("metrics csv: unexpected header");
  }
  MetricsReport r;
  bool have_average = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id, n, a, u, p;
    if (!std::getline(row, id, ',') || !std::getline(row, n, ',') || !std::getline(row, a, ',') ||
        !std::getline(row, u, ',') || !std::getline(row, p)) {
      throw ParseError("metrics csv: malformed row '" + line + "'");
    }
    ObjectMetrics o{0, std::stoi(n), std::stod(a), std::stod(u), std::stod(p)};
    if (id == "average") {
      r.average = o;
      have_average = true;
    } else {
      o.object_id = std::stoi(id);
      r.objects.push_back(o);
    }
  }
  if (!have_average) throw ParseError("metrics csv: missing average row");
  return r;
}

}  // namespace maskpose
