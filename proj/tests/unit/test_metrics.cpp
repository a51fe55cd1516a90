#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "maskpose/datasets.hpp"
#include "maskpose/errors.hpp"
#include "maskpose/metrics.hpp"

using namespace maskpose;
using testing::random_points;
using testing::random_pose;

namespace {

double brute_add_s(const Points3& m, const Pose& gt, const Pose& pred) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const Eigen::Vector3d a = gt * m.row(i).transpose();
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m.rows(); ++j) best = std::min(best, (a - pred * m.row(j).transpose()).norm());
    sum += best;
  }
  return sum / static_cast<double>(m.rows());
}

ObjectModel toy_model(int id, double diameter, bool symmetric) {
  ObjectModel m;
  m.object_id = id;
  m.points = Points3::Zero(2, 3);
  m.points(1, 0) = diameter;
  m.diameter = diameter;
  m.symmetric = symmetric;
  return m;
}

}  // namespace

TEST_CASE("add of a pure translation is its length") {
  std::mt19937_64 rng(5);
  const Points3 m = random_points(rng, 100);
  const Pose gt = random_pose(rng);
  const Eigen::Vector3d dt(0.01, -0.02, 0.005);
  const Pose pred(gt.rotation(), gt.translation() + dt);
  CHECK(std::abs(add(m, gt, pred) - dt.norm()) < 1e-12);
  CHECK(add(m, gt, gt) == 0.0);
  CHECK(add_s(m, gt, gt) == 0.0);
  CHECK_THROWS_AS(add(Points3(0, 3), gt, gt), InvalidArgument);
}

TEST_CASE("add_s matches brute force and never exceeds add") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const Points3 m = random_points(rng, 60);
    const Pose gt = random_pose(rng), pred = random_pose(rng);
    const double s = add_s(m, gt, pred);
    CHECK(std::abs(s - brute_add_s(m, gt, pred)) < 1e-12);
    CHECK(s <= add(m, gt, pred) + 1e-15);
  }
}

TEST_CASE("symmetric plate turned a quarter turn") {
  ObjectModel plate;
  for (const auto& m : builtin_catalog()) {
    if (m.object_id == kPlate) plate = m;
  }
  REQUIRE(plate.symmetric);
  const Pose gt(Eigen::Quaterniond::Identity(), Eigen::Vector3d(0, 0, 0.8));
  const Pose turned(Eigen::Quaterniond(Eigen::AngleAxisd(std::numbers::pi / 2, Eigen::Vector3d::UnitZ())),
                    gt.translation());
  CHECK(add_s(plate.points, gt, turned) < 1e-6);
  CHECK(add(plate.points, gt, turned) > 0.01);
  const PoseErrorRecord r = score_pose(3, plate, gt, turned);
  CHECK(r.metric_kind == MetricKind::add_s);
  CHECK(r.error == r.add_s_error);
}

TEST_CASE("auc closed form") {
  const std::vector<double> half{0.05};
  CHECK(std::abs(auc(half) - 50.0) < 1e-9);
  const std::vector<double> perfect{0.0, 0.0};
  CHECK(auc(perfect) == 100.0);
  const std::vector<double> failed{kFailedError, 0.0};
  CHECK(auc(failed) == 50.0);
  const std::vector<double> far{0.2};
  CHECK(auc(far) == 0.0);
  CHECK_THROWS_AS(auc(std::vector<double>{}), InvalidArgument);
  CHECK_THROWS_AS(auc(std::vector<double>{-1.0}), InvalidArgument);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 0.15);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> errors(50);
    for (double& e : errors) e = u(rng);
    // Midpoint rule over the accuracy curve.
    const int steps = 10000;
    double integral = 0.0;
    for (int k = 0; k < steps; ++k) {
      const double t = kAucMaxThreshold * (k + 0.5) / steps;
      integral += pct_below(errors, t);
    }
    CHECK(std::abs(auc(errors) - integral / steps) < 0.05);
  }
}

TEST_CASE("pct_below is strict") {
  const std::vector<double> e{0.01, 0.02, 0.03, kFailedError};
  CHECK(pct_below(e) == 25.0);
  CHECK(pct_below(e, 0.0200001) == 50.0);
}

TEST_CASE("accuracy curve spans 0 to the max threshold") {
  const std::vector<double> e{0.0, 0.05, kFailedError};
  const auto curve = accuracy_curve(e);
  REQUIRE(curve.size() == 200);
  CHECK(curve.front().threshold == 0.0);
  CHECK(curve.front().accuracy == 0.0);
  CHECK(curve.back().threshold == doctest::Approx(kAucMaxThreshold));
  CHECK(curve.back().accuracy == doctest::Approx(200.0 / 3.0));
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].accuracy >= curve[i - 1].accuracy);
}

TEST_CASE("reports aggregate per object with an unweighted average") {
  ModelCatalog models{{1, toy_model(1, 0.1, false)}, {2, toy_model(2, 0.2, true)}};
  std::vector<PoseErrorRecord> records;
  auto rec = [](int obj, double err) {
    PoseErrorRecord r;
    r.object_id = obj;
    r.error = r.add_s_error = err;
    r.failed = !std::isfinite(err);
    return r;
  };
  records.push_back(rec(1, 0.005));
  records.push_back(rec(1, 0.011));
  records.push_back(rec(1, kFailedError));
  records.push_back(rec(2, 0.019));
  const auto acc = accuracy_add_10pct(records, models);
  CHECK(acc.at(1) == doctest::Approx(100.0 / 3.0));
  CHECK(acc.at(2) == 100.0);

  const MetricsReport report = build_report(records, models);
  REQUIRE(report.objects.size() == 2);
  CHECK(report.objects[0].n == 3);
  CHECK(report.average.n == 4);
  CHECK(report.average.add_acc_10pct == doctest::Approx((100.0 / 3.0 + 100.0) / 2.0));
  CHECK(report.objects[1].pct_below_2cm == 100.0);

  CHECK(report_from_json(report_to_json(report)) == report);
  CHECK(report_from_csv(report_to_csv(report)) == report);
  CHECK_THROWS_AS(build_report(std::vector<PoseErrorRecord>{}, models), InvalidArgument);
  records.push_back(rec(9, 0.0));
  CHECK_THROWS_AS(accuracy_add_10pct(records, models), InvalidArgument);
}

TEST_CASE("errors are invariant to a shared rigid motion") {
  std::mt19937_64 rng(8);
  const Points3 m = random_points(rng, 80);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose gt = random_pose(rng), pred = random_pose(rng), g = random_pose(rng, 2.0);
    CHECK(std::abs(add(m, compose(g, gt), compose(g, pred)) - add(m, gt, pred)) < 1e-9);
    CHECK(std::abs(add_s(m, compose(g, gt), compose(g, pred)) - add_s(m, gt, pred)) < 1e-9);
  }
}
