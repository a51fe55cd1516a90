#include "maskpose/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "maskpose/errors.hpp"

namespace maskpose {
namespace {
constexpr int kLeafSize = 8;
}

KdTree3::KdTree3(Points3 points) : points_(std::move(points)) {
  if (points_.rows() == 0) throw InvalidArgument("KdTree3: empty point set");
  order_.resize(static_cast<std::size_t>(points_.rows()));
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(2 * order_.size() / kLeafSize + 1);
  build(0, static_cast<int>(order_.size()));
}

int KdTree3::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return id;

  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (int i = begin; i < end; ++i) {
    const Eigen::Vector3d p = points_.row(order_[static_cast<std::size_t>(i)]).transpose();
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) { return points_(a, axis) < points_(b, axis); });
  const double split = points_(order_[static_cast<std::size_t>(mid)], axis);

  const int left = build(begin, mid);
  const int right = build(mid, end);
  Node& node = nodes_[static_cast<std::size_t>(id)];
  node.axis = axis;
  node.split = split;
  node.left = left;
  node.right = right;
  return id;
}

KdTree3::Hit KdTree3::nearest(const Eigen::Vector3d& query) const {
  Hit best{-1, std::numeric_limits<double>::infinity()};
  search(0, query, best);
  return best;
}

void KdTree3::search(int node_id, const Eigen::Vector3d& q, Hit& best) const {
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  if (node.axis < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int idx = order_[static_cast<std::size_t>(i)];
      const double d = (points_.row(idx).transpose() - q).squaredNorm();
      if (d < best.squared_distance || (d == best.squared_distance && idx < best.index)) {
        best = {idx, d};
      }
    }
    return;
  }
  const double delta = q(node.axis) - node.split;
  const int near = delta < 0.0 ? node.left : node.right;
  const int far = delta < 0.0 ? node.right : node.left;
  search(near, q, best);
  // <= keeps equal-distance candidates on the far side reachable for the tie rule
  if (delta * delta <= best.squared_distance) search(far, q, best);
}

}  // namespace maskpose
