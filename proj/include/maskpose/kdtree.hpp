#pragma once

#include <vector>

#include "maskpose/geometry.hpp"

namespace maskpose {

/// Static 3D k-d tree answering exact nearest-neighbor queries.
class KdTree3 {
 public:
  struct Hit {
    Eigen::Index index = -1;
    double squared_distance = 0.0;
  };

  explicit KdTree3(Points3 points);

  /// Exact nearest stored point. Ties resolve to the lowest index.
  Hit nearest(const Eigen::Vector3d& query) const;

  Eigen::Index size() const { return points_.rows(); }
  const Points3& points() const { return points_; }

 private:
  struct Node {
    int begin = 0;
    int end = 0;
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    int left = -1;
    int right = -1;
  };

  int build(int begin, int end);
  void search(int node, const Eigen::Vector3d& q, Hit& best) const;

  Points3 points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace maskpose
