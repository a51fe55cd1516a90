#include <doctest.h>

#include <random>

#include "fixtures.hpp"
#include "maskpose/kdtree.hpp"

using namespace maskpose;

TEST_CASE("nearest neighbors match brute force") {
  std::mt19937_64 rng(4);
  for (int n : {1, 2, 7, 100, 1000}) {
    const Points3 pts = testing::random_points(rng, n, 1.0);
    const KdTree3 tree(pts);
    CHECK(tree.size() == n);
    for (int q = 0; q < 200; ++q) {
      const Eigen::Vector3d x = testing::random_points(rng, 1, 1.2).row(0).transpose();
      Eigen::Index best = 0;
      double best_d = (pts.row(0).transpose() - x).squaredNorm();
      for (Eigen::Index i = 1; i < n; ++i) {
        const double d = (pts.row(i).transpose() - x).squaredNorm();
        if (d < best_d) best_d = d, best = i;
      }
      const KdTree3::Hit hit = tree.nearest(x);
      CHECK(hit.index == best);
      CHECK(hit.squared_distance == best_d);
    }
  }
}

TEST_CASE("duplicate points resolve to the lowest index") {
  Points3 pts(5, 3);
  pts << 1, 0, 0, 0, 0, 0, 2, 2, 2, 0, 0, 0, 0, 0, 0;
  const KdTree3 tree(pts);
  CHECK(tree.nearest(Eigen::Vector3d(0.01, 0, 0)).index == 1);
  CHECK(tree.nearest(Eigen::Vector3d(0, 0, 0)).squared_distance == 0.0);
}
