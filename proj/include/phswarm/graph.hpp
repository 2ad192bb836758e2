#pragma once

#include <Eigen/Dense>

#include <vector>

namespace phswarm {

// Undirected communication graph over n robots. Weights live in [0, 1], the
// matrix is symmetric, and every robot keeps a strictly positive self-loop.
// Immutable after construction; safe for shared concurrent reads.
class CommGraph {
 public:
  explicit CommGraph(Eigen::MatrixXd adjacency);

  int size() const { return static_cast<int>(adj_.rows()); }
  const Eigen::MatrixXd& adjacency() const { return adj_; }
  double weight(int i, int j) const { return adj_(i, j); }
  bool connected(int i, int j) const { return adj_(i, j) > 0.0; }

 private:
  Eigen::MatrixXd adj_;
};

// Fixed ring: robot i talks to (i +- 1) mod n, plus itself.
CommGraph build_ring(int n);

// Distance-gated graph: weight sigmoid(lambda * (d - l/2)) for d < l, zero
// beyond the radius; the diagonal is 1. positions is n x m (row per robot).
CommGraph build_proximity(const Eigen::MatrixXd& positions, double l,
                          double lambda);

// Robots reachable within k edges of i, treating any strictly positive weight
// as an edge. Sorted ascending; k = 0 yields {i}.
std::vector<int> khop_neighbors(const CommGraph& g, int i, int k);

}  // namespace phswarm
