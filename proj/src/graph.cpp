#include "phswarm/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace phswarm {

CommGraph::CommGraph(Eigen::MatrixXd adjacency) : adj_(std::move(adjacency)) {
  if (adj_.rows() != adj_.cols()) {
    throw std::invalid_argument("adjacency must be square");
  }
  for (Eigen::Index i = 0; i < adj_.rows(); ++i) {
    if (adj_(i, i) <= 0.0) {
      throw std::invalid_argument("adjacency needs positive self-loops");
    }
    for (Eigen::Index j = 0; j < adj_.cols(); ++j) {
      if (adj_(i, j) != adj_(j, i)) {
        throw std::invalid_argument("adjacency must be symmetric");
      }
      if (adj_(i, j) < 0.0 || adj_(i, j) > 1.0) {
        throw std::invalid_argument("weights must lie in [0, 1]");
      }
    }
  }
}

CommGraph build_ring(int n) {
  if (n < 2) throw std::invalid_argument("ring needs n >= 2");
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    a(i, i) = 1.0;
    a(i, (i + 1) % n) = 1.0;
    a(i, (i + n - 1) % n) = 1.0;
  }
  return CommGraph(a);
}

CommGraph build_proximity(const Eigen::MatrixXd& positions, double l,
                          double lambda) {
  if (l <= 0.0) throw std::invalid_argument("proximity radius must be > 0");
  const int n = static_cast<int>(positions.rows());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    a(i, i) = 1.0;
    for (int j = i + 1; j < n; ++j) {
      const double d = (positions.row(i) - positions.row(j)).norm();
      if (d < l) {
        const double w = 1.0 / (1.0 + std::exp(-lambda * (d - 0.5 * l)));
        a(i, j) = w;
        a(j, i) = w;
      }
    }
  }
  return CommGraph(a);
}

std::vector<int> khop_neighbors(const CommGraph& g, int i, int k) {
  const int n = g.size();
  if (i < 0 || i >= n) throw std::out_of_range("robot index out of range");
  if (k < 0) throw std::invalid_argument("hop count must be >= 0");

  // Boolean BFS up to depth k. The support condition is weight > 0 exactly;
  // small sigmoid weights still count as edges.
  std::vector<int> dist(n, -1);
  dist[i] = 0;
  std::vector<int> frontier = {i};
  for (int depth = 0; depth < k && !frontier.empty(); ++depth) {
    std::vector<int> next;
    for (int u : frontier) {
      for (int v = 0; v < n; ++v) {
        if (dist[v] < 0 && g.connected(u, v)) {
          dist[v] = depth + 1;
          next.push_back(v);
        }
      }
    }
    frontier = std::move(next);
  }

  std::vector<int> out;
  for (int v = 0; v < n; ++v) {
    if (dist[v] >= 0) out.push_back(v);
  }
  return out;
}

}  // namespace phswarm
