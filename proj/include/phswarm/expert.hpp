#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "phswarm/dynamics.hpp"
#include "phswarm/graph.hpp"
#include "phswarm/util.hpp"

namespace phswarm {

enum class Task { kFixedSwap, kTvSwap, kFlocking };

std::string task_name(Task t);
Task task_from_name(const std::string& name);

// Expert and dataset configuration. The flocking constants (d, r, eps, h,
// a, b) and the initial-condition layout are exposed here so published
// values can be reproduced without code changes.
struct TaskConfig {
  Task task = Task::kFixedSwap;
  int n = 4;
  int m = 2;

  // swapping expert gains
  double c1 = 0.8;
  double c2 = 1.0;
  double sigma = 0.1;

  // communication radius and slope of the distance-gated graph
  double l = 2.4;
  double lambda = 2.0;

  // flocking controller constants
  double flock_d = 1.0;    // desired lattice distance
  double flock_r = 1.2;    // interaction range
  double flock_eps = 0.1;  // sigma-norm curvature
  double flock_h = 0.2;    // bump plateau fraction
  double flock_a = 5.0;    // potential gains
  double flock_b = 5.0;

  // sampling
  int K = 250;       // samples per trajectory (K+1 states stored)
  double T = 0.04;   // sampling interval, seconds
  int L = 400;       // trajectory count
  std::uint64_t seed = 0;
  bool use_rk4 = false;  // expert integration; default matches the learner

  // initial conditions
  double column_offset = 1.5;  // swapping columns at x = +-offset
  double row_spacing = 1.0;
  double position_jitter = 0.1;
  double flock_box = 4.0;      // side of the flocking spawn square
  double flock_vel = 0.5;      // velocity bound

  int nx() const { return 2 * m; }
  void validate() const;
  std::string canonical_string() const;  // stable key=value dump for hashing
};

// Smooth norm surrogate (1/eps)(sqrt(1 + eps ||z||^2) - 1).
double sigma_norm(const Eigen::VectorXd& z, double eps);
double sigma_norm_scalar(double r, double eps);

// 1 on [0, h), cosine taper on [h, 1], 0 outside.
double bump(double z, double h);

// Pairwise lattice potential, zero at the desired spacing when a == b.
double flocking_potential(double z, const TaskConfig& cfg);

// Lattice-forming flocking with velocity consensus over the 1-hop neighbors.
Eigen::MatrixXd flocking_control(const JointState& x, const CommGraph& g,
                                 const TaskConfig& cfg);

// Goal-offset swapping controller with smooth pairwise repulsion.
Eigen::MatrixXd swapping_control(const JointState& x, const CommGraph& g,
                                 const TaskConfig& cfg,
                                 const JointState& goal);

// Dispatch on cfg.task.
Eigen::MatrixXd expert_control(const JointState& x, const CommGraph& g,
                               const TaskConfig& cfg, const JointState& goal);

// Communication graph for the current state: fixed ring for fixed swapping,
// distance-gated otherwise.
CommGraph task_graph(const TaskConfig& cfg, const JointState& x);

// Seeded initial state: two jittered columns for the swapping tasks, a
// uniform box with random velocities for flocking.
JointState initial_state(const TaskConfig& cfg, Rng& rng);

// Nominal goal formation. For swapping each robot's target is the initial
// position of its diagonally opposite partner, with zero velocity; for
// flocking the origin-consensus state.
JointState task_goals(const TaskConfig& cfg, const JointState& x0);

}  // namespace phswarm
