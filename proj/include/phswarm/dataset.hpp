#pragma once

#include <string>
#include <vector>

#include "phswarm/expert.hpp"

namespace phswarm {

// L demonstrated trajectories of K+1 joint states each, plus the final
// demonstrated state of every trajectory (the goal used for the policy's
// self-offset input).
struct TrajectoryDataset {
  TaskConfig config;
  std::vector<std::vector<JointState>> trajectories;  // L x (K+1), nx x n
  std::vector<JointState> goals;                      // L, nx x n

  int samples() const {
    return trajectories.empty() ? 0
                                : static_cast<int>(trajectories[0].size());
  }
};

// Rolls out the expert closed loop with the configured integrator, rebuilding
// the communication graph every step for the time-varying tasks. Trajectories
// use independent seed streams derived from config.seed. Throws (with the
// trajectory index in the message) if a state turns non-finite.
TrajectoryDataset generate_dataset(const TaskConfig& cfg);

// On-disk form: <prefix>.json manifest plus <prefix>.bin of little-endian
// f64 in [trajectory][time][robot][component] order, goals appended after
// the state block. Round trips are bitwise.
void save_dataset(const std::string& prefix, const TrajectoryDataset& ds);
TrajectoryDataset load_dataset(const std::string& prefix);

// Same ordering as the binary, one row per (trajectory, sample, robot).
void export_dataset_csv(const std::string& path, const TrajectoryDataset& ds);

// Smallest inter-robot distance over a whole trajectory.
double min_pairwise_distance(const std::vector<JointState>& traj, int m);
double min_pairwise_distance(const JointState& x, int m);

// Sum over robots of || v_i - mean velocity ||.
double velocity_disagreement(const JointState& x, int m);

}  // namespace phswarm
