#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "phswarm/deploy.hpp"
#include "phswarm/training.hpp"

namespace phswarm {

// Flat typed key=value configuration with section prefixes (task.*,
// policy.*, train.*, deploy.*). Unknown keys are rejected at parse time.
struct RunConfig {
  TaskConfig task;
  PolicyConfig policy = PolicyConfig::standard();
  TrainConfig train;

  int deploy_n = 12;
  double deploy_horizon = 10.0;
  std::uint64_t deploy_seed = 0;
  bool deploy_stale = false;
  bool deploy_check_centralized = false;
  bool deploy_plot = false;

  // Re-derives dependent defaults (policy head input sizes from task.m).
  void finalize();

  std::string canonical_string() const;
  std::string config_hash() const;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Applies `key = value` to the config; throws ConfigError on unknown keys or
// unparsable values.
void apply_key(RunConfig& cfg, const std::string& key,
               const std::string& value);

// Parses a config file (# comments, blank lines allowed).
void load_config_file(RunConfig& cfg, const std::string& path);

// ---- artifact writers ----

void write_loss_csv(const std::string& path,
                    const std::vector<EvalRecord>& history,
                    const std::string& config_hash);

void write_trajectory_csv(const std::string& path,
                          const std::vector<JointState>& states, int m,
                          double T, const std::string& config_hash);

// 2-D position trajectories as a static SVG plot.
void write_trajectory_svg(const std::string& path,
                          const std::vector<JointState>& states, int m);

struct DeployMetrics {
  std::string config_hash;
  std::string task;
  int n = 0;
  int steps = 0;
  double T = 0.0;
  double min_pairwise_distance = 0.0;
  double max_speed = 0.0;
  double final_goal_loss = 0.0;
  long messages_round1 = 0, messages_round2 = 0, messages_round3 = 0;
  std::optional<double> stale_control_deviation;  // mean over steps
};

void write_deploy_metrics(const std::string& path, const DeployMetrics& m);

struct EvalMetrics {
  std::string config_hash;
  int n = 0;
  int trajectories = 0;
  double loss_per_robot_mean = 0.0;  // trajectory loss normalized by n
  double loss_per_robot_std = 0.0;
  double min_pairwise_distance = 0.0;
  std::vector<double> per_trajectory_loss;
};

void write_eval_metrics(const std::string& path, const EvalMetrics& m);

}  // namespace phswarm
