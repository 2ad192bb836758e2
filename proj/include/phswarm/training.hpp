#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "phswarm/dataset.hpp"
#include "phswarm/policy.hpp"

namespace phswarm {

enum class Optimizer { kSgd, kAdam };

struct TrainConfig {
  int epochs = 10000;
  double learning_rate = 0.001;
  int batch_size = 200;
  int rebatch_every = 100;   // epochs between fresh batches
  int subtraj_len = 5;       // samples per sub-trajectory
  Optimizer optimizer = Optimizer::kSgd;
  std::uint64_t seed = 0;
  int eval_every = 25;
  int threads = 0;           // 0 = hardware concurrency
  double held_out_fraction = 0.1;
  double divergence_guard = 1e6;  // state magnitude that aborts a step
};

// One rollout problem: start state, the trajectory's goal formation (the
// policy's self-offset reference), and the demonstrated samples to match.
struct BatchItem {
  JointState x0;
  JointState goals;
  std::vector<JointState> targets;  // x_bar at steps 1..S-1
};

// Thrown when a rollout state exceeds the divergence guard.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Squared distance between two joint states.
double pair_loss(const JointState& a, const JointState& b);

// Trajectory-matching loss: mean squared distance over all compared samples
// (indices 1.. of each trajectory; index 0 is the shared start state).
double trajectory_set_loss(const std::vector<std::vector<JointState>>& gen,
                           const std::vector<std::vector<JointState>>& demo);

// Differentiable Euler rollout of the learned closed loop; returns all S
// states including x0. The communication graph is rebuilt from the current
// positions every step for time-varying tasks.
std::vector<ad::Var> rollout_on_tape(ad::Tape& tape, const PolicyConfig& cfg,
                                     const PolicyVars& vars,
                                     const BaseVars& base,
                                     const TaskConfig& task,
                                     const JointState& x0,
                                     const JointState& goals, int steps,
                                     double guard = 0.0);

// Forward-only rollout, one tape per step; returns steps+1 states.
std::vector<JointState> rollout_states(const PolicyParams& params,
                                       const TaskConfig& task,
                                       const JointState& x0,
                                       const JointState& goals, int steps);

// Loss over a batch (forward only).
double batch_loss(const PolicyParams& params, const TaskConfig& task,
                  std::span<const BatchItem> batch, int threads = 1);

// Exact reverse-mode gradient through the unrolled Euler steps.
Eigen::VectorXd unrolled_grad(const PolicyParams& params,
                              const TaskConfig& task,
                              std::span<const BatchItem> batch,
                              double* loss_out = nullptr, int threads = 1,
                              double guard = 0.0);

// Continuous-adjoint gradient: reverse-time Euler integration of the
// augmented system (f, -y' df/dx, -y' df/dtheta) with vector-Jacobian
// products from the autodiff engine; states are reset to the stored forward
// samples at each observation time.
Eigen::VectorXd adjoint_grad(const PolicyParams& params,
                             const TaskConfig& task,
                             std::span<const BatchItem> batch,
                             double* loss_out = nullptr, int threads = 1);

// The reverse-time integrator behind adjoint_grad, usable with any vector
// field. The callback returns f(state) and the products seed' df/dx and
// seed' df/dtheta at a state.
struct OdeVjp {
  Eigen::MatrixXd f;
  Eigen::MatrixXd x;
  Eigen::VectorXd theta;
};
using VjpFn =
    std::function<OdeVjp(const Eigen::MatrixXd&, const Eigen::MatrixXd&)>;

// `stored` holds forward states by step index and must contain the final
// step; where a step is present the backward pass resets to it, otherwise
// the state is reconstructed by reverse-time Euler. `seeds` adds dL/dx at
// observation steps. Returns dL/dtheta.
Eigen::VectorXd reverse_adjoint(const VjpFn& vjp,
                                const std::map<int, Eigen::MatrixXd>& stored,
                                const std::map<int, Eigen::MatrixXd>& seeds,
                                int steps, double dt, int theta_size);

// Non-overlapping sub-trajectory windows covering every sample exactly once;
// a ragged tail is kept when it still holds >= 2 samples.
std::vector<std::pair<int, int>> split_windows(int samples, int subtraj_len);

// Sub-trajectory batch items drawn from a dataset (trajectory index range).
std::vector<BatchItem> make_items(const TrajectoryDataset& ds, int traj_begin,
                                  int traj_end, int subtraj_len);

struct EvalRecord {
  int epoch;
  double train_loss;
  double eval_loss;
};

struct TrainResult {
  PolicyParams params;
  std::vector<EvalRecord> history;  // one record per evaluation
  double initial_eval = 0.0;
  double final_eval = 0.0;
  bool lr_halved = false;
};

// Full loop: window split, held-out tail, batch sampling with replacement,
// gradient steps with the divergence guard, periodic held-out evaluation.
// Deterministic for a fixed config and seed.
TrainResult train(const TrajectoryDataset& ds, const PolicyConfig& policy_cfg,
                  const TrainConfig& cfg);

}  // namespace phswarm
