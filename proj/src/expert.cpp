#include "phswarm/expert.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace phswarm {

std::string task_name(Task t) {
  switch (t) {
    case Task::kFixedSwap:
      return "fixed_swap";
    case Task::kTvSwap:
      return "tv_swap";
    case Task::kFlocking:
      return "flocking";
  }
  return "?";
}

Task task_from_name(const std::string& name) {
  if (name == "fixed_swap") return Task::kFixedSwap;
  if (name == "tv_swap") return Task::kTvSwap;
  if (name == "flocking") return Task::kFlocking;
  throw std::invalid_argument("unknown task: " + name);
}

void TaskConfig::validate() const {
  if (n < 1) throw std::invalid_argument("task: n must be >= 1");
  if (m != 2) throw std::invalid_argument("task: only m = 2 is supported");
  if (c1 <= 0 || c2 <= 0) throw std::invalid_argument("task: gains must be > 0");
  if (flock_h <= 0 || flock_h >= 1) {
    throw std::invalid_argument("task: bump plateau must lie in (0, 1)");
  }
  if (T <= 0) throw std::invalid_argument("task: sampling interval must be > 0");
  if (K < 1) throw std::invalid_argument("task: K must be >= 1");
  if (L < 1) throw std::invalid_argument("task: L must be >= 1");
  if (l <= 0) throw std::invalid_argument("task: comm radius must be > 0");
}

std::string TaskConfig::canonical_string() const {
  std::ostringstream os;
  os.precision(17);
  os << "task=" << task_name(task) << ";n=" << n << ";m=" << m << ";c1=" << c1
     << ";c2=" << c2 << ";sigma=" << sigma << ";l=" << l << ";lambda=" << lambda
     << ";d=" << flock_d << ";r=" << flock_r << ";eps=" << flock_eps
     << ";h=" << flock_h << ";a=" << flock_a << ";b=" << flock_b << ";K=" << K
     << ";T=" << T << ";L=" << L << ";seed=" << seed << ";rk4=" << use_rk4
     << ";col=" << column_offset << ";row=" << row_spacing
     << ";jit=" << position_jitter << ";box=" << flock_box
     << ";vel=" << flock_vel;
  return os.str();
}

double sigma_norm_scalar(double r, double eps) {
  return (std::sqrt(1.0 + eps * r * r) - 1.0) / eps;
}

double sigma_norm(const Eigen::VectorXd& z, double eps) {
  if (eps <= 0) throw std::invalid_argument("sigma_norm: eps must be > 0");
  return sigma_norm_scalar(z.norm(), eps);
}

double bump(double z, double h) {
  if (h <= 0 || h >= 1) throw std::invalid_argument("bump: h must be in (0,1)");
  if (z < 0.0 || z > 1.0) return 0.0;
  if (z < h) return 1.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * (z - h) / (1.0 - h)));
}

namespace {

double sigma1(double y) { return y / std::sqrt(1.0 + y * y); }

}  // namespace

double flocking_potential(double z, const TaskConfig& cfg) {
  const double d_sig = sigma_norm_scalar(cfg.flock_d, cfg.flock_eps);
  const double r_sig = sigma_norm_scalar(cfg.flock_r, cfg.flock_eps);
  const double gain = 0.5 * (cfg.flock_a + cfg.flock_b) * sigma1(z - d_sig) +
                      0.5 * (cfg.flock_a - cfg.flock_b);
  return bump(z / r_sig, cfg.flock_h) * gain;
}

Eigen::MatrixXd flocking_control(const JointState& x, const CommGraph& g,
                                 const TaskConfig& cfg) {
  const int n = static_cast<int>(x.cols());
  const int m = cfg.m;
  const double r_sig = sigma_norm_scalar(cfg.flock_r, cfg.flock_eps);
  Eigen::MatrixXd u(m, n);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd p_i = x.col(i).head(m);
    const Eigen::VectorXd v_i = x.col(i).tail(m);
    Eigen::VectorXd acc = -cfg.c1 * p_i - cfg.c2 * v_i;
    for (int j = 0; j < n; ++j) {
      if (j == i || !g.connected(i, j)) continue;
      const Eigen::VectorXd dp = x.col(j).head(m) - p_i;  // points at j
      const double z = sigma_norm_scalar(dp.norm(), cfg.flock_eps);
      const Eigen::VectorXd n_ij =
          dp / std::sqrt(1.0 + cfg.flock_eps * dp.squaredNorm());
      acc += flocking_potential(z, cfg) * n_ij;
      acc += bump(z / r_sig, cfg.flock_h) * (x.col(j).tail(m) - v_i);
    }
    u.col(i) = acc;
  }
  return u;
}

Eigen::MatrixXd swapping_control(const JointState& x, const CommGraph& g,
                                 const TaskConfig& cfg,
                                 const JointState& goal) {
  // Evaluated in goal-relative coordinates pt_i = p_i - p_i^goal: the spring,
  // damping, and pairwise repulsion all vanish once every robot reaches its
  // slot, so the team settles exactly on the swapped formation. With all
  // goals at the origin this reduces to the plain origin-seeking form.
  const int n = static_cast<int>(x.cols());
  const int m = cfg.m;
  Eigen::MatrixXd u(m, n);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd pt_i = x.col(i).head(m) - goal.col(i).head(m);
    const Eigen::VectorXd v_i = x.col(i).tail(m);
    Eigen::VectorXd acc = -cfg.c1 * pt_i - cfg.c2 * v_i;
    for (int j = 0; j < n; ++j) {
      if (j == i || !g.connected(i, j)) continue;
      const Eigen::VectorXd dp =
          pt_i - (x.col(j).head(m) - goal.col(j).head(m));
      acc -= dp / std::sqrt(1.0 + cfg.sigma * dp.squaredNorm());
    }
    u.col(i) = acc;
  }
  return u;
}

Eigen::MatrixXd expert_control(const JointState& x, const CommGraph& g,
                               const TaskConfig& cfg, const JointState& goal) {
  if (cfg.task == Task::kFlocking) return flocking_control(x, g, cfg);
  return swapping_control(x, g, cfg, goal);
}

CommGraph task_graph(const TaskConfig& cfg, const JointState& x) {
  if (cfg.task == Task::kFixedSwap) return build_ring(cfg.n);
  Eigen::MatrixXd pos(cfg.n, cfg.m);
  for (int i = 0; i < cfg.n; ++i) pos.row(i) = x.col(i).head(cfg.m).transpose();
  return build_proximity(pos, cfg.l, cfg.lambda);
}

JointState initial_state(const TaskConfig& cfg, Rng& rng) {
  JointState x = JointState::Zero(cfg.nx(), cfg.n);
  if (cfg.task == Task::kFlocking) {
    const double half = 0.5 * cfg.flock_box;
    for (int i = 0; i < cfg.n; ++i) {
      for (int d = 0; d < cfg.m; ++d) x(d, i) = rng.uniform(-half, half);
      for (int d = 0; d < cfg.m; ++d) {
        x(cfg.m + d, i) = rng.uniform(-cfg.flock_vel, cfg.flock_vel);
      }
    }
    return x;
  }
  // Two facing columns; robot i < rows sits on the left column, the rest on
  // the right, with jittered positions and zero velocity.
  const int rows = (cfg.n + 1) / 2;
  for (int i = 0; i < cfg.n; ++i) {
    const bool left = i < rows;
    const int row = left ? i : i - rows;
    x(0, i) = (left ? -1.0 : 1.0) * cfg.column_offset +
              rng.uniform(-cfg.position_jitter, cfg.position_jitter);
    x(1, i) = row * cfg.row_spacing +
              rng.uniform(-cfg.position_jitter, cfg.position_jitter);
  }
  return x;
}

JointState task_goals(const TaskConfig& cfg, const JointState& x0) {
  JointState goal = JointState::Zero(cfg.nx(), cfg.n);
  if (cfg.task == Task::kFlocking) return goal;
  // Diagonally opposite slot: the other column, mirrored row order.
  const int rows = (cfg.n + 1) / 2;
  for (int i = 0; i < cfg.n; ++i) {
    const bool left = i < rows;
    const int row = left ? i : i - rows;
    const int opp_row = rows - 1 - row;
    int partner = left ? rows + opp_row : opp_row;
    if (partner >= cfg.n) partner = cfg.n - 1;  // odd team: clamp
    goal.col(i).head(cfg.m) = x0.col(partner).head(cfg.m);
  }
  return goal;
}

}  // namespace phswarm
