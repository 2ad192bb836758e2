#pragma once

#include <Eigen/Dense>

#include <functional>
#include <map>
#include <utility>

namespace phswarm {

// Joint team state: n_x x n, column i holds robot i's state [p_i; v_i].
// Keeping states per robot (rather than all positions then all velocities)
// makes the (i, j) block indexing of the interconnection and dissipation
// matrices line up with robot pairs.
using JointState = Eigen::MatrixXd;

using BlockMap = std::map<std::pair<int, int>, Eigen::MatrixXd>;
using GradMap = std::map<int, Eigen::VectorXd>;

// Known per-robot open-loop structure: xdot = (J - R) dH(x) + F u.
struct PortHamiltonianBase {
  int m = 0;             // spatial dimension, n_x = 2m
  Eigen::MatrixXd J;     // n_x x n_x, skew-symmetric
  Eigen::MatrixXd R;     // n_x x n_x, PSD
  Eigen::MatrixXd F;     // n_x x n_u input gain
  Eigen::MatrixXd Fdag;  // cached pseudo-inverse of F

  int nx() const { return static_cast<int>(J.rows()); }
  int nu() const { return static_cast<int>(F.cols()); }

  // Gradient of the open-loop Hamiltonian at a single robot state.
  Eigen::VectorXd dH(const Eigen::VectorXd& x) const;
};

// Double integrator: H = v'v/2, J the canonical symplectic block, R = 0,
// F = [0; I_m] so the input enters as acceleration.
PortHamiltonianBase double_integrator_base(int m);

// Left pseudo-inverse (F'F)^-1 F'. Requires full column rank, checked via
// the smallest singular value of F'F against 1e-12.
Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& F);

// Control for robot i:
//   u_i = F^dag ( sum_j ([J]_ij - [R]_ij) dH_j  -  (J_s - R_s) dHs(x_i) )
// where the sum runs over the blocks keyed (i, j), ascending j.
Eigen::VectorXd ida_pbc_control(int i, const PortHamiltonianBase& base,
                                const BlockMap& j_blocks,
                                const BlockMap& r_blocks, const GradMap& dH,
                                const Eigen::VectorXd& x_i);

// Desired closed loop evaluated blockwise: xdot_i = sum_j ([J]-[R])_ij dH_j.
JointState closed_loop_rhs(const BlockMap& j_blocks, const BlockMap& r_blocks,
                           const GradMap& dH, int n, int nx);

using RhsFn = std::function<JointState(const JointState&)>;

// Fixed-step integrators. Both throw on a non-finite derivative or state.
JointState euler_step(const RhsFn& rhs, const JointState& x, double dt);
JointState rk4_step(const RhsFn& rhs, const JointState& x, double dt);

}  // namespace phswarm
