#include "phswarm/dynamics.hpp"

#include <stdexcept>

namespace phswarm {

Eigen::VectorXd PortHamiltonianBase::dH(const Eigen::VectorXd& x) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
  g.tail(m) = x.tail(m);  // dH/dv = v for H = v'v/2
  return g;
}

PortHamiltonianBase double_integrator_base(int m) {
  if (m < 1) throw std::invalid_argument("spatial dimension must be >= 1");
  const int nx = 2 * m;
  PortHamiltonianBase b;
  b.m = m;
  b.J = Eigen::MatrixXd::Zero(nx, nx);
  b.J.topRightCorner(m, m) = Eigen::MatrixXd::Identity(m, m);
  b.J.bottomLeftCorner(m, m) = -Eigen::MatrixXd::Identity(m, m);
  b.R = Eigen::MatrixXd::Zero(nx, nx);
  b.F = Eigen::MatrixXd::Zero(nx, m);
  b.F.bottomRows(m) = Eigen::MatrixXd::Identity(m, m);
  b.Fdag = pseudo_inverse(b.F);
  return b;
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& F) {
  const Eigen::MatrixXd gram = F.transpose() * F;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(gram);
  if (svd.singularValues().minCoeff() <= 1e-12) {
    throw std::invalid_argument("pseudo_inverse: rank-deficient input gain");
  }
  return gram.inverse() * F.transpose();
}

Eigen::VectorXd ida_pbc_control(int i, const PortHamiltonianBase& base,
                                const BlockMap& j_blocks,
                                const BlockMap& r_blocks, const GradMap& dH,
                                const Eigen::VectorXd& x_i) {
  const int nx = base.nx();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(nx);
  for (const auto& [key, jb] : j_blocks) {
    if (key.first != i) continue;
    const int j = key.second;
    auto rb = r_blocks.find(key);
    if (rb == r_blocks.end()) {
      throw std::invalid_argument("ida_pbc_control: missing R block");
    }
    auto g = dH.find(j);
    if (g == dH.end()) {
      throw std::invalid_argument("ida_pbc_control: missing dH for neighbor");
    }
    acc += (jb - rb->second) * g->second;
  }
  acc -= (base.J - base.R) * base.dH(x_i);
  return base.Fdag * acc;
}

JointState closed_loop_rhs(const BlockMap& j_blocks, const BlockMap& r_blocks,
                           const GradMap& dH, int n, int nx) {
  JointState out = JointState::Zero(nx, n);
  for (const auto& [key, jb] : j_blocks) {
    const auto [i, j] = key;
    auto rb = r_blocks.find(key);
    const Eigen::MatrixXd r =
        rb == r_blocks.end() ? Eigen::MatrixXd::Zero(nx, nx) : rb->second;
    auto g = dH.find(j);
    if (g == dH.end()) continue;
    out.col(i) += (jb - r) * g->second;
  }
  return out;
}

namespace {

void require_finite(const JointState& x, const char* what) {
  if (!x.allFinite()) {
    throw std::runtime_error(std::string("non-finite ") + what);
  }
}

}  // namespace

JointState euler_step(const RhsFn& rhs, const JointState& x, double dt) {
  if (dt <= 0.0) throw std::invalid_argument("step size must be > 0");
  JointState d = rhs(x);
  require_finite(d, "state derivative");
  return x + dt * d;
}

JointState rk4_step(const RhsFn& rhs, const JointState& x, double dt) {
  if (dt <= 0.0) throw std::invalid_argument("step size must be > 0");
  JointState k1 = rhs(x);
  JointState k2 = rhs(x + 0.5 * dt * k1);
  JointState k3 = rhs(x + 0.5 * dt * k2);
  JointState k4 = rhs(x + dt * k3);
  JointState d = (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
  require_finite(d, "state derivative");
  return x + dt * d;
}

}  // namespace phswarm
