#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "phswarm/policy.hpp"
#include "phswarm/util.hpp"

using namespace phswarm;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

Mat random_mat(Rng& rng, int r, int c, double s = 1.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.uniform(-s, s);
  return m;
}

PolicyParams random_params(Rng& rng, PolicyConfig cfg, double s = 0.6) {
  PolicyParams p = init_params(cfg, rng.next_u64());
  Eigen::VectorXd v = params_to_vector(p);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.uniform(-s, s);
  vector_to_params(v, p);
  return p;
}

PolicyParams zero_params(const PolicyConfig& cfg) {
  PolicyParams p = init_params(cfg, 0);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(params_to_vector(p).size());
  vector_to_params(v, p);
  return p;
}

Eigen::MatrixXd zero_goals(int nx, int n) {
  return Eigen::MatrixXd::Zero(nx, n);
}

}  // namespace

TEST_CASE("parameter counting") {
  CHECK(param_count(PolicyConfig::standard()) == 2208);

  SAHeadConfig single{{2}, {3}, {4}};
  CHECK(param_count(single) == 30);  // 3*6 + 12

  CHECK(param_count(PolicyConfig::standard().r_head) == 736);  // 160+256+320
  CHECK(param_count(PolicyConfig::standard().j_head) == 616);

  SAHeadConfig broken{{4, 9, 8}, {8, 8, 8}, {8, 8, 16}};  // h_2 != d_1
  CHECK_THROWS(param_count(broken));
}

TEST_CASE("init_params determinism and bounds") {
  PolicyConfig cfg = PolicyConfig::standard();
  PolicyParams a = init_params(cfg, 1234);
  PolicyParams b = init_params(cfg, 1234);
  CHECK((params_to_vector(a) - params_to_vector(b)).norm() == 0.0);
  CHECK(params_to_vector(a).size() == 2208);

  // every entry of a layer bounded by 1/sqrt(h_w); the loosest bound over
  // all layers is 1/2 (h_1 = 4)
  const double loosest = 1.0 / std::sqrt(4.0);
  CHECK(params_to_vector(a).cwiseAbs().maxCoeff() <= loosest);

  PolicyParams c = init_params(cfg, 1235);
  CHECK((params_to_vector(a) - params_to_vector(c)).norm() > 0.0);
}

TEST_CASE("build_inputs") {
  PolicyConfig cfg = PolicyConfig::standard();
  Tape t;

  // at goal, zero velocity, no neighbors -> zero RJ observation
  Eigen::VectorXd goal(4);
  goal << 1.0, 2.0, 0.0, 0.0;
  Var self = t.constant(Mat(goal));
  auto obs = build_inputs(t, cfg, self, {}, goal);
  CHECK(obs.rj.cols() == 1);
  CHECK(obs.rj.value().norm() == 0.0);
  CHECK(obs.hin.rows() == 6);

  // neighbor column carries [dx; ||dx||^(1/4); ||dx||] for dx = (3,4,0,0)
  Mat ov = Mat(goal);
  ov(0, 0) -= 3.0;
  ov(1, 0) -= 4.0;
  std::vector<std::pair<int, Var>> others = {{1, t.constant(ov)}};
  auto obs2 = build_inputs(t, cfg, self, others, goal);
  CHECK(obs2.hin.cols() == 2);
  CHECK(obs2.hin.value()(0, 1) == 3.0);
  CHECK(obs2.hin.value()(4, 1) ==
        doctest::Approx(std::pow(5.0, 0.25)).epsilon(1e-12));
  CHECK(obs2.hin.value()(5, 1) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("neighbor columns are ordered ascending by id") {
  PolicyConfig cfg = PolicyConfig::standard();
  PolicyParams p = init_params(cfg, 9);
  Rng rng(10);

  Tape t;
  PolicyVars vars = lift_params(t, p);
  Var self = t.constant(random_mat(rng, 4, 1));
  Mat s7 = random_mat(rng, 4, 1), s2 = random_mat(rng, 4, 1);
  Eigen::VectorXd goal = Eigen::VectorXd::Zero(4);

  // pass {7, 2} out of order; the eval must sort to [self, 2, 7]
  RobotEval e1 = eval_robot(t, cfg, vars, 0, self,
                            {{7, t.constant(s7)}, {2, t.constant(s2)}}, goal);
  RobotEval e2 = eval_robot(t, cfg, vars, 0, self,
                            {{2, t.constant(s2)}, {7, t.constant(s7)}}, goal);
  CHECK(e1.neighbors == std::vector<int>{0, 2, 7});
  CHECK((e1.z_r.value() - e2.z_r.value()).norm() == 0.0);
  CHECK(observation_column(e1.neighbors, 0, 2) == 1);
  CHECK(observation_column(e1.neighbors, 0, 7) == 2);
}

TEST_CASE("sa_forward shapes, single column, equivariance") {
  PolicyConfig cfg = PolicyConfig::standard();
  PolicyParams p = init_params(cfg, 77);
  Rng rng(78);

  Tape t;
  PolicyVars vars = lift_params(t, p);
  Mat x0 = random_mat(rng, 4, 3);
  Var out = sa_forward(cfg.r_head, vars.r, t.constant(x0));
  CHECK(out.rows() == 16);
  CHECK(out.cols() == 3);

  // single column: the attention factor is softmax of a 1x1 score = 1, so
  // each layer reduces to X = alpha(A_Z gamma(beta(V X)))
  Mat xc = random_mat(rng, 4, 1);
  Var got = sa_forward(cfg.r_head, vars.r, t.constant(xc));
  Tape t2;
  PolicyVars vars2 = lift_params(t2, p);
  Var x = t2.constant(xc);
  for (int w = 0; w < 3; ++w) {
    Var bv = ad::sigmoid(ad::matmul(vars2.r.v[w], x));
    x = ad::swish(ad::matmul(vars2.r.z[w], ad::swish(bv)));
  }
  CHECK((got.value() - x.value()).norm() < 1e-14);

  // permuting input columns permutes output columns identically
  Mat xp(4, 3);
  xp.col(0) = x0.col(2);
  xp.col(1) = x0.col(0);
  xp.col(2) = x0.col(1);
  Var out_p = sa_forward(cfg.r_head, vars.r, t.constant(xp));
  CHECK((out_p.value().col(0) - out.value().col(2)).norm() < 1e-12);
  CHECK((out_p.value().col(1) - out.value().col(0)).norm() < 1e-12);
  CHECK((out_p.value().col(2) - out.value().col(1)).norm() < 1e-12);

  // wrong input rows
  CHECK_THROWS(
      sa_forward(cfg.r_head, vars.r, t.constant(random_mat(rng, 5, 2))));
}

TEST_CASE("r_blocks identities") {
  PolicyConfig cfg = PolicyConfig::standard();
  const int nx = 4;
  Rng rng(101);

  // all zero -> all blocks zero
  {
    Tape t;
    std::map<int, std::pair<Var, Var>> z;
    for (int j : {0, 1, 2}) z[j] = {t.zeros(16, 1), t.zeros(16, 1)};
    auto blocks = r_blocks_for(t, cfg, 0, {0, 1, 2}, z);
    for (auto& [j, b] : blocks) CHECK(b.value().norm() == 0.0);
  }

  // row-block-sum identity: sum_j [R]_ij == Z_ii for random Z
  for (int rep = 0; rep < 20; ++rep) {
    Tape t;
    std::map<int, std::pair<Var, Var>> z;
    std::vector<int> nb = {0, 1, 2, 3};
    for (int j : nb)
      z[j] = {t.constant(random_mat(rng, 16, 1)),
              t.constant(random_mat(rng, 16, 1))};
    auto blocks = r_blocks_for(t, cfg, 0, nb, z);
    Mat sum = Mat::Zero(nx, nx);
    for (int j : nb) sum += blocks.at(j).value();
    Mat zii = ad::vec_inv(z.at(0).first, nx, nx).value();
    CHECK((sum - zii).norm() < 1e-13);
  }

  // missing reciprocal
  {
    Tape t;
    std::map<int, std::pair<Var, Var>> z;
    z[0] = {t.zeros(16, 1), t.zeros(16, 1)};
    CHECK_THROWS(r_blocks_for(t, cfg, 0, {0, 1}, z));
  }

  // two robots with Z_12 = Z_21 = vec(I): assembled 2-block matrix is
  // [[2I, -2I], [-2I, 2I]], eigenvalues {0, 4}
  {
    Tape t;
    Mat eye = Mat(Eigen::MatrixXd::Identity(nx, nx));
    Var zi = ad::vec(t.constant(eye));
    std::map<int, std::pair<Var, Var>> z0, z1;
    z0[0] = {t.zeros(16, 1), t.zeros(16, 1)};
    z0[1] = {zi, zi};
    z1[1] = {t.zeros(16, 1), t.zeros(16, 1)};
    z1[0] = {zi, zi};
    auto row0 = r_blocks_for(t, cfg, 0, {0, 1}, z0);
    auto row1 = r_blocks_for(t, cfg, 1, {0, 1}, z1);
    Eigen::MatrixXd big(8, 8);
    big.topLeftCorner(4, 4) = row0.at(0).value();
    big.topRightCorner(4, 4) = row0.at(1).value();
    big.bottomLeftCorner(4, 4) = row1.at(0).value();
    big.bottomRightCorner(4, 4) = row1.at(1).value();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(big);
    CHECK(es.eigenvalues().minCoeff() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(es.eigenvalues().maxCoeff() == doctest::Approx(4.0).epsilon(1e-12));
  }
}

TEST_CASE("j_blocks identities") {
  PolicyConfig cfg = PolicyConfig::standard();
  Rng rng(103);

  // scalar head (default): off-diagonal zero, diagonal scales the
  // symplectic form
  {
    Tape t;
    std::map<int, std::pair<Var, Var>> z;
    z[0] = {t.scalar(2.0), t.scalar(2.0)};
    z[1] = {t.scalar(9.0), t.scalar(-3.0)};
    auto blocks = j_blocks_for(t, cfg, 0, {0, 1}, z);
    CHECK(blocks.at(1).value().norm() == 0.0);
    Mat d = blocks.at(0).value();
    Mat expect = Mat::Zero(4, 4);
    expect.topRightCorner(2, 2) = 2.0 * Eigen::MatrixXd::Identity(2, 2);
    expect.bottomLeftCorner(2, 2) = -2.0 * Eigen::MatrixXd::Identity(2, 2);
    CHECK((d - expect).norm() == 0.0);
    CHECK((d + Mat(d.transpose())).norm() == 0.0);  // skew
  }

  // full-size head: antisymmetrization, zero when Z_ij == Z_ji
  PolicyConfig cfg2 = cfg;
  cfg2.j_head = cfg.r_head;  // d_W = 16
  for (int rep = 0; rep < 10; ++rep) {
    Tape t;
    Mat za = random_mat(rng, 16, 1), zb = random_mat(rng, 16, 1);
    std::map<int, std::pair<Var, Var>> zi, zj;
    zi[0] = {t.constant(za), t.constant(za)};
    zi[1] = {t.constant(za), t.constant(zb)};
    zj[1] = {t.constant(zb), t.constant(zb)};
    zj[0] = {t.constant(zb), t.constant(za)};
    auto row0 = j_blocks_for(t, cfg2, 0, {0, 1}, zi);
    auto row1 = j_blocks_for(t, cfg2, 1, {0, 1}, zj);
    CHECK(row0.at(0).value().norm() == 0.0);  // Z_ii - Z_ii
    CHECK((row0.at(1).value() + row1.at(0).value()).norm() == 0.0);
  }
}

TEST_CASE("local energy: zero net, gradient oracle") {
  PolicyConfig cfg = PolicyConfig::standard();
  Rng rng(200);

  // zero parameters give exactly zero energy
  {
    PolicyParams p = zero_params(cfg);
    Tape t;
    PolicyVars vars = lift_params(t, p);
    std::vector<std::pair<int, Var>> others = {
        {1, t.constant(random_mat(rng, 4, 1))}};
    RobotEval e =
        eval_robot(t, cfg, vars, 0, t.constant(random_mat(rng, 4, 1)), others,
                   Eigen::VectorXd::Zero(4));
    CHECK(e.energy.value()(0, 0) == 0.0);
  }

  // dH^(i)/dx_j against central finite differences
  PolicyParams p = random_params(rng, cfg);
  for (int rep = 0; rep < 10; ++rep) {
    Mat xs = random_mat(rng, 4, 1), xo = random_mat(rng, 4, 1);
    Eigen::VectorXd goal = random_mat(rng, 4, 1).col(0);

    Tape t;
    PolicyVars vars = lift_params(t, p);
    Var self = t.leaf(xs);
    Var other = t.leaf(xo);
    RobotEval e = eval_robot(t, cfg, vars, 0, self, {{1, other}}, goal);

    auto energy_at = [&](const Mat& s, const Mat& o) {
      Tape tt;
      PolicyVars vv = lift_params(tt, p);
      RobotEval ee = eval_robot(tt, cfg, vv, 0, tt.constant(s),
                                {{1, tt.constant(o)}}, goal);
      return ee.energy.value()(0, 0);
    };

    for (int comp = 0; comp < 4; ++comp) {
      const double eps = 1e-5;
      Mat sp = xs, sm = xs;
      sp(comp, 0) += eps;
      sm(comp, 0) -= eps;
      const double fd_self =
          (energy_at(sp, xo) - energy_at(sm, xo)) / (2 * eps);
      Mat op = xo, om = xo;
      op(comp, 0) += eps;
      om(comp, 0) -= eps;
      const double fd_other =
          (energy_at(xs, op) - energy_at(xs, om)) / (2 * eps);

      const double denom_s = std::max(1e-6, std::abs(fd_self));
      const double denom_o = std::max(1e-6, std::abs(fd_other));
      CHECK(std::abs(e.denergy.at(0).value()(comp, 0) - fd_self) / denom_s <
            1e-5);
      CHECK(std::abs(e.denergy.at(1).value()(comp, 0) - fd_other) / denom_o <
            1e-5);
    }
  }
}

TEST_CASE("hamiltonian_gradients sum consistency") {
  PolicyConfig cfg = PolicyConfig::standard();
  Rng rng(300);
  PolicyParams p = random_params(rng, cfg);
  const int n = 5;
  CommGraph g = build_ring(n);
  Eigen::MatrixXd goals = random_mat(rng, 4, n);

  Tape t;
  PolicyVars vars = lift_params(t, p);
  Mat x0 = random_mat(rng, 4, n, 1.5);
  Var x = t.leaf(x0);
  EnergyGradients eg = hamiltonian_gradients(t, cfg, vars, x, g, goals);

  // whole-graph oracle: gradient of the summed energy in one pass
  Var total_energy;
  for (const RobotEval& e : eg.robots) {
    total_energy =
        total_energy.valid() ? ad::add(total_energy, e.energy) : e.energy;
  }
  Mat full = t.gradient(total_energy, x).value();
  for (int i = 0; i < n; ++i) {
    CHECK((eg.total.at(i).value() - full.col(i)).norm() < 1e-10);
  }

  // zero-parameter policy: all gradients zero
  PolicyParams pz = zero_params(cfg);
  Tape tz;
  PolicyVars vz = lift_params(tz, pz);
  EnergyGradients egz =
      hamiltonian_gradients(tz, cfg, vz, tz.leaf(x0), g, goals);
  for (int i = 0; i < n; ++i) CHECK(egz.total.at(i).value().norm() == 0.0);

  // single robot with no neighbors: total equals own gradient
  Eigen::MatrixXd lone = Eigen::MatrixXd::Identity(1, 1);
  CommGraph g1(lone);
  Tape t1;
  PolicyVars v1 = lift_params(t1, p);
  EnergyGradients eg1 = hamiltonian_gradients(
      t1, cfg, v1, t1.leaf(random_mat(rng, 4, 1)), g1, random_mat(rng, 4, 1));
  CHECK((eg1.total.at(0).value() - eg1.robots[0].denergy.at(0).value())
            .norm() == 0.0);
}

TEST_CASE("policy_control basics") {
  PolicyConfig cfg = PolicyConfig::standard();
  Rng rng(400);
  PortHamiltonianBase b = double_integrator_base(2);
  const int n = 4;
  CommGraph g = build_ring(n);

  // zero parameters and zero velocity -> zero control
  {
    PolicyParams p = zero_params(cfg);
    Tape t;
    PolicyVars vars = lift_params(t, p);
    Mat x0 = Mat::Zero(4, n);
    x0.topRows(2) = random_mat(rng, 2, n, 2.0);  // positions only
    ControlEval ce = policy_control(t, cfg, vars, t.constant(x0), g,
                                    zero_goals(4, n), lift_base(t, b));
    CHECK(ce.controls.value().norm() == 0.0);
  }

  // shape and finiteness for random states and parameters
  PolicyParams p = random_params(rng, cfg);
  Tape t;
  PolicyVars vars = lift_params(t, p);
  Mat x0 = random_mat(rng, 4, n, 2.0);
  ControlEval ce = policy_control(t, cfg, vars, t.constant(x0), g,
                                  zero_goals(4, n), lift_base(t, b));
  CHECK(ce.controls.rows() == 2);
  CHECK(ce.controls.cols() == n);
  CHECK(ce.controls.value().allFinite());
}

TEST_CASE("policy_control locality: beyond 2k hops has no effect") {
  PolicyConfig cfg = PolicyConfig::standard();  // k = 1
  Rng rng(500);
  PolicyParams p = random_params(rng, cfg);
  PortHamiltonianBase b = double_integrator_base(2);
  const int n = 8;
  CommGraph g = build_ring(n);

  Mat x0 = random_mat(rng, 4, n, 1.5);
  Mat x1 = x0;
  x1.col(4) += random_mat(rng, 4, 1, 3.0);  // robot 4 is 4 hops from robot 0

  auto controls_at = [&](const Mat& xv) {
    Tape t;
    PolicyVars vars = lift_params(t, p);
    return policy_control(t, cfg, vars, t.constant(xv), g, zero_goals(4, n),
                          lift_base(t, b))
        .controls.value();
  };
  Mat u0 = controls_at(x0), u1 = controls_at(x1);
  CHECK((u0.col(0) - u1.col(0)).norm() == 0.0);
  // but the perturbed robot's own control changes
  CHECK((u0.col(4) - u1.col(4)).norm() > 0.0);
}

TEST_CASE("policy_control permutation equivariance") {
  PolicyConfig cfg = PolicyConfig::standard();
  Rng rng(600);
  PolicyParams p = random_params(rng, cfg);
  PortHamiltonianBase b = double_integrator_base(2);
  const int n = 5;

  Eigen::MatrixXd pos(n, 2);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 2; ++j) pos(i, j) = rng.uniform(-1.2, 1.2);
  CommGraph g = build_proximity(pos, 2.4, 2.0);
  Mat x0(4, n);
  x0.topRows(2) = pos.transpose();
  x0.bottomRows(2) = random_mat(rng, 2, n, 0.5);
  Eigen::MatrixXd goals = random_mat(rng, 4, n);

  std::vector<int> perm = {3, 0, 4, 1, 2};  // new index of old i
  Mat xp(4, n);
  Eigen::MatrixXd goals_p(4, n);
  Eigen::MatrixXd adj_p(n, n);
  for (int i = 0; i < n; ++i) {
    xp.col(perm[i]) = x0.col(i);
    goals_p.col(perm[i]) = goals.col(i);
    for (int j = 0; j < n; ++j) adj_p(perm[i], perm[j]) = g.adjacency()(i, j);
  }
  CommGraph gp(adj_p);

  auto run = [&](const Mat& xv, const CommGraph& gg,
                 const Eigen::MatrixXd& gl) {
    Tape t;
    PolicyVars vars = lift_params(t, p);
    return policy_control(t, cfg, vars, t.constant(xv), gg, gl,
                          lift_base(t, b))
        .controls.value();
  };
  Mat u = run(x0, g, goals);
  Mat up = run(xp, gp, goals_p);
  for (int i = 0; i < n; ++i) {
    CHECK((up.col(perm[i]) - u.col(i)).norm() < 1e-12);
  }
}

TEST_CASE("strict_psd mode: assembled dissipation is PSD") {
  PolicyConfig cfg = PolicyConfig::standard();
  cfg.mode = DissipationMode::kStrictPsd;
  Rng rng(700);

  for (int rep = 0; rep < 200; ++rep) {
    const int n = 2 + static_cast<int>(rng.uniform(0, 4.999));  // n <= 6
    Eigen::MatrixXd pos(n, 2);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 2; ++j) pos(i, j) = rng.uniform(-1.5, 1.5);
    CommGraph g = build_proximity(pos, 2.8, 2.0);
    PolicyParams p = random_params(rng, cfg, 0.8);

    Mat x0(4, n);
    x0.topRows(2) = pos.transpose();
    x0.bottomRows(2) = random_mat(rng, 2, n, 1.0);

    Tape t;
    PolicyVars vars = lift_params(t, p, false);
    EnergyGradients eg = hamiltonian_gradients(t, cfg, vars, t.constant(x0),
                                               g, zero_goals(4, n));

    Eigen::MatrixXd big = Eigen::MatrixXd::Zero(4 * n, 4 * n);
    for (int i = 0; i < n; ++i) {
      const RobotEval& me = eg.robots[i];
      std::map<int, std::pair<Var, Var>> z;
      for (int j : me.neighbors) {
        const RobotEval& other = eg.robots[j];
        z[j] = {
            ad::slice_cols(me.z_r, observation_column(me.neighbors, i, j), 1),
            ad::slice_cols(other.z_r,
                           observation_column(other.neighbors, j, i), 1)};
      }
      auto row = r_blocks_for(t, cfg, i, me.neighbors, z);
      for (auto& [j, blockv] : row) {
        big.block(4 * i, 4 * j, 4, 4) = blockv.value();
      }
    }
    CHECK((big - big.transpose()).norm() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(big);
    CHECK(es.eigenvalues().minCoeff() >= -1e-9);
  }
}

TEST_CASE("model file round trip is bitwise") {
  PolicyConfig cfg = PolicyConfig::standard();
  cfg.mode = DissipationMode::kStrictPsd;
  PolicyParams p = init_params(cfg, 424242);
  const auto path =
      std::filesystem::temp_directory_path() / "phswarm_model_test.json";
  save_model(path.string(), p, "deadbeef");
  PolicyParams q = load_model(path.string());
  CHECK(q.config.mode == DissipationMode::kStrictPsd);
  CHECK(q.config.hops == cfg.hops);
  Eigen::VectorXd va = params_to_vector(p), vb = params_to_vector(q);
  REQUIRE(va.size() == vb.size());
  for (Eigen::Index i = 0; i < va.size(); ++i) {
    CHECK(std::memcmp(&va(i), &vb(i), sizeof(double)) == 0);
  }
  std::filesystem::remove(path);
}
