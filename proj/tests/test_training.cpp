#include <doctest.h>

#include <cmath>

#include "phswarm/training.hpp"

using namespace phswarm;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

TaskConfig small_task(Task task, int n, int K, int L, std::uint64_t seed) {
  TaskConfig cfg;
  cfg.task = task;
  cfg.n = n;
  cfg.K = K;
  cfg.L = L;
  cfg.seed = seed;
  return cfg;
}

PolicyParams seeded_params(const PolicyConfig& cfg, std::uint64_t seed) {
  return init_params(cfg, seed);
}

}  // namespace

TEST_CASE("trajectory loss") {
  JointState z = JointState::Zero(4, 1);

  // generated == demonstrated -> 0
  std::vector<std::vector<JointState>> a = {{z, z, z}};
  CHECK(trajectory_set_loss(a, a) == 0.0);

  // one trajectory, one compared sample, difference (3,4) -> 25
  JointState d = JointState::Zero(4, 1);
  d(0, 0) = 3.0;
  d(1, 0) = 4.0;
  std::vector<std::vector<JointState>> g1 = {{z, d}};
  std::vector<std::vector<JointState>> d1 = {{z, z}};
  CHECK(trajectory_set_loss(g1, d1) == 25.0);

  // L = 2, K = 2 with per-term squared norms {1, 2, 3, 4} -> 2.5
  auto state_with_sqnorm = [&](double s) {
    JointState x = JointState::Zero(4, 1);
    x(0, 0) = std::sqrt(s);
    return x;
  };
  std::vector<std::vector<JointState>> g2 = {
      {z, state_with_sqnorm(1), state_with_sqnorm(2)},
      {z, state_with_sqnorm(3), state_with_sqnorm(4)}};
  std::vector<std::vector<JointState>> d2 = {{z, z, z}, {z, z, z}};
  CHECK(trajectory_set_loss(g2, d2) == doctest::Approx(2.5).epsilon(1e-15));

  std::vector<std::vector<JointState>> bad = {{z, z}};
  CHECK_THROWS(trajectory_set_loss(g2, bad));
}

TEST_CASE("rollout") {
  PolicyConfig pcfg = PolicyConfig::standard();
  TaskConfig task = small_task(Task::kFixedSwap, 2, 10, 1, 4);

  // zero parameters and zero velocity: constant trajectory
  PolicyParams zp = init_params(pcfg, 0);
  Eigen::VectorXd zv = Eigen::VectorXd::Zero(params_to_vector(zp).size());
  vector_to_params(zv, zp);
  JointState x0 = JointState::Zero(4, 2);
  x0(0, 0) = -1.0;
  x0(0, 1) = 1.0;
  std::vector<JointState> states =
      rollout_states(zp, task, x0, JointState::Zero(4, 2), 5);
  CHECK(states.size() == 6);
  for (const auto& s : states) CHECK((s - x0).norm() == 0.0);

  // tape rollout matches the plain one and stays on the tape
  PolicyParams p = seeded_params(pcfg, 21);
  Tape t;
  PolicyVars vars = lift_params(t, p);
  BaseVars base = lift_base(t, double_integrator_base(2));
  std::vector<Var> tv =
      rollout_on_tape(t, pcfg, vars, base, task, x0, JointState::Zero(4, 2), 5);
  std::vector<JointState> pv =
      rollout_states(p, task, x0, JointState::Zero(4, 2), 5);
  REQUIRE(tv.size() == pv.size());
  for (std::size_t i = 0; i < tv.size(); ++i) {
    CHECK((Eigen::MatrixXd(tv[i].value()) - pv[i]).norm() == 0.0);
  }
}

TEST_CASE("split_windows partitions samples") {
  CHECK(split_windows(11, 5) ==
        std::vector<std::pair<int, int>>{{0, 5}, {5, 5}});  // tail of 1 dropped
  CHECK(split_windows(12, 5) ==
        std::vector<std::pair<int, int>>{{0, 5}, {5, 5}, {10, 2}});
  CHECK(split_windows(4, 5) == std::vector<std::pair<int, int>>{{0, 4}});
  CHECK_THROWS(split_windows(10, 1));

  // property: windows are disjoint, ordered, and cover a prefix of samples
  for (int samples = 2; samples < 40; ++samples) {
    for (int sub = 2; sub <= 7; ++sub) {
      auto w = split_windows(samples, sub);
      int at = 0;
      for (auto [start, len] : w) {
        CHECK(start == at);
        CHECK(len >= 2);
        at += len;
      }
      CHECK(samples - at <= 1);  // at most a single dropped sample
    }
  }
}

TEST_CASE("unrolled gradient: directional finite differences") {
  PolicyConfig pcfg = PolicyConfig::standard();
  TaskConfig task = small_task(Task::kFixedSwap, 2, 16, 1, 8);
  TrajectoryDataset ds = generate_dataset(task);
  std::vector<BatchItem> items = make_items(ds, 0, 1, 4);
  REQUIRE(!items.empty());
  std::vector<BatchItem> batch = {items[0]};  // 2 robots, 3 steps

  PolicyParams p = seeded_params(pcfg, 33);
  double loss0 = 0.0;
  Eigen::VectorXd g = unrolled_grad(p, task, batch, &loss0);
  CHECK(loss0 >= 0.0);
  CHECK(g.allFinite());

  Rng rng(44);
  const double eps = 1e-5;
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::VectorXd dir(g.size());
    for (Eigen::Index i = 0; i < dir.size(); ++i) dir(i) = rng.uniform(-1, 1);
    dir.normalize();

    Eigen::VectorXd theta = params_to_vector(p);
    PolicyParams pp = p, pm = p;
    vector_to_params(theta + eps * dir, pp);
    vector_to_params(theta - eps * dir, pm);
    const double lp = batch_loss(pp, task, batch);
    const double lm = batch_loss(pm, task, batch);
    const double fd = (lp - lm) / (2 * eps);
    const double an = g.dot(dir);
    CHECK(std::abs(fd - an) / std::max(1e-8, std::abs(fd)) < 1e-4);
  }

  // perfectly matched batch: gradient vanishes at the quadratic minimum
  std::vector<JointState> own =
      rollout_states(p, task, batch[0].x0, batch[0].goals,
                     static_cast<int>(batch[0].targets.size()));
  BatchItem matched = batch[0];
  for (std::size_t r = 0; r < matched.targets.size(); ++r) {
    matched.targets[r] = own[r + 1];
  }
  std::vector<BatchItem> mb = {matched};
  double lmatched = 0.0;
  Eigen::VectorXd gm = unrolled_grad(p, task, mb, &lmatched);
  CHECK(lmatched == 0.0);
  CHECK(gm.norm() == 0.0);
}

TEST_CASE("adjoint gradient agrees with unrolled") {
  PolicyConfig pcfg = PolicyConfig::standard();
  TaskConfig task = small_task(Task::kFixedSwap, 2, 16, 1, 9);
  TrajectoryDataset ds = generate_dataset(task);
  std::vector<BatchItem> items = make_items(ds, 0, 1, 4);

  Rng rng(55);
  for (int rep = 0; rep < 5; ++rep) {
    PolicyParams p = seeded_params(pcfg, 100 + rep);
    std::vector<BatchItem> batch = {items[rep % items.size()]};
    Eigen::VectorXd gu = unrolled_grad(p, task, batch);
    Eigen::VectorXd ga = adjoint_grad(p, task, batch);
    CHECK((gu - ga).norm() / std::max(1e-12, gu.norm()) < 0.05);
  }

  // zero adjoint seed: loss independent of the trajectory -> zero gradient
  BatchItem item = items[0];
  std::map<int, Eigen::MatrixXd> stored, seeds;  // no seeds
  PolicyParams p = seeded_params(pcfg, 7);
  std::vector<JointState> fwd = rollout_states(
      p, task, item.x0, item.goals, static_cast<int>(item.targets.size()));
  for (int r = 0; r < static_cast<int>(fwd.size()); ++r) stored[r] = fwd[r];
  Eigen::VectorXd gz = reverse_adjoint(
      [&](const Eigen::MatrixXd&, const Eigen::MatrixXd& y) {
        OdeVjp v;
        v.f = Eigen::MatrixXd::Zero(4, 2);
        v.x = Eigen::MatrixXd::Zero(4, 2);
        v.theta = Eigen::VectorXd::Zero(3);
        (void)y;
        return v;
      },
      stored, seeds, static_cast<int>(fwd.size()) - 1, task.T, 3);
  CHECK(gz.norm() == 0.0);
}

TEST_CASE("adjoint on the linear scalar system matches the closed form") {
  // xdot = theta x, loss = x(T)^2, analytic dL/dtheta = 2 T x(T)^2
  const double theta = 0.5, x0 = 1.0, dt = 1e-3;
  const int steps = 1000;  // T = 1

  // forward Euler
  std::vector<double> x = {x0};
  for (int s = 0; s < steps; ++s) x.push_back(x[s] * (1.0 + theta * dt));
  const double xT = x.back();

  std::map<int, Eigen::MatrixXd> stored, seeds;
  stored[steps] = Eigen::MatrixXd::Constant(1, 1, xT);
  seeds[steps] = Eigen::MatrixXd::Constant(1, 1, 2.0 * xT);

  VjpFn vjp = [&](const Eigen::MatrixXd& at, const Eigen::MatrixXd& y) {
    Tape t;
    Var xv = t.leaf(Mat(at));
    Var th = t.leaf(Mat(Eigen::MatrixXd::Constant(1, 1, theta)));
    Var f = ad::scalar_mul(xv, th);
    std::vector<Var> wrt = {xv, th};
    std::vector<Var> g = t.gradient(ad::dot(f, t.constant(Mat(y))), wrt);
    OdeVjp out;
    out.f = Eigen::MatrixXd(f.value());
    out.x = Eigen::MatrixXd(g[0].value());
    out.theta = Eigen::VectorXd::Constant(1, g[1].value()(0, 0));
    return out;
  };

  Eigen::VectorXd grad = reverse_adjoint(vjp, stored, seeds, steps, dt, 1);
  const double analytic = 2.0 * 1.0 * xT * xT;
  CHECK(std::abs(grad(0) - analytic) / analytic < 1e-3);
}

TEST_CASE("train loop basics") {
  PolicyConfig pcfg = PolicyConfig::standard();
  TaskConfig task = small_task(Task::kFixedSwap, 2, 10, 3, 12);
  TrajectoryDataset ds = generate_dataset(task);

  TrainConfig tc;
  tc.epochs = 0;
  tc.batch_size = 4;
  tc.subtraj_len = 5;
  tc.seed = 77;
  tc.eval_every = 5;
  tc.threads = 1;

  // zero epochs: parameters equal the seeded initialization
  TrainResult r0 = train(ds, pcfg, tc);
  CHECK((params_to_vector(r0.params) -
         params_to_vector(init_params(pcfg, tc.seed)))
            .norm() == 0.0);

  // SGD step identity with a single-item batch
  tc.epochs = 1;
  tc.batch_size = 1;
  tc.learning_rate = 0.01;
  TrainResult r1 = train(ds, pcfg, tc);

  // reproduce the sampled batch to verify theta' = theta - lr * grad
  std::vector<BatchItem> train_items = make_items(ds, 0, 2, tc.subtraj_len);
  Rng rng(tc.seed ^ 0x5DEECE66DULL);
  const std::size_t pick = static_cast<std::size_t>(
      rng.uniform01() * static_cast<double>(train_items.size()));
  std::vector<BatchItem> batch = {
      train_items[std::min(pick, train_items.size() - 1)]};
  PolicyParams p0 = init_params(pcfg, tc.seed);
  Eigen::VectorXd g = unrolled_grad(p0, task, batch);
  Eigen::VectorXd expect = params_to_vector(p0) - tc.learning_rate * g;
  CHECK((params_to_vector(r1.params) - expect).norm() == 0.0);

  // determinism: identical seeds give identical histories
  tc.epochs = 6;
  tc.batch_size = 3;
  TrainResult a = train(ds, pcfg, tc);
  TrainResult b = train(ds, pcfg, tc);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].epoch == b.history[i].epoch);
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].eval_loss == b.history[i].eval_loss);
  }
  CHECK((params_to_vector(a.params) - params_to_vector(b.params)).norm() ==
        0.0);

  // thread count does not change results
  TrainConfig tc4 = tc;
  tc4.threads = 4;
  TrainResult c = train(ds, pcfg, tc4);
  CHECK((params_to_vector(a.params) - params_to_vector(c.params)).norm() ==
        0.0);
}
