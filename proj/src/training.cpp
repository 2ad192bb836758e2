#include "phswarm/training.hpp"

#include <atomic>
#include <functional>
#include <map>
#include <mutex>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace phswarm {

using ad::Mat;
using ad::Tape;
using ad::Var;

double pair_loss(const JointState& a, const JointState& b) {
  return (a - b).squaredNorm();
}

double trajectory_set_loss(const std::vector<std::vector<JointState>>& gen,
                           const std::vector<std::vector<JointState>>& demo) {
  if (gen.size() != demo.size()) {
    throw std::invalid_argument("loss: trajectory counts differ");
  }
  double sum = 0.0;
  int count = 0;
  for (std::size_t l = 0; l < gen.size(); ++l) {
    if (gen[l].size() != demo[l].size()) {
      throw std::invalid_argument("loss: sample counts differ");
    }
    for (std::size_t r = 1; r < gen[l].size(); ++r) {
      if (gen[l][r].rows() != demo[l][r].rows() ||
          gen[l][r].cols() != demo[l][r].cols()) {
        throw std::invalid_argument("loss: state shapes differ");
      }
      sum += pair_loss(gen[l][r], demo[l][r]);
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("loss: nothing to compare");
  return sum / count;
}

namespace {

int thread_count(int requested, std::size_t jobs) {
  int t = requested > 0
              ? requested
              : static_cast<int>(std::thread::hardware_concurrency());
  if (t < 1) t = 1;
  return static_cast<int>(std::min<std::size_t>(t, jobs));
}

// Runs fn(i) for i in [0, jobs) on a small worker pool. Results must be
// written to index-owned slots; the caller reduces them in index order so
// the outcome is independent of scheduling.
void parallel_for(std::size_t jobs, int threads,
                  const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || jobs <= 1) {
    for (std::size_t i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= jobs) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

JointState var_to_state(const Var& v) { return Eigen::MatrixXd(v.value()); }

int total_targets(std::span<const BatchItem> batch) {
  int total = 0;
  for (const BatchItem& it : batch) {
    total += static_cast<int>(it.targets.size());
  }
  return total;
}

}  // namespace

std::vector<Var> rollout_on_tape(Tape& tape, const PolicyConfig& cfg,
                                 const PolicyVars& vars, const BaseVars& base,
                                 const TaskConfig& task, const JointState& x0,
                                 const JointState& goals, int steps,
                                 double guard) {
  if (steps < 1) throw std::invalid_argument("rollout: steps must be >= 1");
  const bool fixed_graph = task.task == Task::kFixedSwap;
  CommGraph g = task_graph(task, x0);

  std::vector<Var> states;
  states.reserve(steps + 1);
  Var x = tape.constant(Mat(x0));
  states.push_back(x);

  for (int s = 0; s < steps; ++s) {
    if (!fixed_graph) g = task_graph(task, var_to_state(x));
    ControlEval ce = policy_control(tape, cfg, vars, x, g, goals, base);
    const Var vel = ad::slice_rows(x, cfg.m, cfg.m);
    const Var rhs = ad::concat_rows({vel, ce.controls});
    x = ad::add(x, ad::scale(rhs, task.T));
    if (!x.value().allFinite()) {
      throw DivergenceError("non-finite rollout state at step " +
                            std::to_string(s));
    }
    if (guard > 0.0 && x.value().cwiseAbs().maxCoeff() > guard) {
      throw DivergenceError("rollout state exceeded divergence guard at step " +
                            std::to_string(s));
    }
    states.push_back(x);
  }
  return states;
}

std::vector<JointState> rollout_states(const PolicyParams& params,
                                       const TaskConfig& task,
                                       const JointState& x0,
                                       const JointState& goals, int steps) {
  const bool fixed_graph = task.task == Task::kFixedSwap;
  CommGraph g = task_graph(task, x0);
  std::vector<JointState> out;
  out.reserve(steps + 1);
  out.push_back(x0);
  JointState x = x0;
  for (int s = 0; s < steps; ++s) {
    Tape tape;
    PolicyVars vars = lift_params(tape, params, false);
    BaseVars base = lift_base(tape, double_integrator_base(params.config.m));
    if (!fixed_graph) g = task_graph(task, x);
    ControlEval ce = policy_control(tape, params.config, vars,
                                    tape.constant(Mat(x)), g, goals, base);
    JointState d(x.rows(), x.cols());
    d.topRows(params.config.m) = x.bottomRows(params.config.m);
    d.bottomRows(params.config.m) = Eigen::MatrixXd(ce.controls.value());
    x = x + task.T * d;
    if (!x.allFinite()) {
      throw DivergenceError("non-finite rollout state at step " +
                            std::to_string(s));
    }
    out.push_back(x);
  }
  return out;
}

namespace {

// Shared per-item evaluation, returning the unnormalized squared-error sum
// and optionally the parameter gradient of that sum.
double item_unrolled(const PolicyParams& params, const TaskConfig& task,
                     const BatchItem& item, Eigen::VectorXd* grad_out,
                     double guard) {
  Tape tape;
  PolicyVars vars = lift_params(tape, params, grad_out != nullptr);
  BaseVars base = lift_base(tape, double_integrator_base(params.config.m));
  const int steps = static_cast<int>(item.targets.size());
  std::vector<Var> states =
      rollout_on_tape(tape, params.config, vars, base, task, item.x0,
                      item.goals, steps, guard);

  Var loss;
  for (int r = 1; r <= steps; ++r) {
    const Var diff =
        ad::sub(states[r], tape.constant(Mat(item.targets[r - 1])));
    const Var term = ad::reduce_sum(ad::square(diff));
    loss = loss.valid() ? ad::add(loss, term) : term;
  }

  if (grad_out != nullptr) {
    std::vector<Var> grads = tape.gradient(loss, vars.flat);
    std::vector<double> flat;
    for (const Var& gv : grads) {
      const Mat& m = gv.value();
      flat.insert(flat.end(), m.data(), m.data() + m.size());
    }
    *grad_out = Eigen::Map<Eigen::VectorXd>(flat.data(), flat.size());
  }
  return loss.scalar();
}

}  // namespace

double batch_loss(const PolicyParams& params, const TaskConfig& task,
                  std::span<const BatchItem> batch, int threads) {
  if (batch.empty()) throw std::invalid_argument("batch must be nonempty");
  std::vector<double> losses(batch.size());
  parallel_for(batch.size(), thread_count(threads, batch.size()),
               [&](std::size_t i) {
                 losses[i] = item_unrolled(params, task, batch[i], nullptr, 0.0);
               });
  double sum = 0.0;
  for (double v : losses) sum += v;
  return sum / total_targets(batch);
}

Eigen::VectorXd unrolled_grad(const PolicyParams& params,
                              const TaskConfig& task,
                              std::span<const BatchItem> batch,
                              double* loss_out, int threads, double guard) {
  if (batch.empty()) throw std::invalid_argument("batch must be nonempty");
  std::vector<double> losses(batch.size());
  std::vector<Eigen::VectorXd> grads(batch.size());
  parallel_for(batch.size(), thread_count(threads, batch.size()),
               [&](std::size_t i) {
                 losses[i] =
                     item_unrolled(params, task, batch[i], &grads[i], guard);
               });
  const double norm = 1.0 / total_targets(batch);
  Eigen::VectorXd total = Eigen::VectorXd::Zero(grads[0].size());
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    total += grads[i];
    loss += losses[i];
  }
  if (loss_out != nullptr) *loss_out = loss * norm;
  return total * norm;
}

Eigen::VectorXd reverse_adjoint(const VjpFn& vjp,
                                const std::map<int, Eigen::MatrixXd>& stored,
                                const std::map<int, Eigen::MatrixXd>& seeds,
                                int steps, double dt, int theta_size) {
  auto terminal = stored.find(steps);
  if (terminal == stored.end()) {
    throw std::invalid_argument("reverse_adjoint: final state must be stored");
  }
  Eigen::MatrixXd xhat = terminal->second;
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(xhat.rows(), xhat.cols());
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta_size);

  for (int r = steps; r >= 1; --r) {
    if (auto s = seeds.find(r); s != seeds.end()) y += s->second;
    OdeVjp v;
    if (auto s = stored.find(r - 1); s != stored.end()) {
      // Checkpointed segment: products at the stored left endpoint, which
      // makes the step consistent with the forward discretization.
      v = vjp(s->second, y);
      xhat = s->second;
    } else {
      // No checkpoint: genuine reverse-time Euler of the augmented state.
      v = vjp(xhat, y);
      xhat = xhat - dt * v.f;
    }
    y += dt * v.x;
    grad += dt * v.theta;
  }
  return grad;
}

namespace {

OdeVjp policy_rhs_vjp(const PolicyParams& params, const TaskConfig& task,
                      const JointState& goals, const Eigen::MatrixXd& at,
                      const Eigen::MatrixXd& y) {
  Tape tape;
  PolicyVars vars = lift_params(tape, params, true);
  BaseVars base = lift_base(tape, double_integrator_base(params.config.m));
  CommGraph g = task_graph(task, at);
  Var x = tape.leaf(Mat(at));
  ControlEval ce =
      policy_control(tape, params.config, vars, x, g, goals, base);
  const Var vel = ad::slice_rows(x, params.config.m, params.config.m);
  const Var rhs = ad::concat_rows({vel, ce.controls});

  const Var s = ad::dot(rhs, tape.constant(Mat(y)));
  std::vector<Var> wrt = {x};
  wrt.insert(wrt.end(), vars.flat.begin(), vars.flat.end());
  std::vector<Var> grads = tape.gradient(s, wrt);

  OdeVjp out;
  out.f = Eigen::MatrixXd(rhs.value());
  out.x = Eigen::MatrixXd(grads[0].value());
  std::vector<double> flat;
  for (std::size_t k = 1; k < grads.size(); ++k) {
    const Mat& m = grads[k].value();
    flat.insert(flat.end(), m.data(), m.data() + m.size());
  }
  out.theta = Eigen::Map<Eigen::VectorXd>(flat.data(), flat.size());
  return out;
}

double item_adjoint(const PolicyParams& params, const TaskConfig& task,
                    const BatchItem& item, Eigen::VectorXd& grad_out) {
  const int steps = static_cast<int>(item.targets.size());
  std::vector<JointState> fwd =
      rollout_states(params, task, item.x0, item.goals, steps);

  double loss = 0.0;
  std::map<int, Eigen::MatrixXd> stored, seeds;
  for (int r = 0; r <= steps; ++r) stored[r] = fwd[r];
  for (int r = 1; r <= steps; ++r) {
    loss += pair_loss(fwd[r], item.targets[r - 1]);
    seeds[r] = 2.0 * (fwd[r] - item.targets[r - 1]);
  }

  grad_out = reverse_adjoint(
      [&](const Eigen::MatrixXd& at, const Eigen::MatrixXd& y) {
        return policy_rhs_vjp(params, task, item.goals, at, y);
      },
      stored, seeds, steps, task.T,
      static_cast<int>(params_to_vector(params).size()));
  return loss;
}

}  // namespace

Eigen::VectorXd adjoint_grad(const PolicyParams& params,
                             const TaskConfig& task,
                             std::span<const BatchItem> batch,
                             double* loss_out, int threads) {
  if (batch.empty()) throw std::invalid_argument("batch must be nonempty");
  std::vector<double> losses(batch.size());
  std::vector<Eigen::VectorXd> grads(batch.size());
  parallel_for(batch.size(), thread_count(threads, batch.size()),
               [&](std::size_t i) {
                 losses[i] = item_adjoint(params, task, batch[i], grads[i]);
               });
  const double norm = 1.0 / total_targets(batch);
  Eigen::VectorXd total = Eigen::VectorXd::Zero(grads[0].size());
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    total += grads[i];
    loss += losses[i];
  }
  if (loss_out != nullptr) *loss_out = loss * norm;
  return total * norm;
}

std::vector<std::pair<int, int>> split_windows(int samples, int subtraj_len) {
  if (subtraj_len < 2) {
    throw std::invalid_argument("sub-trajectories need >= 2 samples");
  }
  std::vector<std::pair<int, int>> out;
  int at = 0;
  while (samples - at >= subtraj_len) {
    out.emplace_back(at, subtraj_len);
    at += subtraj_len;
  }
  if (samples - at >= 2) out.emplace_back(at, samples - at);
  return out;
}

std::vector<BatchItem> make_items(const TrajectoryDataset& ds, int traj_begin,
                                  int traj_end, int subtraj_len) {
  std::vector<BatchItem> items;
  for (int l = traj_begin; l < traj_end; ++l) {
    const auto& traj = ds.trajectories[l];
    for (auto [start, len] : split_windows(static_cast<int>(traj.size()),
                                           subtraj_len)) {
      BatchItem item;
      item.x0 = traj[start];
      item.goals = ds.goals[l];
      for (int s = 1; s < len; ++s) item.targets.push_back(traj[start + s]);
      items.push_back(std::move(item));
    }
  }
  return items;
}

TrainResult train(const TrajectoryDataset& ds, const PolicyConfig& policy_cfg,
                  const TrainConfig& cfg) {
  if (ds.trajectories.empty()) {
    throw std::invalid_argument("train: dataset is empty");
  }
  if (cfg.learning_rate <= 0) {
    throw std::invalid_argument("train: learning rate must be > 0");
  }

  const int L = static_cast<int>(ds.trajectories.size());
  int held = static_cast<int>(std::floor(L * cfg.held_out_fraction));
  if (held < 1 && L > 1) held = 1;
  const int train_end = L - held;

  std::vector<BatchItem> train_items =
      make_items(ds, 0, train_end, cfg.subtraj_len);
  std::vector<BatchItem> eval_items =
      held > 0 ? make_items(ds, train_end, L, cfg.subtraj_len)
               : train_items;
  if (train_items.empty()) {
    throw std::invalid_argument("train: no usable sub-trajectories");
  }

  TrainResult result;
  result.params = init_params(policy_cfg, cfg.seed);
  Eigen::VectorXd theta = params_to_vector(result.params);

  Rng rng(cfg.seed ^ 0x5DEECE66DULL);
  std::vector<BatchItem> batch;
  auto resample = [&] {
    batch.clear();
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t pick = static_cast<std::size_t>(
          rng.uniform01() * static_cast<double>(train_items.size()));
      batch.push_back(train_items[std::min(pick, train_items.size() - 1)]);
    }
  };
  resample();

  const int threads = cfg.threads;
  double lr = cfg.learning_rate;

  result.initial_eval =
      batch_loss(result.params, ds.config, eval_items, threads);
  result.history.push_back({0, 0.0, result.initial_eval});

  // adam state
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(theta.size());
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(theta.size());
  int adam_t = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.rebatch_every > 0 && epoch % cfg.rebatch_every == 0) resample();

    double train_loss = 0.0;
    Eigen::VectorXd grad;
    try {
      grad = unrolled_grad(result.params, ds.config, batch, &train_loss,
                           threads, cfg.divergence_guard);
    } catch (const DivergenceError&) {
      if (!result.lr_halved) {
        lr *= 0.5;
        result.lr_halved = true;
      }
      continue;  // skip this step
    }
    if (!std::isfinite(train_loss)) {
      throw std::runtime_error("training diverged (non-finite loss) at epoch " +
                               std::to_string(epoch));
    }

    if (cfg.optimizer == Optimizer::kSgd) {
      theta -= lr * grad;
    } else {
      ++adam_t;
      m1 = 0.9 * m1 + 0.1 * grad;
      m2 = 0.999 * m2 + 0.001 * grad.cwiseProduct(grad);
      const double c1 = 1.0 - std::pow(0.9, adam_t);
      const double c2 = 1.0 - std::pow(0.999, adam_t);
      for (Eigen::Index i = 0; i < theta.size(); ++i) {
        theta(i) -= lr * (m1(i) / c1) / (std::sqrt(m2(i) / c2) + 1e-8);
      }
    }
    vector_to_params(theta, result.params);

    const bool scheduled = cfg.eval_every > 0 && epoch % cfg.eval_every == 0;
    if (scheduled || epoch == cfg.epochs) {
      const double ev =
          batch_loss(result.params, ds.config, eval_items, threads);
      result.history.push_back({epoch, train_loss, ev});
    }
  }

  result.final_eval = result.history.back().eval_loss;
  return result;
}

}  // namespace phswarm
