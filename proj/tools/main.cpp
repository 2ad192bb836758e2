#include <CLI11.hpp>

#include <cmath>
#include <iostream>

#include "phswarm/dataset.hpp"
#include "phswarm/deploy.hpp"
#include "phswarm/runio.hpp"
#include "phswarm/training.hpp"
#include "phswarm/util.hpp"

namespace {

using namespace phswarm;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitOracle = 3;

int cmd_generate(const RunConfig& cfg, const std::string& out_prefix,
                 const std::string& csv_path) {
  TrajectoryDataset ds = generate_dataset(cfg.task);
  save_dataset(out_prefix, ds);
  if (!csv_path.empty()) export_dataset_csv(csv_path, ds);

  double min_dist = std::numeric_limits<double>::infinity();
  for (const auto& traj : ds.trajectories) {
    min_dist = std::min(min_dist, min_pairwise_distance(traj, cfg.task.m));
  }
  std::cout << "dataset: " << ds.trajectories.size() << " trajectories x "
            << ds.samples() << " samples, n=" << cfg.task.n
            << ", min pairwise distance " << min_dist << " m\n";
  std::cout << "wrote " << out_prefix << ".json / .bin\n";
  return kExitOk;
}

int cmd_train(RunConfig cfg, const std::string& dataset_prefix,
              const std::string& model_path, const std::string& loss_csv,
              bool params_only) {
  cfg.policy.validate();
  if (params_only) {
    std::cout << param_count(cfg.policy) << "\n";
    return kExitOk;
  }

  TrajectoryDataset ds = load_dataset(dataset_prefix);
  if (ds.config.nx() != cfg.policy.nx()) {
    std::cerr << "dataset state size does not match the policy\n";
    return kExitUsage;
  }

  TrainResult result = train(ds, cfg.policy, cfg.train);
  save_model(model_path, result.params, cfg.config_hash());
  if (!loss_csv.empty()) {
    write_loss_csv(loss_csv, result.history, cfg.config_hash());
  }
  std::cout << "trained " << cfg.train.epochs << " epochs; eval loss "
            << result.initial_eval << " -> " << result.final_eval << "\n";
  if (!result.history.empty()) {
    std::cout << "final train loss " << result.history.back().train_loss
              << "\n";
  }
  std::cout << "wrote " << model_path << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const std::string& model_path,
             const std::string& dataset_prefix, const std::string& out_path,
             bool use_expert) {
  TrajectoryDataset ds = load_dataset(dataset_prefix);
  const TaskConfig& task = ds.config;

  std::optional<PolicyParams> model;
  if (!use_expert) {
    model = load_model(model_path);
    if (model->config.nx() != task.nx()) {
      std::cerr << "model and dataset disagree on the state size\n";
      return kExitUsage;
    }
  }

  EvalMetrics metrics;
  metrics.config_hash = cfg.config_hash();
  metrics.n = task.n;
  metrics.trajectories = static_cast<int>(ds.trajectories.size());
  double min_dist = std::numeric_limits<double>::infinity();

  for (std::size_t l = 0; l < ds.trajectories.size(); ++l) {
    const auto& demo = ds.trajectories[l];
    std::vector<JointState> gen;
    if (use_expert) {
      // re-rollout of the demonstrating controller from the same start
      JointState x = demo.front();
      const JointState goal_formation = task_goals(task, x);
      gen.push_back(x);
      CommGraph g = task_graph(task, x);
      for (int s = 0; s < task.K; ++s) {
        if (task.task != Task::kFixedSwap) g = task_graph(task, x);
        const CommGraph& gs = g;
        RhsFn rhs = [&](const JointState& st) {
          Eigen::MatrixXd u = expert_control(st, gs, task, goal_formation);
          JointState d(task.nx(), task.n);
          d.topRows(task.m) = st.bottomRows(task.m);
          d.bottomRows(task.m) = u;
          return d;
        };
        x = task.use_rk4 ? rk4_step(rhs, x, task.T)
                         : euler_step(rhs, x, task.T);
        gen.push_back(x);
      }
    } else {
      gen = rollout_states(*model, task, demo.front(), ds.goals[l], task.K);
    }
    double sum = 0.0;
    for (int r = 1; r <= task.K; ++r) sum += pair_loss(gen[r], demo[r]);
    metrics.per_trajectory_loss.push_back(sum / task.K / task.n);
    min_dist = std::min(min_dist, min_pairwise_distance(gen, task.m));
  }

  double mean = 0.0;
  for (double v : metrics.per_trajectory_loss) mean += v;
  mean /= metrics.per_trajectory_loss.size();
  double var = 0.0;
  for (double v : metrics.per_trajectory_loss) var += (v - mean) * (v - mean);
  var /= metrics.per_trajectory_loss.size();
  metrics.loss_per_robot_mean = mean;
  metrics.loss_per_robot_std = std::sqrt(var);
  metrics.min_pairwise_distance = min_dist;

  write_eval_metrics(out_path, metrics);
  std::cout << "eval loss per robot: mean " << mean << " std "
            << metrics.loss_per_robot_std << ", min pairwise distance "
            << min_dist << " m\n";
  std::cout << "wrote " << out_path << "\n";
  return kExitOk;
}

int cmd_deploy(RunConfig cfg, const std::string& model_path,
               const std::string& out_prefix) {
  PolicyParams model = load_model(model_path);
  cfg.policy = model.config;

  TaskConfig task = cfg.task;
  task.n = cfg.deploy_n;
  task.seed = cfg.deploy_seed;
  task.validate();

  const int steps =
      static_cast<int>(std::llround(cfg.deploy_horizon / task.T));
  if (steps < 1) {
    std::cerr << "horizon shorter than one sampling interval\n";
    return kExitUsage;
  }

  Rng rng = Rng(task.seed).child(0);
  JointState x0 = initial_state(task, rng);
  JointState goals = task_goals(task, x0);
  PortHamiltonianBase base = double_integrator_base(task.m);

  std::vector<RobotNode> nodes = make_nodes(model, base, x0, goals);
  std::vector<RobotNode> stale_nodes =
      cfg.deploy_stale ? make_nodes(model, base, x0, goals)
                       : std::vector<RobotNode>{};

  std::vector<JointState> states = {x0};
  DeployMetrics metrics;
  metrics.config_hash = cfg.config_hash();
  metrics.task = task_name(task.task);
  metrics.n = task.n;
  metrics.steps = steps;
  metrics.T = task.T;
  double stale_dev_sum = 0.0;
  int stale_dev_count = 0;

  JointState x = x0;
  CommGraph g = task_graph(task, x);
  for (int s = 0; s < steps; ++s) {
    if (task.task != Task::kFixedSwap) g = task_graph(task, x);

    DeployStep step;
    try {
      step = distributed_step(nodes, g, task.T);
    } catch (const std::exception& e) {
      std::cerr << "numerical failure at step " << s << ": " << e.what()
                << "\n";
      return kExitNumerical;
    }

    if (cfg.deploy_check_centralized) {
      ad::Tape t;
      PolicyVars vars = lift_params(t, model, false);
      BaseVars bv = lift_base(t, base);
      Eigen::MatrixXd u_central = Eigen::MatrixXd(
          policy_control(t, model.config, vars, t.constant(ad::Mat(x)), g,
                         goals, bv)
              .controls.value());
      const double dev = (u_central - step.controls).cwiseAbs().maxCoeff();
      if (dev > 1e-12) {
        std::cerr << "centralized oracle mismatch at step " << s << ": "
                  << dev << "\n";
        return kExitOracle;
      }
    }

    if (cfg.deploy_stale && !stale_nodes.empty()) {
      if (s == 0) {
        distributed_step(stale_nodes, g, task.T);
      } else {
        DeployStep st = stale_step(stale_nodes, g, task.T);
        stale_dev_sum += (st.controls - step.controls).norm();
        ++stale_dev_count;
      }
    }

    x = step.next;
    states.push_back(x);
    metrics.messages_round1 += step.delivered[0];
    metrics.messages_round2 += step.delivered[1];
    metrics.messages_round3 += step.delivered[2];
    for (int i = 0; i < task.n; ++i) {
      metrics.max_speed =
          std::max(metrics.max_speed, x.col(i).tail(task.m).norm());
    }
  }

  metrics.min_pairwise_distance = min_pairwise_distance(states, task.m);
  metrics.final_goal_loss = pair_loss(states.back(), goals) / task.n;
  if (stale_dev_count > 0) {
    metrics.stale_control_deviation = stale_dev_sum / stale_dev_count;
  }

  write_trajectory_csv(out_prefix + "_trajectory.csv", states, task.m, task.T,
                       cfg.config_hash());
  write_deploy_metrics(out_prefix + "_metrics.json", metrics);
  if (cfg.deploy_plot) {
    write_trajectory_svg(out_prefix + "_trajectory.svg", states, task.m);
  }
  std::cout << "deployed n=" << task.n << " for " << steps
            << " steps; min pairwise distance "
            << metrics.min_pairwise_distance << " m, max speed "
            << metrics.max_speed << " m/s\n";
  std::cout << "wrote " << out_prefix << "_trajectory.csv / _metrics.json"
            << (cfg.deploy_plot ? " / _trajectory.svg" : "") << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace phswarm;

  CLI::App app{
      "Learning-from-demonstration toolkit for distributed multi-robot "
      "control with an attention-based port-Hamiltonian policy"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_file;
  app.add_option("--config", config_file, "key = value configuration file");

  // generate
  auto* gen = app.add_subcommand("generate", "produce an expert dataset");
  std::string gen_task = "fixed_swap", gen_out = "dataset", gen_csv;
  int gen_n = 4, gen_K = 250, gen_L = 20;
  double gen_T = 0.04;
  std::uint64_t gen_seed = 0;
  gen->add_option("--task", gen_task, "fixed_swap | tv_swap | flocking");
  gen->add_option("--n", gen_n, "robot count")->check(CLI::PositiveNumber);
  gen->add_option("--K", gen_K, "samples per trajectory")
      ->check(CLI::PositiveNumber);
  gen->add_option("--L", gen_L, "trajectory count")
      ->check(CLI::PositiveNumber);
  gen->add_option("--T", gen_T, "sampling interval [s]")
      ->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "master RNG seed");
  gen->add_option("--out", gen_out, "output prefix (.json/.bin)");
  gen->add_option("--csv", gen_csv, "also export a CSV mirror");

  // train
  auto* tr = app.add_subcommand("train", "fit the policy to a dataset");
  std::string tr_dataset = "dataset", tr_model = "model.json", tr_loss;
  bool tr_params_only = false;
  tr->add_option("--dataset", tr_dataset, "dataset prefix");
  tr->add_option("--out-model", tr_model, "model file path");
  tr->add_option("--loss-csv", tr_loss, "loss history CSV path");
  tr->add_option("--epochs", cfg.train.epochs, "gradient steps");
  tr->add_option("--lr", cfg.train.learning_rate, "learning rate");
  tr->add_option("--batch", cfg.train.batch_size, "batch size");
  tr->add_option("--rebatch-every", cfg.train.rebatch_every,
                 "epochs between fresh batches");
  tr->add_option("--subtraj", cfg.train.subtraj_len,
                 "samples per sub-trajectory");
  std::string tr_opt = "sgd";
  tr->add_option("--optimizer", tr_opt, "sgd | adam");
  tr->add_option("--seed", cfg.train.seed, "training seed");
  tr->add_option("--eval-every", cfg.train.eval_every,
                 "epochs between evaluations");
  tr->add_option("--threads", cfg.train.threads,
                 "worker threads (0 = hardware)");
  tr->add_option("--hops", cfg.policy.hops, "neighborhood hops k");
  std::string tr_mode = "verbatim", tr_wiring = "merged";
  tr->add_option("--mode", tr_mode, "verbatim | strict_psd");
  tr->add_option("--wiring", tr_wiring, "merged | split");
  tr->add_flag("--params-only", tr_params_only,
               "print the parameter count and exit");

  // eval
  auto* ev = app.add_subcommand("eval", "score a model against a dataset");
  std::string ev_model = "model.json", ev_dataset = "dataset",
              ev_out = "eval_metrics.json";
  bool ev_expert = false;
  ev->add_option("--model", ev_model, "model file");
  ev->add_option("--dataset", ev_dataset, "dataset prefix");
  ev->add_option("--out", ev_out, "metrics JSON path");
  ev->add_flag("--expert", ev_expert,
               "evaluate the task's expert controller instead of a model");

  // deploy
  auto* dp = app.add_subcommand("deploy", "run the distributed simulator");
  std::string dp_model = "model.json", dp_out = "deploy",
              dp_task = "fixed_swap";
  dp->add_option("--model", dp_model, "model file");
  dp->add_option("--task", dp_task, "task providing goals and the graph");
  dp->add_option("--n", cfg.deploy_n, "team size")->check(CLI::PositiveNumber);
  dp->add_option("--horizon", cfg.deploy_horizon, "simulated time [s]")
      ->check(CLI::PositiveNumber);
  dp->add_option("--T", cfg.task.T, "control interval [s]")
      ->check(CLI::PositiveNumber);
  dp->add_option("--seed", cfg.deploy_seed, "initial-condition seed");
  dp->add_option("--out-prefix", dp_out, "output prefix");
  dp->add_flag("--check-centralized", cfg.deploy_check_centralized,
               "assert per-step equality with the centralized policy");
  dp->add_flag("--stale", cfg.deploy_stale,
               "also run the stale-message variant and report the deviation");
  dp->add_flag("--plot", cfg.deploy_plot, "write a trajectory SVG");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (!config_file.empty()) load_config_file(cfg, config_file);

    if (gen->parsed()) {
      cfg.task.task = task_from_name(gen_task);
      cfg.task.n = gen_n;
      cfg.task.K = gen_K;
      cfg.task.L = gen_L;
      cfg.task.T = gen_T;
      cfg.task.seed = gen_seed;
      cfg.task.validate();
      cfg.finalize();
      return cmd_generate(cfg, gen_out, gen_csv);
    }
    if (tr->parsed()) {
      if (tr_opt == "adam") {
        cfg.train.optimizer = Optimizer::kAdam;
      } else if (tr_opt == "sgd") {
        cfg.train.optimizer = Optimizer::kSgd;
      } else {
        throw ConfigError("unknown optimizer: " + tr_opt);
      }
      if (tr_mode == "strict_psd") {
        cfg.policy.mode = DissipationMode::kStrictPsd;
      } else if (tr_mode != "verbatim") {
        throw ConfigError("unknown mode: " + tr_mode);
      }
      if (tr_wiring == "split") {
        cfg.policy.wiring = EnergyWiring::kSplit;
      } else if (tr_wiring != "merged") {
        throw ConfigError("unknown wiring: " + tr_wiring);
      }
      cfg.finalize();
      return cmd_train(cfg, tr_dataset, tr_model, tr_loss, tr_params_only);
    }
    if (ev->parsed()) {
      return cmd_eval(cfg, ev_model, ev_dataset, ev_out, ev_expert);
    }
    if (dp->parsed()) {
      cfg.task.task = task_from_name(dp_task);
      return cmd_deploy(cfg, dp_model, dp_out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitUsage;
}
