#include "phswarm/dataset.hpp"

#include <bit>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "phswarm/util.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset files are little-endian");

namespace phswarm {

using nlohmann::json;

TrajectoryDataset generate_dataset(const TaskConfig& cfg) {
  cfg.validate();
  TrajectoryDataset ds;
  ds.config = cfg;
  ds.trajectories.reserve(cfg.L);
  ds.goals.reserve(cfg.L);

  const Rng master(cfg.seed);
  const bool fixed_graph = cfg.task == Task::kFixedSwap;

  for (int l = 0; l < cfg.L; ++l) {
    Rng rng = master.child(static_cast<std::uint64_t>(l));
    JointState x = initial_state(cfg, rng);
    const JointState goal_formation = task_goals(cfg, x);

    std::vector<JointState> traj;
    traj.reserve(cfg.K + 1);
    traj.push_back(x);

    CommGraph g = task_graph(cfg, x);
    for (int step = 0; step < cfg.K; ++step) {
      if (!fixed_graph) g = task_graph(cfg, x);
      RhsFn rhs = [&](const JointState& s) {
        const Eigen::MatrixXd u = expert_control(s, g, cfg, goal_formation);
        JointState d(cfg.nx(), cfg.n);
        d.topRows(cfg.m) = s.bottomRows(cfg.m);
        d.bottomRows(cfg.m) = u;
        return d;
      };
      try {
        x = cfg.use_rk4 ? rk4_step(rhs, x, cfg.T) : euler_step(rhs, x, cfg.T);
      } catch (const std::exception& e) {
        throw std::runtime_error("trajectory " + std::to_string(l) +
                                 " diverged at step " + std::to_string(step) +
                                 ": " + e.what());
      }
      if (!x.allFinite()) {
        throw std::runtime_error("trajectory " + std::to_string(l) +
                                 " non-finite at step " + std::to_string(step));
      }
      traj.push_back(x);
    }
    ds.goals.push_back(traj.back());
    ds.trajectories.push_back(std::move(traj));
  }
  return ds;
}

namespace {

json config_to_json(const TaskConfig& c) {
  return json{{"task", task_name(c.task)},
              {"n", c.n},
              {"m", c.m},
              {"c1", c.c1},
              {"c2", c.c2},
              {"sigma", c.sigma},
              {"l", c.l},
              {"lambda", c.lambda},
              {"flock_d", c.flock_d},
              {"flock_r", c.flock_r},
              {"flock_eps", c.flock_eps},
              {"flock_h", c.flock_h},
              {"flock_a", c.flock_a},
              {"flock_b", c.flock_b},
              {"K", c.K},
              {"T", c.T},
              {"L", c.L},
              {"seed", c.seed},
              {"use_rk4", c.use_rk4},
              {"column_offset", c.column_offset},
              {"row_spacing", c.row_spacing},
              {"position_jitter", c.position_jitter},
              {"flock_box", c.flock_box},
              {"flock_vel", c.flock_vel}};
}

TaskConfig config_from_json(const json& j) {
  TaskConfig c;
  c.task = task_from_name(j.at("task").get<std::string>());
  c.n = j.at("n").get<int>();
  c.m = j.at("m").get<int>();
  c.c1 = j.at("c1").get<double>();
  c.c2 = j.at("c2").get<double>();
  c.sigma = j.at("sigma").get<double>();
  c.l = j.at("l").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.flock_d = j.at("flock_d").get<double>();
  c.flock_r = j.at("flock_r").get<double>();
  c.flock_eps = j.at("flock_eps").get<double>();
  c.flock_h = j.at("flock_h").get<double>();
  c.flock_a = j.at("flock_a").get<double>();
  c.flock_b = j.at("flock_b").get<double>();
  c.K = j.at("K").get<int>();
  c.T = j.at("T").get<double>();
  c.L = j.at("L").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.use_rk4 = j.at("use_rk4").get<bool>();
  c.column_offset = j.at("column_offset").get<double>();
  c.row_spacing = j.at("row_spacing").get<double>();
  c.position_jitter = j.at("position_jitter").get<double>();
  c.flock_box = j.at("flock_box").get<double>();
  c.flock_vel = j.at("flock_vel").get<double>();
  return c;
}

std::string basename_of(const std::string& path) {
  const auto pos = path.find_last_of("/\\");
  return pos == std::string::npos ? path : path.substr(pos + 1);
}

}  // namespace

void save_dataset(const std::string& prefix, const TrajectoryDataset& ds) {
  const TaskConfig& c = ds.config;
  const std::size_t state_doubles = static_cast<std::size_t>(ds.trajectories.size()) *
                                    ds.samples() * c.nx() * c.n;
  const std::size_t goal_doubles =
      ds.goals.size() * static_cast<std::size_t>(c.nx()) * c.n;

  json manifest;
  manifest["format_version"] = 1;
  manifest["kind"] = "trajectory_dataset";
  manifest["config_hash"] = to_hex(fnv1a(c.canonical_string()));
  manifest["config"] = config_to_json(c);
  manifest["data_file"] = basename_of(prefix) + ".bin";
  manifest["layout"] = "f64le [trajectory][time][robot][component]";
  manifest["states_bytes"] = state_doubles * sizeof(double);
  manifest["goals_offset"] = state_doubles * sizeof(double);
  manifest["goals_bytes"] = goal_doubles * sizeof(double);

  std::ofstream mx(prefix + ".json");
  if (!mx) throw std::runtime_error("cannot write manifest: " + prefix);
  mx << manifest.dump(1) << "\n";

  std::ofstream bx(prefix + ".bin", std::ios::binary);
  if (!bx) throw std::runtime_error("cannot write dataset: " + prefix);
  for (const auto& traj : ds.trajectories) {
    for (const JointState& x : traj) {
      bx.write(reinterpret_cast<const char*>(x.data()),
               static_cast<std::streamsize>(sizeof(double) * x.size()));
    }
  }
  for (const JointState& g : ds.goals) {
    bx.write(reinterpret_cast<const char*>(g.data()),
             static_cast<std::streamsize>(sizeof(double) * g.size()));
  }
}

TrajectoryDataset load_dataset(const std::string& prefix) {
  std::ifstream mx(prefix + ".json");
  if (!mx) throw std::runtime_error("cannot read manifest: " + prefix + ".json");
  json manifest;
  mx >> manifest;
  if (manifest.at("format_version").get<int>() != 1) {
    throw std::runtime_error("dataset manifest: unsupported format_version");
  }

  TrajectoryDataset ds;
  ds.config = config_from_json(manifest.at("config"));
  const TaskConfig& c = ds.config;

  std::ifstream bx(prefix + ".bin", std::ios::binary);
  if (!bx) throw std::runtime_error("cannot read dataset: " + prefix + ".bin");

  const int samples = c.K + 1;
  ds.trajectories.assign(c.L, {});
  for (int l = 0; l < c.L; ++l) {
    ds.trajectories[l].reserve(samples);
    for (int t = 0; t < samples; ++t) {
      JointState x(c.nx(), c.n);
      bx.read(reinterpret_cast<char*>(x.data()),
              static_cast<std::streamsize>(sizeof(double) * x.size()));
      if (!bx) throw std::runtime_error("dataset binary truncated");
      ds.trajectories[l].push_back(std::move(x));
    }
  }
  ds.goals.reserve(c.L);
  for (int l = 0; l < c.L; ++l) {
    JointState g(c.nx(), c.n);
    bx.read(reinterpret_cast<char*>(g.data()),
            static_cast<std::streamsize>(sizeof(double) * g.size()));
    if (!bx) throw std::runtime_error("dataset binary truncated (goals)");
    ds.goals.push_back(std::move(g));
  }
  return ds;
}

void export_dataset_csv(const std::string& path, const TrajectoryDataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write csv: " + path);
  out.precision(17);
  out << "# format_version=1 config_hash="
      << to_hex(fnv1a(ds.config.canonical_string())) << "\n";
  out << "trajectory,sample,robot";
  for (int d = 0; d < ds.config.m; ++d) out << ",p" << d;
  for (int d = 0; d < ds.config.m; ++d) out << ",v" << d;
  out << "\n";
  for (std::size_t l = 0; l < ds.trajectories.size(); ++l) {
    for (std::size_t t = 0; t < ds.trajectories[l].size(); ++t) {
      const JointState& x = ds.trajectories[l][t];
      for (int rb = 0; rb < ds.config.n; ++rb) {
        out << l << "," << t << "," << rb;
        for (int d = 0; d < ds.config.nx(); ++d) out << "," << x(d, rb);
        out << "\n";
      }
    }
  }
}

double min_pairwise_distance(const JointState& x, int m) {
  const int n = static_cast<int>(x.cols());
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      best = std::min(best, (x.col(i).head(m) - x.col(j).head(m)).norm());
    }
  }
  return best;
}

double min_pairwise_distance(const std::vector<JointState>& traj, int m) {
  double best = std::numeric_limits<double>::infinity();
  for (const JointState& x : traj) {
    best = std::min(best, min_pairwise_distance(x, m));
  }
  return best;
}

double velocity_disagreement(const JointState& x, int m) {
  const int n = static_cast<int>(x.cols());
  const Eigen::VectorXd mean = x.bottomRows(m).rowwise().mean();
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += (x.col(i).tail(m) - mean).norm();
  return sum;
}

}  // namespace phswarm
