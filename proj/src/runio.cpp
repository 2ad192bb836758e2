#include "phswarm/runio.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "phswarm/util.hpp"

namespace phswarm {

using nlohmann::json;

namespace {

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("not a boolean: " + v);
}

double parse_double(const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("not a number: " + v);
  }
  if (used != v.size()) throw ConfigError("not a number: " + v);
  return out;
}

int parse_int(const std::string& v) {
  const double d = parse_double(v);
  const int i = static_cast<int>(d);
  if (static_cast<double>(i) != d) throw ConfigError("not an integer: " + v);
  return i;
}

std::uint64_t parse_u64(const std::string& v) {
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError("not an unsigned integer: " + v);
  }
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::finalize() {
  // head input rows depend on the task's state dimension
  PolicyConfig fresh = PolicyConfig::standard(task.m, policy.hops);
  fresh.mode = policy.mode;
  fresh.wiring = policy.wiring;
  policy = fresh;
}

std::string RunConfig::canonical_string() const {
  std::ostringstream os;
  os.precision(17);
  os << task.canonical_string();
  os << ";policy.hops=" << policy.hops << ";policy.mode="
     << (policy.mode == DissipationMode::kVerbatim ? "verbatim" : "strict_psd")
     << ";policy.wiring="
     << (policy.wiring == EnergyWiring::kMerged ? "merged" : "split");
  os << ";train.epochs=" << train.epochs << ";train.lr=" << train.learning_rate
     << ";train.batch=" << train.batch_size
     << ";train.rebatch=" << train.rebatch_every
     << ";train.subtraj=" << train.subtraj_len << ";train.opt="
     << (train.optimizer == Optimizer::kSgd ? "sgd" : "adam")
     << ";train.seed=" << train.seed << ";train.eval_every=" << train.eval_every
     << ";train.held_out=" << train.held_out_fraction
     << ";train.guard=" << train.divergence_guard;
  os << ";deploy.n=" << deploy_n << ";deploy.horizon=" << deploy_horizon
     << ";deploy.seed=" << deploy_seed << ";deploy.stale=" << deploy_stale
     << ";deploy.check=" << deploy_check_centralized;
  return os.str();
}

std::string RunConfig::config_hash() const {
  return to_hex(fnv1a(canonical_string()));
}

void apply_key(RunConfig& cfg, const std::string& key_in,
               const std::string& value_in) {
  const std::string key = trim(key_in);
  const std::string v = trim(value_in);

  if (key == "task.task") {
    try {
      cfg.task.task = task_from_name(v);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  } else if (key == "task.n") {
    cfg.task.n = parse_int(v);
  } else if (key == "task.m") {
    cfg.task.m = parse_int(v);
  } else if (key == "task.c1") {
    cfg.task.c1 = parse_double(v);
  } else if (key == "task.c2") {
    cfg.task.c2 = parse_double(v);
  } else if (key == "task.sigma") {
    cfg.task.sigma = parse_double(v);
  } else if (key == "task.l") {
    cfg.task.l = parse_double(v);
  } else if (key == "task.lambda") {
    cfg.task.lambda = parse_double(v);
  } else if (key == "task.flock_d") {
    cfg.task.flock_d = parse_double(v);
  } else if (key == "task.flock_r") {
    cfg.task.flock_r = parse_double(v);
  } else if (key == "task.flock_eps") {
    cfg.task.flock_eps = parse_double(v);
  } else if (key == "task.flock_h") {
    cfg.task.flock_h = parse_double(v);
  } else if (key == "task.flock_a") {
    cfg.task.flock_a = parse_double(v);
  } else if (key == "task.flock_b") {
    cfg.task.flock_b = parse_double(v);
  } else if (key == "task.K") {
    cfg.task.K = parse_int(v);
  } else if (key == "task.T") {
    cfg.task.T = parse_double(v);
  } else if (key == "task.L") {
    cfg.task.L = parse_int(v);
  } else if (key == "task.seed") {
    cfg.task.seed = parse_u64(v);
  } else if (key == "task.rk4") {
    cfg.task.use_rk4 = parse_bool(v);
  } else if (key == "task.column_offset") {
    cfg.task.column_offset = parse_double(v);
  } else if (key == "task.row_spacing") {
    cfg.task.row_spacing = parse_double(v);
  } else if (key == "task.position_jitter") {
    cfg.task.position_jitter = parse_double(v);
  } else if (key == "task.flock_box") {
    cfg.task.flock_box = parse_double(v);
  } else if (key == "task.flock_vel") {
    cfg.task.flock_vel = parse_double(v);
  } else if (key == "policy.hops") {
    cfg.policy.hops = parse_int(v);
  } else if (key == "policy.mode") {
    if (v == "verbatim") {
      cfg.policy.mode = DissipationMode::kVerbatim;
    } else if (v == "strict_psd") {
      cfg.policy.mode = DissipationMode::kStrictPsd;
    } else {
      throw ConfigError("unknown policy.mode: " + v);
    }
  } else if (key == "policy.wiring") {
    if (v == "merged") {
      cfg.policy.wiring = EnergyWiring::kMerged;
    } else if (v == "split") {
      cfg.policy.wiring = EnergyWiring::kSplit;
    } else {
      throw ConfigError("unknown policy.wiring: " + v);
    }
  } else if (key == "train.epochs") {
    cfg.train.epochs = parse_int(v);
  } else if (key == "train.lr") {
    cfg.train.learning_rate = parse_double(v);
  } else if (key == "train.batch") {
    cfg.train.batch_size = parse_int(v);
  } else if (key == "train.rebatch_every") {
    cfg.train.rebatch_every = parse_int(v);
  } else if (key == "train.subtraj") {
    cfg.train.subtraj_len = parse_int(v);
  } else if (key == "train.optimizer") {
    if (v == "sgd") {
      cfg.train.optimizer = Optimizer::kSgd;
    } else if (v == "adam") {
      cfg.train.optimizer = Optimizer::kAdam;
    } else {
      throw ConfigError("unknown train.optimizer: " + v);
    }
  } else if (key == "train.seed") {
    cfg.train.seed = parse_u64(v);
  } else if (key == "train.eval_every") {
    cfg.train.eval_every = parse_int(v);
  } else if (key == "train.threads") {
    cfg.train.threads = parse_int(v);
  } else if (key == "train.held_out") {
    cfg.train.held_out_fraction = parse_double(v);
  } else if (key == "train.guard") {
    cfg.train.divergence_guard = parse_double(v);
  } else if (key == "deploy.n") {
    cfg.deploy_n = parse_int(v);
  } else if (key == "deploy.horizon") {
    cfg.deploy_horizon = parse_double(v);
  } else if (key == "deploy.seed") {
    cfg.deploy_seed = parse_u64(v);
  } else if (key == "deploy.stale") {
    cfg.deploy_stale = parse_bool(v);
  } else if (key == "deploy.check_centralized") {
    cfg.deploy_check_centralized = parse_bool(v);
  } else if (key == "deploy.plot") {
    cfg.deploy_plot = parse_bool(v);
  } else {
    throw ConfigError("unknown configuration key: " + key);
  }
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key = value");
    }
    apply_key(cfg, line.substr(0, eq), line.substr(eq + 1));
  }
}

// ---- artifact writers ----

void write_loss_csv(const std::string& path,
                    const std::vector<EvalRecord>& history,
                    const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write loss csv: " + path);
  out.precision(17);
  out << "# format_version=1 config_hash=" << config_hash << "\n";
  out << "epoch,train_loss,eval_loss\n";
  for (const EvalRecord& r : history) {
    out << r.epoch << "," << r.train_loss << "," << r.eval_loss << "\n";
  }
}

void write_trajectory_csv(const std::string& path,
                          const std::vector<JointState>& states, int m,
                          double T, const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trajectory csv: " + path);
  out.precision(17);
  out << "# format_version=1 config_hash=" << config_hash << "\n";
  out << "step,t,robot";
  for (int d = 0; d < m; ++d) out << ",p" << d;
  for (int d = 0; d < m; ++d) out << ",v" << d;
  out << "\n";
  for (std::size_t s = 0; s < states.size(); ++s) {
    for (int rb = 0; rb < states[s].cols(); ++rb) {
      out << s << "," << s * T << "," << rb;
      for (int d = 0; d < 2 * m; ++d) out << "," << states[s](d, rb);
      out << "\n";
    }
  }
}

void write_trajectory_svg(const std::string& path,
                          const std::vector<JointState>& states, int m) {
  if (states.empty()) throw std::invalid_argument("svg: nothing to plot");
  if (m < 2) throw std::invalid_argument("svg: needs 2-D positions");
  const int n = static_cast<int>(states[0].cols());

  double xmin = 1e30, xmax = -1e30, ymin = 1e30, ymax = -1e30;
  for (const JointState& x : states) {
    for (int i = 0; i < n; ++i) {
      xmin = std::min(xmin, x(0, i));
      xmax = std::max(xmax, x(0, i));
      ymin = std::min(ymin, x(1, i));
      ymax = std::max(ymax, x(1, i));
    }
  }
  const double pad = 0.1 * std::max(1e-6, std::max(xmax - xmin, ymax - ymin));
  xmin -= pad;
  xmax += pad;
  ymin -= pad;
  ymax += pad;
  const double w = 640.0, h = 640.0;
  auto sx = [&](double x) { return (x - xmin) / (xmax - xmin) * w; };
  auto sy = [&](double y) { return h - (y - ymin) / (ymax - ymin) * h; };

  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
                                  "#bcbd22", "#17becf"};

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write svg: " + path);
  out.precision(8);
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
      << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << " " << h
      << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int i = 0; i < n; ++i) {
    const char* color = palette[i % 10];
    out << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\" points=\"";
    for (const JointState& x : states) {
      out << sx(x(0, i)) << "," << sy(x(1, i)) << " ";
    }
    out << "\"/>\n";
    out << "<circle cx=\"" << sx(states.front()(0, i)) << "\" cy=\""
        << sy(states.front()(1, i))
        << "\" r=\"4\" fill=\"none\" stroke=\"" << color << "\"/>\n";
    out << "<circle cx=\"" << sx(states.back()(0, i)) << "\" cy=\""
        << sy(states.back()(1, i)) << "\" r=\"4\" fill=\"" << color
        << "\"/>\n";
  }
  out << "</svg>\n";
}

void write_deploy_metrics(const std::string& path, const DeployMetrics& m) {
  json j;
  j["format_version"] = 1;
  j["config_hash"] = m.config_hash;
  j["task"] = m.task;
  j["n"] = m.n;
  j["steps"] = m.steps;
  j["T"] = m.T;
  j["min_pairwise_distance"] = m.min_pairwise_distance;
  j["max_speed"] = m.max_speed;
  j["final_goal_loss"] = m.final_goal_loss;
  j["messages"] = {{"round1", m.messages_round1},
                   {"round2", m.messages_round2},
                   {"round3", m.messages_round3}};
  if (m.stale_control_deviation) {
    j["stale_control_deviation"] = *m.stale_control_deviation;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metrics: " + path);
  out << j.dump(1) << "\n";
}

void write_eval_metrics(const std::string& path, const EvalMetrics& m) {
  json j;
  j["format_version"] = 1;
  j["config_hash"] = m.config_hash;
  j["n"] = m.n;
  j["trajectories"] = m.trajectories;
  j["loss_per_robot_mean"] = m.loss_per_robot_mean;
  j["loss_per_robot_std"] = m.loss_per_robot_std;
  j["min_pairwise_distance"] = m.min_pairwise_distance;
  j["per_trajectory_loss"] = m.per_trajectory_loss;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metrics: " + path);
  out << j.dump(1) << "\n";
}

}  // namespace phswarm
