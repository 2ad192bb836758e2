#include "phswarm/deploy.hpp"

#include <algorithm>
#include <stdexcept>

namespace phswarm {

using ad::Mat;
using ad::Tape;
using ad::Var;

struct RobotNode::StepWork {
  std::unique_ptr<Tape> tape;
  PolicyVars vars;
  BaseVars base;
  std::vector<int> neighbors;  // ascending, includes self
  bool stale = false;
  int phase = 0;  // 1..3 = rounds completed

  std::map<int, Eigen::VectorXd> states_in;  // round-1 payloads
  std::map<int, Message> round2_in, round3_in;
  std::vector<int> sources[3];

  std::optional<RobotEval> eval;
  std::optional<Var> denergy_total;
  std::optional<Var> control;
  Eigen::VectorXd control_value;
};

RobotNode::RobotNode(int id, const PolicyParams& params,
                     const PortHamiltonianBase& base, const Eigen::VectorXd& x0,
                     const Eigen::VectorXd& goal)
    : id_(id), params_(&params), base_(base), state_(x0), goal_(goal) {}

RobotNode::RobotNode(RobotNode&&) noexcept = default;
RobotNode& RobotNode::operator=(RobotNode&&) noexcept = default;
RobotNode::~RobotNode() = default;

void RobotNode::begin_step(const std::vector<int>& neighbors, bool stale) {
  if (stale && !cache_valid_) {
    throw std::logic_error("stale step requires a completed prior step");
  }
  work_ = std::make_unique<StepWork>();
  work_->tape = std::make_unique<Tape>();
  work_->vars = lift_params(*work_->tape, *params_, false);
  work_->base = lift_base(*work_->tape, base_);
  work_->neighbors = neighbors;
  std::sort(work_->neighbors.begin(), work_->neighbors.end());
  if (!std::binary_search(work_->neighbors.begin(), work_->neighbors.end(),
                          id_)) {
    throw std::invalid_argument("neighbor set must contain the node");
  }
  work_->stale = stale;
  work_->phase = 0;
}

Message RobotNode::make_round1(int to) const {
  Message m;
  m.round = 1;
  m.from = id_;
  m.to = to;
  m.state = state_;  // own field, not the instrumented accessor
  return m;
}

Message RobotNode::make_round2(int to) const {
  const StepWork& w = *work_;
  if (!w.eval) throw std::logic_error("round 2 payload needs round 1 done");
  Message m;
  m.round = 2;
  m.from = id_;
  m.to = to;
  m.denergy_self = Eigen::MatrixXd(w.eval->denergy.at(to).value());
  const int col = observation_column(w.neighbors, id_, to);
  m.z_j_col = Eigen::MatrixXd(ad::slice_cols(w.eval->z_j, col, 1).value());
  m.z_r_col = Eigen::MatrixXd(ad::slice_cols(w.eval->z_r, col, 1).value());
  return m;
}

Message RobotNode::make_round3(int to) const {
  const StepWork& w = *work_;
  if (!w.denergy_total) throw std::logic_error("round 3 payload needs round 2");
  Message m;
  m.round = 3;
  m.from = id_;
  m.to = to;
  m.denergy_total = Eigen::MatrixXd(w.denergy_total->value());
  return m;
}

void RobotNode::receive(const Message& msg) {
  StepWork& w = *work_;
  if (msg.to != id_) throw std::logic_error("message delivered to wrong node");
  if (msg.round != w.phase + 1) {
    throw std::logic_error("out-of-order round " + std::to_string(msg.round));
  }
  switch (msg.round) {
    case 1:
      w.states_in[msg.from] = msg.state;
      break;
    case 2:
      w.round2_in[msg.from] = msg;
      break;
    case 3:
      w.round3_in[msg.from] = msg;
      break;
    default:
      throw std::logic_error("unknown round");
  }
  w.sources[msg.round - 1].push_back(msg.from);
}

void RobotNode::compute_round1() {
  StepWork& w = *work_;
  if (w.phase != 0) throw std::logic_error("round 1 computed twice");
  std::vector<std::pair<int, Var>> others;
  for (int j : w.neighbors) {
    if (j == id_) continue;
    auto it = w.states_in.find(j);
    if (it == w.states_in.end()) {
      throw std::runtime_error("missing round-1 state from neighbor " +
                               std::to_string(j));
    }
    others.emplace_back(j, w.tape->constant(Mat(it->second)));
  }
  const Var self = w.tape->constant(Mat(state_));
  w.eval = eval_robot(*w.tape, params_->config, w.vars, id_, self, others,
                      goal_);
  w.phase = 1;
}

void RobotNode::compute_round2() {
  StepWork& w = *work_;
  if (w.phase != 1) throw std::logic_error("round 2 out of order");

  auto round2_payload = [&](int j) -> const Message& {
    if (w.stale) {
      auto c = cache_round2_.find(j);
      if (c != cache_round2_.end()) return c->second;
    }
    auto it = w.round2_in.find(j);
    if (it == w.round2_in.end()) {
      throw std::runtime_error("missing round-2 message from neighbor " +
                               std::to_string(j));
    }
    return it->second;
  };

  // dH_theta/dx_i = own contribution plus the neighbors', ascending order.
  Var total;
  for (int j : w.neighbors) {
    Var part = j == id_
                   ? w.eval->denergy.at(id_)
                   : w.tape->constant(Mat(round2_payload(j).denergy_self));
    total = total.valid() ? ad::add(total, part) : part;
  }
  w.denergy_total = total;
  w.phase = 2;
}

void RobotNode::compute_round3() {
  StepWork& w = *work_;
  if (w.phase != 2) throw std::logic_error("round 3 out of order");

  std::map<int, NeighborPayload> payload;
  for (int j : w.neighbors) {
    NeighborPayload p;
    const int col = observation_column(w.neighbors, id_, j);
    p.z_r_ij = ad::slice_cols(w.eval->z_r, col, 1);
    p.z_j_ij = ad::slice_cols(w.eval->z_j, col, 1);
    if (j == id_) {
      p.z_r_ji = p.z_r_ij;
      p.z_j_ji = p.z_j_ij;
      p.denergy_total = *w.denergy_total;
    } else {
      const Message* r2 = nullptr;
      if (w.stale) {
        auto c = cache_round2_.find(j);
        if (c != cache_round2_.end()) r2 = &c->second;
      }
      if (r2 == nullptr) {
        auto it = w.round2_in.find(j);
        if (it == w.round2_in.end()) {
          throw std::runtime_error("missing round-2 message from neighbor " +
                                   std::to_string(j));
        }
        r2 = &it->second;
      }
      p.z_r_ji = w.tape->constant(Mat(r2->z_r_col));
      p.z_j_ji = w.tape->constant(Mat(r2->z_j_col));

      const Message* r3 = nullptr;
      if (w.stale) {
        auto c = cache_round3_.find(j);
        if (c != cache_round3_.end()) r3 = &c->second;
      }
      if (r3 == nullptr) {
        auto it = w.round3_in.find(j);
        if (it == w.round3_in.end()) {
          throw std::runtime_error("missing round-3 message from neighbor " +
                                   std::to_string(j));
        }
        r3 = &it->second;
      }
      p.denergy_total = w.tape->constant(Mat(r3->denergy_total));
    }
    payload[j] = p;
  }

  const Var self = w.tape->constant(Mat(state_));
  w.control = assemble_control(*w.tape, params_->config, w.base, id_,
                               w.neighbors, payload, self);
  w.control_value = Eigen::MatrixXd(w.control->value());
  w.phase = 3;

  // refresh the stale cache with this step's incoming data
  cache_round2_ = w.round2_in;
  cache_round3_ = w.round3_in;
  cache_valid_ = true;
}

const Eigen::VectorXd& RobotNode::control() const {
  if (!work_ || work_->phase != 3) {
    throw std::logic_error("control not yet computed");
  }
  return work_->control_value;
}

void RobotNode::advance(double dt) {
  const int m = base_.m;
  Eigen::VectorXd d(state_.size());
  d.head(m) = state_.tail(m);
  d.tail(m) = control();
  state_ += dt * d;
  if (!state_.allFinite()) {
    throw std::runtime_error("node state turned non-finite");
  }
}

const std::vector<int>& RobotNode::received_from(int round) const {
  return work_->sources[round - 1];
}

const std::vector<int>& RobotNode::step_neighbors() const {
  if (!work_) throw std::logic_error("no step in progress");
  return work_->neighbors;
}

int RobotNode::hops() const { return params_->config.hops; }

// Delivery first (a synchronous barrier across the team), then each node's
// local computation for the round. Deliveries follow the receivers' k-hop
// neighbor views fixed in begin_step; communication is undirected, so
// j in N_i implies i in N_j and every payload is available.
int run_round(std::vector<RobotNode>& nodes, int round) {
  if (round < 1 || round > 3) throw std::invalid_argument("unknown round");
  int delivered = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (int j : nodes[i].step_neighbors()) {
      if (j == static_cast<int>(i)) continue;
      Message m;
      switch (round) {
        case 1:
          m = nodes[j].make_round1(static_cast<int>(i));
          break;
        case 2:
          m = nodes[j].make_round2(static_cast<int>(i));
          break;
        default:
          m = nodes[j].make_round3(static_cast<int>(i));
          break;
      }
      nodes[i].receive(m);
      ++delivered;
    }
  }
  for (RobotNode& n : nodes) {
    switch (round) {
      case 1:
        n.compute_round1();
        break;
      case 2:
        n.compute_round2();
        break;
      default:
        n.compute_round3();
        break;
    }
  }
  return delivered;
}

namespace {

DeployStep run_protocol(std::vector<RobotNode>& nodes, const CommGraph& g,
                        double dt, bool stale) {
  if (nodes.empty()) throw std::invalid_argument("no nodes");
  const int hops = nodes[0].hops();

  DeployStep out;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    nodes[i].begin_step(khop_neighbors(g, static_cast<int>(i), hops), stale);
  }
  out.delivered[0] = run_round(nodes, 1);
  out.delivered[1] = run_round(nodes, 2);
  out.delivered[2] = run_round(nodes, 3);

  const int m = static_cast<int>(nodes[0].control().size());
  out.controls.resize(m, static_cast<int>(nodes.size()));
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    out.controls.col(i) = nodes[i].control();
    nodes[i].advance(dt);
  }
  out.next.resize(2 * m, static_cast<int>(nodes.size()));
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    out.next.col(i) = nodes[i].state();
  }
  return out;
}

}  // namespace

DeployStep distributed_step(std::vector<RobotNode>& nodes, const CommGraph& g,
                            double dt) {
  return run_protocol(nodes, g, dt, false);
}

DeployStep stale_step(std::vector<RobotNode>& nodes, const CommGraph& g,
                      double dt) {
  return run_protocol(nodes, g, dt, true);
}

std::vector<RobotNode> make_nodes(const PolicyParams& params,
                                  const PortHamiltonianBase& base,
                                  const JointState& x0,
                                  const JointState& goals) {
  std::vector<RobotNode> nodes;
  nodes.reserve(x0.cols());
  for (int i = 0; i < x0.cols(); ++i) {
    nodes.emplace_back(i, params, base, x0.col(i), goals.col(i));
  }
  return nodes;
}

}  // namespace phswarm
