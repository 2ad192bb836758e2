#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "phswarm/policy.hpp"

namespace phswarm {

// Wire payloads of the three-round protocol. All values, no references:
// a delivered message is the only channel between nodes.
struct Message {
  int round = 0;  // 1, 2 or 3
  int from = -1;
  int to = -1;
  Eigen::VectorXd state;          // round 1: x_j
  Eigen::VectorXd denergy_self;   // round 2: dH^(j)/dx_i
  Eigen::VectorXd z_j_col;        // round 2: Z^J_{ji}
  Eigen::VectorXd z_r_col;        // round 2: Z^R_{ji}
  Eigen::VectorXd denergy_total;  // round 3: dH_theta/dx_j
};

// One robot's controller endpoint. A node sees its own state, its goal, the
// shared parameters, and whatever messages it receives; it never touches
// another node's fields. state() is the instrumented external accessor used
// by the harness for recording; protocol code does not go through it.
class RobotNode {
 public:
  RobotNode(int id, const PolicyParams& params,
            const PortHamiltonianBase& base, const Eigen::VectorXd& x0,
            const Eigen::VectorXd& goal);
  RobotNode(RobotNode&&) noexcept;
  RobotNode& operator=(RobotNode&&) noexcept;
  ~RobotNode();

  int id() const { return id_; }

  const Eigen::VectorXd& state() const {
    ++state_reads_;
    return state_;
  }
  int state_reads() const { return state_reads_; }
  void reset_state_reads() { state_reads_ = 0; }

  // New control step over the given k-hop neighbor set (ascending, must
  // contain the node itself).
  void begin_step(const std::vector<int>& neighbors, bool stale);

  Message make_round1(int to) const;
  Message make_round2(int to) const;
  Message make_round3(int to) const;

  void receive(const Message& msg);

  // Per-round local computation, in protocol order.
  void compute_round1();  // head outputs, local energy, its gradients
  void compute_round2();  // total energy gradient, blocks become available
  void compute_round3();  // control input

  const Eigen::VectorXd& control() const;
  void advance(double dt);  // local Euler integration with the computed u

  const std::vector<int>& received_from(int round) const;
  const std::vector<int>& step_neighbors() const;
  int hops() const;
  bool has_cache() const { return cache_valid_; }

 private:
  struct StepWork;

  int id_;
  const PolicyParams* params_;
  PortHamiltonianBase base_;
  Eigen::VectorXd state_;
  Eigen::VectorXd goal_;
  mutable int state_reads_ = 0;

  std::unique_ptr<StepWork> work_;

  // round-2/3 payload values kept from the previous step (stale mode)
  std::map<int, Message> cache_round2_, cache_round3_;
  bool cache_valid_ = false;
};

// Delivers every message of the given round along the k-hop neighbor sets
// fixed in begin_step, then runs the per-node computation for that round.
// Returns the delivered message count.
int run_round(std::vector<RobotNode>& nodes, int round);

struct DeployStep {
  JointState next;            // nx x n
  Eigen::MatrixXd controls;   // m x n
  std::array<int, 3> delivered = {0, 0, 0};
};

// One synchronous control step: rounds 1-3 then a local Euler update.
DeployStep distributed_step(std::vector<RobotNode>& nodes, const CommGraph& g,
                            double dt);

// Round 1 runs fresh; round-2/3 payloads are taken from the previous step's
// cache (fresh ones are still exchanged to refill the cache). Requires at
// least one prior step.
DeployStep stale_step(std::vector<RobotNode>& nodes, const CommGraph& g,
                      double dt);

std::vector<RobotNode> make_nodes(const PolicyParams& params,
                                  const PortHamiltonianBase& base,
                                  const JointState& x0,
                                  const JointState& goals);

}  // namespace phswarm
