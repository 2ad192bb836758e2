#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "phswarm/dynamics.hpp"
#include "phswarm/graph.hpp"
#include "phswarm/tensor.hpp"

namespace phswarm {

// One self-attention head: W layers of Q/K/V projections (r_w x h_w) and an
// output projection (d_w x r_w). Activations are fixed to beta = sigmoid and
// gamma = alpha = swish. Chaining requires h_{w+1} == d_w.
struct SAHeadConfig {
  std::vector<int> h, r, d;

  int layers() const { return static_cast<int>(h.size()); }
  int out_dim() const { return d.back(); }
  void validate(int input_rows) const;
};

// Parameters per layer per head: 3 * (r_w * h_w) + d_w * r_w.
int param_count(const SAHeadConfig& cfg);

// How the dissipation blocks are built from head outputs. kVerbatim applies
// the antisymmetrized-sum construction directly; kStrictPsd gates the
// off-diagonal blocks with nonnegative scalars so that the assembled global
// dissipation matrix is a weighted graph Laplacian (Kronecker identity) plus
// a nonnegative diagonal, hence provably PSD.
enum class DissipationMode { kVerbatim, kStrictPsd };

// Energy head wiring. kMerged uses a single head whose first nx+2 output
// rows weight the squared inputs (kinetic-like term) and whose remaining
// rows sum into the potential term. kSplit uses separate kinetic/potential
// heads of output sizes nx+2 and 1.
enum class EnergyWiring { kMerged, kSplit };

struct PolicyConfig {
  int m = 2;      // spatial dimension; per-robot state size is 2m
  int hops = 1;   // k
  DissipationMode mode = DissipationMode::kVerbatim;
  EnergyWiring wiring = EnergyWiring::kMerged;

  SAHeadConfig r_head, j_head;
  SAHeadConfig h_head;            // used when wiring == kMerged
  SAHeadConfig m_head, u_head;    // used when wiring == kSplit

  int nx() const { return 2 * m; }
  int rj_input_rows() const { return nx(); }
  int h_input_rows() const { return nx() + 2; }

  bool j_head_scalar() const { return j_head.out_dim() == 1; }

  void validate() const;

  // Head sizes used throughout the experiments (m = 2): R and J consume
  // 4-row inputs through 3 layers of width 8, with output sizes 16 and 1;
  // the energy head consumes 6-row inputs and outputs 25 rows.
  static PolicyConfig standard(int m = 2, int hops = 1);
};

int param_count(const PolicyConfig& cfg);

struct HeadParams {
  std::vector<ad::Mat> q, k, v, z;  // one matrix per layer
};

struct PolicyParams {
  PolicyConfig config;
  HeadParams r, j, h, m, u;

  // Heads in serialization order for the active wiring.
  std::vector<const HeadParams*> active_heads() const;
  std::vector<HeadParams*> active_heads();
};

// Every entry Uniform(-1/sqrt(h_w), 1/sqrt(h_w)), drawn in serialization
// order from the given seed; identical seeds give identical parameters.
PolicyParams init_params(const PolicyConfig& cfg, std::uint64_t seed);

// Flat vector view in serialization order (head, layer, Q/K/V/Z, row-major).
Eigen::VectorXd params_to_vector(const PolicyParams& p);
void vector_to_params(const Eigen::VectorXd& v, PolicyParams& p);

// Model file round trip (JSON, exact double round trip).
void save_model(const std::string& path, const PolicyParams& p,
                const std::string& config_hash = "");
PolicyParams load_model(const std::string& path);

// ---- tape-side evaluation ----

struct HeadVars {
  std::vector<ad::Var> q, k, v, z;
};

struct PolicyVars {
  HeadVars r, j, h, m, u;
  std::vector<ad::Var> flat;  // leaves in serialization order
};

// Lifts parameters onto a tape; as_leaves = false lifts them as constants
// (deployment-time evaluation, no parameter gradients).
PolicyVars lift_params(ad::Tape& tape, const PolicyParams& p,
                       bool as_leaves = true);

// Base-dynamics constants used by the controller on a tape.
struct BaseVars {
  ad::Var fdag;       // F^dag
  ad::Var open_gain;  // (J_s - R_s) * d(dH_s)/dx, so open term = open_gain * x_i
};

BaseVars lift_base(ad::Tape& tape, const PortHamiltonianBase& base);

// Observation matrices for one robot. `others` holds the k-hop neighbor
// states excluding self, ascending by robot id; the self column comes first.
struct LocalObservation {
  ad::Var rj;   // nx x C
  ad::Var hin;  // (nx + 2) x C
};

LocalObservation build_inputs(
    ad::Tape& tape, const PolicyConfig& cfg, const ad::Var& self,
    std::span<const std::pair<int, ad::Var>> others,
    const Eigen::VectorXd& goal);

// X^W of one head for one robot, column-convention: h_1 x C in, d_W x C out.
ad::Var sa_forward(const SAHeadConfig& cfg, const HeadVars& params,
                   const ad::Var& x0);

// Everything robot i can compute from its own and neighbors' states:
// head outputs, local energy, and the energy gradient w.r.t. each state it
// saw. `denergy` is keyed by robot id and includes the self entry.
struct RobotEval {
  int id = 0;
  std::vector<int> neighbors;  // ascending, including self
  ad::Var z_r, z_j;            // d_W x C head outputs
  ad::Var energy;              // scalar
  std::map<int, ad::Var> denergy;
};

RobotEval eval_robot(ad::Tape& tape, const PolicyConfig& cfg,
                     const PolicyVars& vars, int id, const ad::Var& self,
                     const std::vector<std::pair<int, ad::Var>>& others,
                     const Eigen::VectorXd& goal);

// Blocks of robot i's row, from raw head-output columns. z_pairs maps
// j -> (Z_ij, Z_ji) as d_W x 1 columns; both directions must be present.
std::map<int, ad::Var> r_blocks_for(ad::Tape& tape, const PolicyConfig& cfg,
                                    int i, const std::vector<int>& neighbors,
                                    const std::map<int, std::pair<ad::Var, ad::Var>>& z_pairs);

std::map<int, ad::Var> j_blocks_for(ad::Tape& tape, const PolicyConfig& cfg,
                                    int i, const std::vector<int>& neighbors,
                                    const std::map<int, std::pair<ad::Var, ad::Var>>& z_pairs);

// What robot i must have gathered about neighbor j before computing u_i.
struct NeighborPayload {
  ad::Var z_r_ij, z_r_ji;  // dissipation head columns, both directions
  ad::Var z_j_ij, z_j_ji;  // interconnection head columns
  ad::Var denergy_total;   // dH_theta/dx_j
};

// u_i = F^dag ( sum_j ([J]_ij - [R]_ij) dH_theta/dx_j - open_gain x_i ),
// summed ascending over the neighbor ids. Shared between the centralized
// evaluation and the per-node deployment path so both produce identical
// arithmetic.
ad::Var assemble_control(ad::Tape& tape, const PolicyConfig& cfg,
                         const BaseVars& base, int i,
                         const std::vector<int>& neighbors,
                         const std::map<int, NeighborPayload>& payload,
                         const ad::Var& self);

// ---- centralized evaluation over a joint state ----

struct EnergyGradients {
  std::vector<RobotEval> robots;
  std::map<int, ad::Var> total;  // i -> dH_theta/dx_i
};

EnergyGradients hamiltonian_gradients(ad::Tape& tape, const PolicyConfig& cfg,
                                      const PolicyVars& vars, const ad::Var& x,
                                      const CommGraph& g,
                                      const Eigen::MatrixXd& goals);

struct ControlEval {
  ad::Var controls;  // n_u x n
  EnergyGradients grads;
};

ControlEval policy_control(ad::Tape& tape, const PolicyConfig& cfg,
                           const PolicyVars& vars, const ad::Var& x,
                           const CommGraph& g, const Eigen::MatrixXd& goals,
                           const BaseVars& base);

// Position of robot id in the observation column order of `neighbors`.
int observation_column(const std::vector<int>& neighbors, int self,
                       int target);

}  // namespace phswarm
