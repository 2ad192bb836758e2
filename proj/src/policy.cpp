#include "phswarm/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "phswarm/util.hpp"

namespace phswarm {

using ad::Mat;
using ad::Tape;
using ad::Var;

void SAHeadConfig::validate(int input_rows) const {
  const std::size_t w = h.size();
  if (w == 0 || r.size() != w || d.size() != w) {
    throw std::invalid_argument("head config: size lists must share length");
  }
  if (h.front() != input_rows) {
    throw std::invalid_argument("head config: h_1 must equal input rows");
  }
  for (std::size_t i = 0; i < w; ++i) {
    if (h[i] <= 0 || r[i] <= 0 || d[i] <= 0) {
      throw std::invalid_argument("head config: sizes must be positive");
    }
    if (i + 1 < w && h[i + 1] != d[i]) {
      throw std::invalid_argument("head config: h_{w+1} must equal d_w");
    }
  }
}

int param_count(const SAHeadConfig& cfg) {
  if (cfg.h.size() != cfg.r.size() || cfg.h.size() != cfg.d.size() ||
      cfg.h.empty()) {
    throw std::invalid_argument("head config: size lists must share length");
  }
  int total = 0;
  for (std::size_t w = 0; w < cfg.h.size(); ++w) {
    if (w + 1 < cfg.h.size() && cfg.h[w + 1] != cfg.d[w]) {
      throw std::invalid_argument("head config: h_{w+1} must equal d_w");
    }
    total += 3 * cfg.r[w] * cfg.h[w] + cfg.d[w] * cfg.r[w];
  }
  return total;
}

void PolicyConfig::validate() const {
  if (m < 1) throw std::invalid_argument("policy: m must be >= 1");
  if (hops < 0) throw std::invalid_argument("policy: hops must be >= 0");
  r_head.validate(rj_input_rows());
  j_head.validate(rj_input_rows());
  if (r_head.out_dim() != nx() * nx()) {
    throw std::invalid_argument("policy: R head must output nx^2 rows");
  }
  if (!j_head_scalar() && j_head.out_dim() != nx() * nx()) {
    throw std::invalid_argument("policy: J head must output nx^2 rows or 1");
  }
  if (wiring == EnergyWiring::kMerged) {
    h_head.validate(h_input_rows());
    if (h_head.out_dim() <= h_input_rows()) {
      throw std::invalid_argument(
          "policy: merged energy head needs more outputs than input rows");
    }
  } else {
    m_head.validate(h_input_rows());
    u_head.validate(h_input_rows());
    if (m_head.out_dim() != h_input_rows()) {
      throw std::invalid_argument("policy: kinetic head must output nx+2");
    }
    if (u_head.out_dim() != 1) {
      throw std::invalid_argument("policy: potential head must output 1");
    }
  }
}

PolicyConfig PolicyConfig::standard(int m, int hops) {
  PolicyConfig c;
  c.m = m;
  c.hops = hops;
  const int nx = 2 * m;
  c.r_head = {{nx, 8, 8}, {8, 8, 8}, {8, 8, nx * nx}};
  c.j_head = {{nx, 8, 8}, {8, 8, 8}, {8, 8, 1}};
  c.h_head = {{nx + 2, 8, 8}, {8, 8, 8}, {8, 8, 25}};
  c.m_head = {{nx + 2, 8, 8}, {8, 8, 8}, {8, 8, nx + 2}};
  c.u_head = {{nx + 2, 8, 8}, {8, 8, 8}, {8, 8, 1}};
  return c;
}

int param_count(const PolicyConfig& cfg) {
  int total = param_count(cfg.r_head) + param_count(cfg.j_head);
  if (cfg.wiring == EnergyWiring::kMerged) {
    total += param_count(cfg.h_head);
  } else {
    total += param_count(cfg.m_head) + param_count(cfg.u_head);
  }
  return total;
}

std::vector<const HeadParams*> PolicyParams::active_heads() const {
  if (config.wiring == EnergyWiring::kMerged) return {&r, &j, &h};
  return {&r, &j, &m, &u};
}

std::vector<HeadParams*> PolicyParams::active_heads() {
  if (config.wiring == EnergyWiring::kMerged) return {&r, &j, &h};
  return {&r, &j, &m, &u};
}

namespace {

std::vector<const SAHeadConfig*> active_configs(const PolicyConfig& cfg) {
  if (cfg.wiring == EnergyWiring::kMerged) {
    return {&cfg.r_head, &cfg.j_head, &cfg.h_head};
  }
  return {&cfg.r_head, &cfg.j_head, &cfg.m_head, &cfg.u_head};
}

Mat draw_uniform(Rng& rng, int rows, int cols, double bound) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
  return m;
}

}  // namespace

PolicyParams init_params(const PolicyConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  PolicyParams p;
  p.config = cfg;
  Rng rng(seed);
  auto heads = p.active_heads();
  auto configs = active_configs(cfg);
  for (std::size_t k = 0; k < heads.size(); ++k) {
    const SAHeadConfig& hc = *configs[k];
    for (int w = 0; w < hc.layers(); ++w) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(hc.h[w]));
      heads[k]->q.push_back(draw_uniform(rng, hc.r[w], hc.h[w], bound));
      heads[k]->k.push_back(draw_uniform(rng, hc.r[w], hc.h[w], bound));
      heads[k]->v.push_back(draw_uniform(rng, hc.r[w], hc.h[w], bound));
      heads[k]->z.push_back(draw_uniform(rng, hc.d[w], hc.r[w], bound));
    }
  }
  return p;
}

Eigen::VectorXd params_to_vector(const PolicyParams& p) {
  std::vector<double> out;
  for (const HeadParams* hp : p.active_heads()) {
    for (std::size_t w = 0; w < hp->q.size(); ++w) {
      for (const Mat* m : {&hp->q[w], &hp->k[w], &hp->v[w], &hp->z[w]}) {
        out.insert(out.end(), m->data(), m->data() + m->size());
      }
    }
  }
  return Eigen::Map<Eigen::VectorXd>(out.data(), out.size());
}

void vector_to_params(const Eigen::VectorXd& v, PolicyParams& p) {
  Eigen::Index at = 0;
  for (HeadParams* hp : p.active_heads()) {
    for (std::size_t w = 0; w < hp->q.size(); ++w) {
      for (Mat* m : {&hp->q[w], &hp->k[w], &hp->v[w], &hp->z[w]}) {
        if (at + m->size() > v.size()) {
          throw std::invalid_argument("parameter vector too short");
        }
        std::copy(v.data() + at, v.data() + at + m->size(), m->data());
        at += m->size();
      }
    }
  }
  if (at != v.size()) {
    throw std::invalid_argument("parameter vector length mismatch");
  }
}

// ---- model file ----

namespace {

using nlohmann::json;

json head_cfg_to_json(const SAHeadConfig& c) {
  return json{{"h", c.h}, {"r", c.r}, {"d", c.d}};
}

SAHeadConfig head_cfg_from_json(const json& j) {
  SAHeadConfig c;
  c.h = j.at("h").get<std::vector<int>>();
  c.r = j.at("r").get<std::vector<int>>();
  c.d = j.at("d").get<std::vector<int>>();
  return c;
}

json head_params_to_json(const HeadParams& hp) {
  json layers = json::array();
  for (std::size_t w = 0; w < hp.q.size(); ++w) {
    json layer;
    for (auto [key, m] : {std::pair{"AQ", &hp.q[w]}, {"AK", &hp.k[w]},
                          {"AV", &hp.v[w]}, {"AZ", &hp.z[w]}}) {
      layer[key] = std::vector<double>(m->data(), m->data() + m->size());
    }
    layers.push_back(std::move(layer));
  }
  return layers;
}

void head_params_from_json(const json& layers, const SAHeadConfig& cfg,
                           HeadParams& hp) {
  if (layers.size() != static_cast<std::size_t>(cfg.layers())) {
    throw std::runtime_error("model file: layer count mismatch");
  }
  for (int w = 0; w < cfg.layers(); ++w) {
    auto read = [&](const char* key, int rows, int cols) {
      auto flat = layers[w].at(key).get<std::vector<double>>();
      if (static_cast<int>(flat.size()) != rows * cols) {
        throw std::runtime_error("model file: parameter size mismatch");
      }
      Mat m(rows, cols);
      std::copy(flat.begin(), flat.end(), m.data());
      return m;
    };
    hp.q.push_back(read("AQ", cfg.r[w], cfg.h[w]));
    hp.k.push_back(read("AK", cfg.r[w], cfg.h[w]));
    hp.v.push_back(read("AV", cfg.r[w], cfg.h[w]));
    hp.z.push_back(read("AZ", cfg.d[w], cfg.r[w]));
  }
}

}  // namespace

void save_model(const std::string& path, const PolicyParams& p,
                const std::string& config_hash) {
  const PolicyConfig& c = p.config;
  json j;
  j["format_version"] = 1;
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  j["m"] = c.m;
  j["hops"] = c.hops;
  j["mode"] = c.mode == DissipationMode::kVerbatim ? "verbatim" : "strict_psd";
  j["wiring"] = c.wiring == EnergyWiring::kMerged ? "merged" : "split";
  j["heads"] = json::object();
  const char* names_merged[] = {"R", "J", "H"};
  const char* names_split[] = {"R", "J", "M", "U"};
  auto heads = p.active_heads();
  auto configs = active_configs(c);
  for (std::size_t k = 0; k < heads.size(); ++k) {
    const char* name = c.wiring == EnergyWiring::kMerged ? names_merged[k]
                                                         : names_split[k];
    j["heads"][name] = {{"config", head_cfg_to_json(*configs[k])},
                        {"layers", head_params_to_json(*heads[k])}};
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  out << j.dump(1) << "\n";
}

PolicyParams load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read model file: " + path);
  json j;
  in >> j;
  if (j.at("format_version").get<int>() != 1) {
    throw std::runtime_error("model file: unsupported format_version");
  }
  PolicyConfig c;
  c.m = j.at("m").get<int>();
  c.hops = j.at("hops").get<int>();
  c.mode = j.at("mode").get<std::string>() == "strict_psd"
               ? DissipationMode::kStrictPsd
               : DissipationMode::kVerbatim;
  c.wiring = j.at("wiring").get<std::string>() == "split"
                 ? EnergyWiring::kSplit
                 : EnergyWiring::kMerged;
  const auto& heads = j.at("heads");
  PolicyParams p;
  if (c.wiring == EnergyWiring::kMerged) {
    c.r_head = head_cfg_from_json(heads.at("R").at("config"));
    c.j_head = head_cfg_from_json(heads.at("J").at("config"));
    c.h_head = head_cfg_from_json(heads.at("H").at("config"));
  } else {
    c.r_head = head_cfg_from_json(heads.at("R").at("config"));
    c.j_head = head_cfg_from_json(heads.at("J").at("config"));
    c.m_head = head_cfg_from_json(heads.at("M").at("config"));
    c.u_head = head_cfg_from_json(heads.at("U").at("config"));
  }
  p.config = c;
  c.validate();
  head_params_from_json(heads.at("R").at("layers"), c.r_head, p.r);
  head_params_from_json(heads.at("J").at("layers"), c.j_head, p.j);
  if (c.wiring == EnergyWiring::kMerged) {
    head_params_from_json(heads.at("H").at("layers"), c.h_head, p.h);
  } else {
    head_params_from_json(heads.at("M").at("layers"), c.m_head, p.m);
    head_params_from_json(heads.at("U").at("layers"), c.u_head, p.u);
  }
  return p;
}

// ---- tape-side evaluation ----

PolicyVars lift_params(Tape& tape, const PolicyParams& p, bool as_leaves) {
  PolicyVars out;
  std::vector<HeadVars*> dst;
  if (p.config.wiring == EnergyWiring::kMerged) {
    dst = {&out.r, &out.j, &out.h};
  } else {
    dst = {&out.r, &out.j, &out.m, &out.u};
  }
  auto src = p.active_heads();
  for (std::size_t k = 0; k < src.size(); ++k) {
    for (std::size_t w = 0; w < src[k]->q.size(); ++w) {
      for (auto [vecs, mats] :
           {std::pair{&dst[k]->q, &src[k]->q}, {&dst[k]->k, &src[k]->k},
            {&dst[k]->v, &src[k]->v}, {&dst[k]->z, &src[k]->z}}) {
        Var v = as_leaves ? tape.leaf((*mats)[w]) : tape.constant((*mats)[w]);
        vecs->push_back(v);
        out.flat.push_back(v);
      }
    }
  }
  return out;
}

BaseVars lift_base(Tape& tape, const PortHamiltonianBase& base) {
  // dH_s(x) = P x with P selecting the velocity components, so the open-loop
  // compensation is a single constant gain on x_i.
  const int nx = base.nx();
  Eigen::MatrixXd sel = Eigen::MatrixXd::Zero(nx, nx);
  sel.bottomRightCorner(base.m, base.m) =
      Eigen::MatrixXd::Identity(base.m, base.m);
  Mat gain = (base.J - base.R) * sel;
  BaseVars out;
  out.fdag = tape.constant(Mat(base.Fdag));
  out.open_gain = tape.constant(gain);
  return out;
}

LocalObservation build_inputs(Tape& tape, const PolicyConfig& cfg,
                              const Var& self,
                              std::span<const std::pair<int, Var>> others,
                              const Eigen::VectorXd& goal) {
  if (goal.size() != cfg.nx()) {
    throw std::invalid_argument("build_inputs: goal has wrong dimension");
  }
  const Var goal_v = tape.constant(Mat(goal));
  const Var dx_self = ad::sub(self, goal_v);

  std::vector<Var> rj_cols = {dx_self};
  std::vector<Var> h_cols = {
      ad::concat_rows({dx_self, tape.zeros(2, 1)})};
  for (const auto& [id, state] : others) {
    (void)id;
    const Var d = ad::sub(self, state);
    rj_cols.push_back(d);
    const Var ss = ad::reduce_sum(ad::square(d));
    const Var norm = ad::pow(ss, 0.5);
    const Var quart = ad::pow(ss, 0.125);  // ||d||^(1/4)
    h_cols.push_back(ad::concat_rows({d, quart, norm}));
  }
  LocalObservation obs;
  obs.rj = rj_cols.size() == 1 ? rj_cols[0] : ad::concat_cols(rj_cols);
  obs.hin = h_cols.size() == 1 ? h_cols[0] : ad::concat_cols(h_cols);
  return obs;
}

Var sa_forward(const SAHeadConfig& cfg, const HeadVars& params,
               const Var& x0) {
  if (x0.rows() != cfg.h.front()) {
    throw std::invalid_argument("sa_forward: input rows do not match h_1");
  }
  const int c = x0.cols();
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));
  Var x = x0;
  for (int w = 0; w < cfg.layers(); ++w) {
    const Var bq = ad::sigmoid(ad::matmul(params.q[w], x));
    const Var bk = ad::sigmoid(ad::matmul(params.k[w], x));
    const Var bv = ad::sigmoid(ad::matmul(params.v[w], x));
    const Var scores = ad::scale(ad::matmul(ad::transpose(bq), bk), inv_sqrt_c);
    const Var att = ad::row_softmax(scores);  // C x C, rows sum to 1
    const Var y = ad::swish(ad::matmul(bv, ad::transpose(att)));
    x = ad::swish(ad::matmul(params.z[w], y));
  }
  return x;
}

int observation_column(const std::vector<int>& neighbors, int self,
                       int target) {
  if (target == self) return 0;
  int col = 1;
  for (int id : neighbors) {
    if (id == self) continue;
    if (id == target) return col;
    ++col;
  }
  throw std::out_of_range("robot not present in neighbor set");
}

RobotEval eval_robot(Tape& tape, const PolicyConfig& cfg,
                     const PolicyVars& vars, int id, const Var& self,
                     const std::vector<std::pair<int, Var>>& others_in,
                     const Eigen::VectorXd& goal) {
  // Canonical column order: self first, then neighbors ascending by id.
  std::vector<std::pair<int, Var>> others = others_in;
  std::sort(others.begin(), others.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  RobotEval out;
  out.id = id;
  out.neighbors.push_back(id);
  for (const auto& [j, v] : others) {
    (void)v;
    out.neighbors.push_back(j);
  }
  std::sort(out.neighbors.begin(), out.neighbors.end());

  const LocalObservation obs = build_inputs(tape, cfg, self, others, goal);
  out.z_r = sa_forward(cfg.r_head, vars.r, obs.rj);
  out.z_j = sa_forward(cfg.j_head, vars.j, obs.rj);

  if (cfg.wiring == EnergyWiring::kMerged) {
    const Var zh = sa_forward(cfg.h_head, vars.h, obs.hin);
    const int rows = cfg.h_input_rows();
    const Var kinetic = ad::reduce_sum(
        ad::mul(ad::slice_rows(zh, 0, rows), ad::square(obs.hin)));
    const Var potential =
        ad::reduce_sum(ad::slice_rows(zh, rows, zh.rows() - rows));
    out.energy = ad::add(kinetic, potential);
  } else {
    const Var zm = sa_forward(cfg.m_head, vars.m, obs.hin);
    const Var zu = sa_forward(cfg.u_head, vars.u, obs.hin);
    out.energy =
        ad::add(ad::reduce_sum(ad::mul(zm, ad::square(obs.hin))),
                ad::reduce_sum(zu));
  }

  // dH^{(i)}/dx_j for every state this robot observed, self included.
  std::vector<Var> wrt = {self};
  for (const auto& [j, v] : others) {
    (void)j;
    wrt.push_back(v);
  }
  std::vector<Var> grads = tape.gradient(out.energy, wrt);
  out.denergy[id] = grads[0];
  for (std::size_t t = 0; t < others.size(); ++t) {
    out.denergy[others[t].first] = grads[t + 1];
  }
  return out;
}

namespace {

Var column_mean(const Var& col) {
  return ad::scale(ad::reduce_sum(col), 1.0 / static_cast<double>(col.rows()));
}

}  // namespace

std::map<int, Var> r_blocks_for(
    Tape& tape, const PolicyConfig& cfg, int i,
    const std::vector<int>& neighbors,
    const std::map<int, std::pair<Var, Var>>& z_pairs) {
  const int nx = cfg.nx();
  std::map<int, Var> out;

  auto pair_of = [&](int j) -> const std::pair<Var, Var>& {
    auto it = z_pairs.find(j);
    if (it == z_pairs.end()) {
      throw std::invalid_argument("r_blocks: missing reciprocal block");
    }
    return it->second;
  };

  if (cfg.mode == DissipationMode::kVerbatim) {
    // off-diagonal: -(Z_ij + Z_ji); diagonal: Z_ii + sum (Z_ij + Z_ji)
    Var diag = ad::vec_inv(pair_of(i).first, nx, nx);
    for (int j : neighbors) {
      if (j == i) continue;
      const auto& [zij, zji] = pair_of(j);
      const Var sum =
          ad::add(ad::vec_inv(zij, nx, nx), ad::vec_inv(zji, nx, nx));
      out[j] = ad::neg(sum);
      diag = ad::add(diag, sum);
    }
    out[i] = diag;
    return out;
  }

  // strict PSD: scalar sigmoid gates off the diagonal, softplus diagonal
  // self-term; the assembled matrix is a Laplacian plus nonnegative diagonal.
  const Var eye = tape.constant(ad::Mat(Eigen::MatrixXd::Identity(nx, nx)));
  const Var zii = ad::vec_inv(pair_of(i).first, nx, nx);
  Var diag = ad::diag_from_vec(ad::softplus(ad::diag_part(zii)));
  for (int j : neighbors) {
    if (j == i) continue;
    const auto& [zij, zji] = pair_of(j);
    const Var gate =
        ad::sigmoid(ad::add(column_mean(zij), column_mean(zji)));
    out[j] = ad::neg(ad::scalar_mul(eye, gate));
    diag = ad::add(diag, ad::scalar_mul(eye, gate));
  }
  out[i] = diag;
  return out;
}

std::map<int, Var> j_blocks_for(
    Tape& tape, const PolicyConfig& cfg, int i,
    const std::vector<int>& neighbors,
    const std::map<int, std::pair<Var, Var>>& z_pairs) {
  const int nx = cfg.nx();
  std::map<int, Var> out;

  if (cfg.j_head_scalar()) {
    // Scalar head: off-diagonal interconnection is zero and the self block
    // scales the canonical symplectic form, which keeps skew-symmetry and
    // leaves the head with an effect (the raw antisymmetrization at i == j
    // would vanish identically).
    Eigen::MatrixXd sympl = Eigen::MatrixXd::Zero(nx, nx);
    sympl.topRightCorner(cfg.m, cfg.m) =
        Eigen::MatrixXd::Identity(cfg.m, cfg.m);
    sympl.bottomLeftCorner(cfg.m, cfg.m) =
        -Eigen::MatrixXd::Identity(cfg.m, cfg.m);
    const Var sympl_v = tape.constant(ad::Mat(sympl));
    for (int j : neighbors) {
      if (j == i) {
        auto it = z_pairs.find(i);
        if (it == z_pairs.end()) {
          throw std::invalid_argument("j_blocks: missing self block");
        }
        out[i] = ad::scalar_mul(sympl_v, it->second.first);
      } else {
        out[j] = tape.zeros(nx, nx);
      }
    }
    return out;
  }

  for (int j : neighbors) {
    auto it = z_pairs.find(j);
    if (it == z_pairs.end()) {
      throw std::invalid_argument("j_blocks: missing reciprocal block");
    }
    const auto& [zij, zji] = it->second;
    out[j] = ad::sub(ad::vec_inv(zij, nx, nx), ad::vec_inv(zji, nx, nx));
  }
  return out;
}

Var assemble_control(Tape& tape, const PolicyConfig& cfg, const BaseVars& base,
                     int i, const std::vector<int>& neighbors,
                     const std::map<int, NeighborPayload>& payload,
                     const Var& self) {
  std::map<int, std::pair<Var, Var>> zr, zj;
  for (int j : neighbors) {
    auto it = payload.find(j);
    if (it == payload.end()) {
      throw std::invalid_argument("assemble_control: missing neighbor data");
    }
    zr[j] = {it->second.z_r_ij, it->second.z_r_ji};
    zj[j] = {it->second.z_j_ij, it->second.z_j_ji};
  }
  std::map<int, Var> rb = r_blocks_for(tape, cfg, i, neighbors, zr);
  std::map<int, Var> jb = j_blocks_for(tape, cfg, i, neighbors, zj);

  Var acc;
  for (int j : neighbors) {  // ascending: keeps both execution paths bitwise
    const Var term =
        ad::matmul(ad::sub(jb.at(j), rb.at(j)), payload.at(j).denergy_total);
    acc = acc.valid() ? ad::add(acc, term) : term;
  }
  const Var open = ad::matmul(base.open_gain, self);
  return ad::matmul(base.fdag, ad::sub(acc, open));
}

EnergyGradients hamiltonian_gradients(Tape& tape, const PolicyConfig& cfg,
                                      const PolicyVars& vars, const Var& x,
                                      const CommGraph& g,
                                      const Eigen::MatrixXd& goals) {
  const int n = g.size();
  if (x.cols() != n || goals.cols() != n) {
    throw std::invalid_argument("hamiltonian_gradients: size mismatch");
  }
  EnergyGradients out;

  std::vector<Var> columns;
  columns.reserve(n);
  for (int i = 0; i < n; ++i) columns.push_back(ad::slice_cols(x, i, 1));

  for (int i = 0; i < n; ++i) {
    std::vector<int> nb = khop_neighbors(g, i, cfg.hops);
    std::vector<std::pair<int, Var>> others;
    for (int j : nb) {
      if (j != i) others.emplace_back(j, columns[j]);
    }
    out.robots.push_back(
        eval_robot(tape, cfg, vars, i, columns[i], others, goals.col(i)));
  }

  // dH_theta/dx_i = sum over j in N_i of dH^{(j)}/dx_i, ascending j.
  for (int i = 0; i < n; ++i) {
    Var total;
    for (int j : out.robots[i].neighbors) {
      const Var part = out.robots[j].denergy.at(i);
      total = total.valid() ? ad::add(total, part) : part;
    }
    out.total[i] = total;
  }
  return out;
}

ControlEval policy_control(Tape& tape, const PolicyConfig& cfg,
                           const PolicyVars& vars, const Var& x,
                           const CommGraph& g, const Eigen::MatrixXd& goals,
                           const BaseVars& base) {
  const int n = g.size();
  ControlEval out;
  out.grads = hamiltonian_gradients(tape, cfg, vars, x, g, goals);

  std::vector<Var> controls;
  controls.reserve(n);
  for (int i = 0; i < n; ++i) {
    const RobotEval& me = out.grads.robots[i];
    std::map<int, NeighborPayload> payload;
    for (int j : me.neighbors) {
      const RobotEval& other = out.grads.robots[j];
      NeighborPayload p;
      const int my_col = observation_column(me.neighbors, i, j);
      const int their_col = observation_column(other.neighbors, j, i);
      p.z_r_ij = ad::slice_cols(me.z_r, my_col, 1);
      p.z_j_ij = ad::slice_cols(me.z_j, my_col, 1);
      p.z_r_ji = ad::slice_cols(other.z_r, their_col, 1);
      p.z_j_ji = ad::slice_cols(other.z_j, their_col, 1);
      p.denergy_total = out.grads.total.at(j);
      payload[j] = p;
    }
    controls.push_back(assemble_control(tape, cfg, base, i, me.neighbors,
                                        payload, ad::slice_cols(x, i, 1)));
  }
  out.controls = ad::concat_cols(controls);
  return out;
}

}  // namespace phswarm
