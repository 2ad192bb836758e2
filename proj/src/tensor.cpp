#include "phswarm/tensor.hpp"

#include <cmath>
#include <cstring>
#include <optional>
#include <stdexcept>

#include "phswarm/util.hpp"

namespace phswarm {

std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

}  // namespace phswarm

namespace phswarm::ad {

namespace {

[[noreturn]] void shape_error(const char* what) {
  throw std::invalid_argument(std::string("tensor shape mismatch: ") + what);
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// x^q with the domain conventions used across the project: negative bases are
// only valid for integer q, and the base 0 maps to 0 for q > 0 (and its
// derivative is taken as 0, the same subgradient convention as abs at 0).
double pow_scalar(double x, double q) {
  if (x < 0.0 && q != std::round(q)) {
    throw std::domain_error("pow: non-integer exponent on negative input");
  }
  if (x == 0.0) {
    if (q > 0.0) return 0.0;
    if (q == 0.0) return 1.0;
    return 0.0;
  }
  return std::pow(x, q);
}

}  // namespace

Var Tape::emit(Op op, std::vector<int> in, double c, int a0, int a1) {
  Node n;
  n.op = op;
  n.in = std::move(in);
  n.c = c;
  n.a0 = a0;
  n.a1 = a1;
  n.val = eval(n);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::leaf(Mat v) {
  Node n;
  n.op = Op::kLeaf;
  n.val = std::move(v);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Mat v) {
  Node n;
  n.op = Op::kConst;
  n.val = std::move(v);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::scalar(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Var Tape::zeros(int rows, int cols) { return constant(Mat::Zero(rows, cols)); }

Mat Tape::eval(const Node& n) const {
  auto V = [&](int k) -> const Mat& { return nodes_[n.in[k]].val; };
  switch (n.op) {
    case Op::kLeaf:
    case Op::kConst:
      return n.val;
    case Op::kAdd:
      return V(0) + V(1);
    case Op::kSub:
      return V(0) - V(1);
    case Op::kMul:
      return V(0).cwiseProduct(V(1));
    case Op::kNeg:
      return -V(0);
    case Op::kScale:
      return V(0) * n.c;
    case Op::kScalarMul:
      return V(0) * V(1)(0, 0);
    case Op::kMatMul:
      return V(0) * V(1);
    case Op::kTranspose:
      return V(0).transpose();
    case Op::kReshape: {
      Mat out(n.a0, n.a1);
      std::memcpy(out.data(), V(0).data(), sizeof(double) * V(0).size());
      return out;
    }
    case Op::kConcatCols: {
      Eigen::Index rows = V(0).rows(), cols = 0;
      for (std::size_t k = 0; k < n.in.size(); ++k) cols += V(k).cols();
      Mat out(rows, cols);
      Eigen::Index at = 0;
      for (std::size_t k = 0; k < n.in.size(); ++k) {
        out.middleCols(at, V(k).cols()) = V(k);
        at += V(k).cols();
      }
      return out;
    }
    case Op::kSliceCols:
      return V(0).middleCols(n.a0, n.a1);
    case Op::kRowSum:
      return V(0).rowwise().sum();
    case Op::kBroadcastCols:
      return V(0) * Mat::Ones(1, n.a0);
    case Op::kReduceSum: {
      Mat out(1, 1);
      out(0, 0) = V(0).sum();
      return out;
    }
    case Op::kBroadcastScalar:
      return Mat::Constant(n.a0, n.a1, V(0)(0, 0));
    case Op::kSigmoid:
      return V(0).unaryExpr([](double x) { return sigmoid_scalar(x); });
    case Op::kSwish:
      return V(0).unaryExpr([](double x) { return x * sigmoid_scalar(x); });
    case Op::kSoftplus:
      return V(0).unaryExpr([](double x) { return softplus_scalar(x); });
    case Op::kSquare:
      return V(0).cwiseProduct(V(0));
    case Op::kAbs:
      return V(0).cwiseAbs();
    case Op::kSign:
      return V(0).unaryExpr(
          [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
    case Op::kPow: {
      const double q = n.c;
      return V(0).unaryExpr([q](double x) { return pow_scalar(x, q); });
    }
    case Op::kRowSoftmax: {
      Mat out = V(0);
      for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const double m = out.row(r).maxCoeff();
        for (Eigen::Index c = 0; c < out.cols(); ++c) {
          out(r, c) = std::exp(out(r, c) - m);
        }
        out.row(r) /= out.row(r).sum();
      }
      return out;
    }
    case Op::kDiagFromVec: {
      Mat out = Mat::Zero(V(0).rows(), V(0).rows());
      out.diagonal() = V(0).col(0);
      return out;
    }
    case Op::kDiagPart:
      return V(0).diagonal();
  }
  throw std::logic_error("unreachable op");
}

bool Tape::replay_matches() const {
  for (const Node& n : nodes_) {
    if (n.op == Op::kLeaf || n.op == Op::kConst) continue;
    Mat again = eval(n);
    if (again.rows() != n.val.rows() || again.cols() != n.val.cols()) {
      return false;
    }
    if (std::memcmp(again.data(), n.val.data(),
                    sizeof(double) * n.val.size()) != 0) {
      return false;
    }
  }
  return true;
}

bool Tape::all_finite() const {
  for (const Node& n : nodes_) {
    if (!n.val.allFinite()) return false;
  }
  return true;
}

// ---- gradient ----

namespace {

void check_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) {
    throw std::invalid_argument("operands live on different tapes");
  }
}

Var accumulate(std::optional<Var>& slot, const Var& g) {
  if (slot) {
    slot = add(*slot, g);
  } else {
    slot = g;
  }
  return *slot;
}

}  // namespace

std::vector<Var> Tape::gradient(const Var& output, std::span<const Var> wrt) {
  if (!output.valid() || output.tape() != this) {
    throw std::invalid_argument("gradient: output is not on this tape");
  }
  if (!output.is_scalar()) {
    throw std::invalid_argument("gradient: output must be a scalar");
  }
  for (const Var& w : wrt) {
    if (!w.valid() || w.tape() != this) {
      throw std::invalid_argument("gradient: wrt tensor is not on this tape");
    }
  }

  const int out_id = output.id();

  // Ancestor set of the output. Node inputs always precede the node, so a
  // descending-id sweep visits consumers before producers.
  std::vector<char> reach(out_id + 1, 0);
  reach[out_id] = 1;
  {
    std::vector<int> stack = {out_id};
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      for (int in : nodes_[id].in) {
        if (!reach[in]) {
          reach[in] = 1;
          stack.push_back(in);
        }
      }
    }
  }

  // Adjoints are not propagated into plain constants, except those the
  // caller explicitly asked to differentiate against.
  std::vector<char> wanted(out_id + 1, 0);
  int min_wrt = out_id;
  for (const Var& w : wrt) {
    if (w.id() <= out_id) {
      wanted[w.id()] = 1;
      min_wrt = std::min(min_wrt, w.id());
    }
  }

  // Only nodes lying on a path from some wrt entry to the output carry
  // useful adjoints; restricting the sweep to them keeps the cost of a
  // local gradient independent of everything recorded before its inputs.
  std::vector<char> active(out_id + 1, 0);
  for (int id = min_wrt; id <= out_id; ++id) {
    if (wanted[id]) {
      active[id] = 1;
      continue;
    }
    for (int in : nodes_[id].in) {
      if (active[in]) {
        active[id] = 1;
        break;
      }
    }
  }

  std::vector<std::optional<Var>> adj(out_id + 1);
  if (active[out_id]) adj[out_id] = constant(Mat::Ones(1, 1));

  for (int id = out_id; id >= min_wrt; --id) {
    if (!reach[id] || !active[id] || !adj[id]) continue;
    const Var g = *adj[id];
    // Copy input ids: emitting backward nodes may reallocate nodes_.
    const Op op = nodes_[id].op;
    const std::vector<int> in = nodes_[id].in;
    const double c = nodes_[id].c;
    const Var y(this, id);

    auto push = [&](int k, auto&& make_contrib) {
      const int in_id = in[k];
      if (!active[in_id]) return;
      const Op in_op = nodes_[in_id].op;
      if (in_op == Op::kConst && !wanted[in_id]) return;
      accumulate(adj[in_id], make_contrib());
    };

    switch (op) {
      case Op::kLeaf:
      case Op::kConst:
        break;
      case Op::kAdd:
        push(0, [&] { return g; });
        push(1, [&] { return g; });
        break;
      case Op::kSub:
        push(0, [&] { return g; });
        push(1, [&] { return neg(g); });
        break;
      case Op::kMul:
        push(0, [&] { return mul(g, Var(this, in[1])); });
        push(1, [&] { return mul(g, Var(this, in[0])); });
        break;
      case Op::kNeg:
        push(0, [&] { return neg(g); });
        break;
      case Op::kScale:
        push(0, [&] { return scale(g, c); });
        break;
      case Op::kScalarMul:
        push(0, [&] { return scalar_mul(g, Var(this, in[1])); });
        push(1, [&] { return reduce_sum(mul(g, Var(this, in[0]))); });
        break;
      case Op::kMatMul:
        push(0, [&] { return matmul(g, transpose(Var(this, in[1]))); });
        push(1, [&] { return matmul(transpose(Var(this, in[0])), g); });
        break;
      case Op::kTranspose:
        push(0, [&] { return transpose(g); });
        break;
      case Op::kReshape: {
        const Mat& src = nodes_[in[0]].val;
        push(0, [&] { return reshape(g, static_cast<int>(src.rows()),
                        static_cast<int>(src.cols())); });
        break;
      }
      case Op::kConcatCols: {
        int at = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          const int w = static_cast<int>(nodes_[in[k]].val.cols());
          push(static_cast<int>(k), [&] { return slice_cols(g, at, w); });
          at += w;
        }
        break;
      }
      case Op::kSliceCols: {
        const Mat& src = nodes_[in[0]].val;
        const int rows = static_cast<int>(src.rows());
        const int total = static_cast<int>(src.cols());
        const int start = nodes_[id].a0;
        const int count = nodes_[id].a1;
        std::vector<Var> parts;
        if (start > 0) parts.push_back(zeros(rows, start));
        parts.push_back(g);
        if (start + count < total) {
          parts.push_back(zeros(rows, total - start - count));
        }
        push(0, [&] { return parts.size() == 1 ? g : concat_cols(parts); });
        break;
      }
      case Op::kRowSum:
        push(0, [&] { return broadcast_cols(g, static_cast<int>(nodes_[in[0]].val.cols())); });
        break;
      case Op::kBroadcastCols:
        push(0, [&] { return row_sum(g); });
        break;
      case Op::kReduceSum: {
        const Mat& src = nodes_[in[0]].val;
        push(0, [&] { return broadcast_scalar(g, static_cast<int>(src.rows()),
                                 static_cast<int>(src.cols())); });
        break;
      }
      case Op::kBroadcastScalar:
        push(0, [&] { return reduce_sum(g); });
        break;
      case Op::kSigmoid:
        // y' = y - y^2
        push(0, [&] { return mul(g, sub(y, square(y))); });
        break;
      case Op::kSwish: {
        // d/dx x*s(x) = s + y*(1 - s), with y = x*s(x)
        const Var s = sigmoid(Var(this, in[0]));
        push(0, [&] { return mul(g, add(s, sub(y, mul(y, s)))); });
        break;
      }
      case Op::kSoftplus:
        push(0, [&] { return mul(g, sigmoid(Var(this, in[0]))); });
        break;
      case Op::kSquare:
        push(0, [&] { return mul(g, scale(Var(this, in[0]), 2.0)); });
        break;
      case Op::kAbs:
        push(0, [&] { return mul(g, sign(Var(this, in[0]))); });
        break;
      case Op::kSign:
        break;  // derivative 0 almost everywhere
      case Op::kPow:
        push(0, [&] { return mul(g, scale(pow(Var(this, in[0]), c - 1.0), c)); });
        break;
      case Op::kRowSoftmax: {
        // dx = y .* (g - rowsum(g .* y) broadcast)
        const int cols = static_cast<int>(nodes_[id].val.cols());
        const Var gy = mul(g, y);
        push(0, [&] { return mul(y, sub(g, broadcast_cols(row_sum(gy), cols))); });
        break;
      }
      case Op::kDiagFromVec:
        push(0, [&] { return diag_part(g); });
        break;
      case Op::kDiagPart:
        push(0, [&] { return diag_from_vec(g); });
        break;
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id() <= out_id && adj[w.id()]) {
      out.push_back(*adj[w.id()]);
    } else {
      out.push_back(zeros(w.rows(), w.cols()));
    }
  }
  return out;
}

Var Tape::gradient(const Var& output, const Var& wrt) {
  const Var arr[1] = {wrt};
  return gradient(output, std::span<const Var>(arr, 1))[0];
}

// ---- free functions ----

namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw std::invalid_argument("operation on invalid tensor");
  return *a.tape();
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("add");
  return tape_of(a).emit(Op::kAdd, {a.id(), b.id()});
}

Var sub(const Var& a, const Var& b) {
  check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("sub");
  return tape_of(a).emit(Op::kSub, {a.id(), b.id()});
}

Var mul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("mul");
  return tape_of(a).emit(Op::kMul, {a.id(), b.id()});
}

Var neg(const Var& a) { return tape_of(a).emit(Op::kNeg, {a.id()}); }

Var scale(const Var& a, double c) {
  return tape_of(a).emit(Op::kScale, {a.id()}, c);
}

Var scalar_mul(const Var& a, const Var& s) {
  check_same_tape(a, s);
  if (!s.is_scalar()) shape_error("scalar_mul: scalar operand must be 1x1");
  return tape_of(a).emit(Op::kScalarMul, {a.id(), s.id()});
}

Var matmul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  if (a.cols() != b.rows()) shape_error("matmul inner dimensions");
  return tape_of(a).emit(Op::kMatMul, {a.id(), b.id()});
}

Var transpose(const Var& a) {
  return tape_of(a).emit(Op::kTranspose, {a.id()});
}

Var reshape(const Var& a, int rows, int cols) {
  if (rows * cols != a.rows() * a.cols()) shape_error("reshape size");
  return tape_of(a).emit(Op::kReshape, {a.id()}, 0.0, rows, cols);
}

Var concat_cols(std::span<const Var> xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: empty");
  std::vector<int> ids;
  ids.reserve(xs.size());
  for (const Var& x : xs) {
    check_same_tape(xs[0], x);
    if (x.rows() != xs[0].rows()) shape_error("concat_cols rows");
    ids.push_back(x.id());
  }
  return tape_of(xs[0]).emit(Op::kConcatCols, std::move(ids));
}

Var concat_cols(std::initializer_list<Var> xs) {
  std::vector<Var> v(xs);
  return concat_cols(std::span<const Var>(v));
}

Var slice_cols(const Var& a, int start, int count) {
  if (start < 0 || count < 1 || start + count > a.cols()) {
    shape_error("slice_cols range");
  }
  return tape_of(a).emit(Op::kSliceCols, {a.id()}, 0.0, start, count);
}

Var row_sum(const Var& a) { return tape_of(a).emit(Op::kRowSum, {a.id()}); }

Var broadcast_cols(const Var& a, int cols) {
  if (a.cols() != 1) shape_error("broadcast_cols expects m x 1");
  return tape_of(a).emit(Op::kBroadcastCols, {a.id()}, 0.0, cols);
}

Var reduce_sum(const Var& a) {
  return tape_of(a).emit(Op::kReduceSum, {a.id()});
}

Var broadcast_scalar(const Var& s, int rows, int cols) {
  if (!s.is_scalar()) shape_error("broadcast_scalar expects 1x1");
  return tape_of(s).emit(Op::kBroadcastScalar, {s.id()}, 0.0, rows, cols);
}

Var sigmoid(const Var& a) { return tape_of(a).emit(Op::kSigmoid, {a.id()}); }
Var swish(const Var& a) { return tape_of(a).emit(Op::kSwish, {a.id()}); }
Var softplus(const Var& a) { return tape_of(a).emit(Op::kSoftplus, {a.id()}); }
Var square(const Var& a) { return tape_of(a).emit(Op::kSquare, {a.id()}); }
Var abs(const Var& a) { return tape_of(a).emit(Op::kAbs, {a.id()}); }
Var sign(const Var& a) { return tape_of(a).emit(Op::kSign, {a.id()}); }

Var pow(const Var& a, double q) {
  return tape_of(a).emit(Op::kPow, {a.id()}, q);
}

Var row_softmax(const Var& a) {
  return tape_of(a).emit(Op::kRowSoftmax, {a.id()});
}

Var diag_from_vec(const Var& v) {
  if (v.cols() != 1) shape_error("diag_from_vec expects n x 1");
  return tape_of(v).emit(Op::kDiagFromVec, {v.id()});
}

Var diag_part(const Var& a) {
  if (a.rows() != a.cols()) shape_error("diag_part expects square");
  return tape_of(a).emit(Op::kDiagPart, {a.id()});
}

Var vec(const Var& a) { return reshape(a, a.rows() * a.cols(), 1); }

Var vec_inv(const Var& a, int rows, int cols) {
  if (a.cols() != 1) shape_error("vec_inv expects a column vector");
  return reshape(a, rows, cols);
}

Var l2_norm(const Var& a) { return pow(reduce_sum(square(a)), 0.5); }

Var slice_rows(const Var& a, int start, int count) {
  return transpose(slice_cols(transpose(a), start, count));
}

Var concat_rows(std::span<const Var> xs) {
  std::vector<Var> t;
  t.reserve(xs.size());
  for (const Var& x : xs) t.push_back(transpose(x));
  return transpose(concat_cols(std::span<const Var>(t)));
}

Var concat_rows(std::initializer_list<Var> xs) {
  std::vector<Var> v(xs);
  return concat_rows(std::span<const Var>(v));
}

Var dot(const Var& a, const Var& b) { return reduce_sum(mul(a, b)); }

}  // namespace phswarm::ad
