#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace phswarm::ad {

// All tensors are dense 2-D double matrices in row-major storage; column
// vectors are n x 1 and scalars 1 x 1. Row-major keeps vec / vec_inv a plain
// reinterpretation of the same buffer.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Op : std::uint8_t {
  kLeaf,         // differentiable input (parameter or state)
  kConst,        // non-differentiable value
  kAdd,
  kSub,
  kMul,          // elementwise product, shapes must match
  kNeg,
  kScale,        // multiply by a compile-time double
  kScalarMul,    // in[0] (matrix) times in[1] (1x1 node)
  kMatMul,
  kTranspose,
  kReshape,      // row-major relayout, size preserved
  kConcatCols,
  kSliceCols,
  kRowSum,       // m x n -> m x 1
  kBroadcastCols,  // m x 1 -> m x n
  kReduceSum,    // -> 1 x 1
  kBroadcastScalar,  // 1 x 1 -> r x c
  kSigmoid,
  kSwish,
  kSoftplus,
  kSquare,
  kAbs,
  kSign,
  kPow,          // elementwise x^q, q stored in attr c
  kRowSoftmax,   // each row normalized to sum 1, max-subtracted
  kDiagFromVec,  // n x 1 -> n x n
  kDiagPart,     // n x n -> n x 1
};

class Tape;

// Lightweight handle to a node on a tape.
class Var {
 public:
  Var() = default;

  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

  const Mat& value() const;
  int rows() const { return static_cast<int>(value().rows()); }
  int cols() const { return static_cast<int>(value().cols()); }
  bool is_scalar() const { return rows() == 1 && cols() == 1; }
  double scalar() const { return value()(0, 0); }

 private:
  friend class Tape;
  Var(Tape* t, int id) : tape_(t), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Define-by-run tape. Nodes are appended in topological order (inputs always
// precede their consumers) and cache their forward values. gradient() emits
// the backward pass as ordinary tape nodes, so gradients are themselves
// differentiable and reverse-over-reverse gives exact second derivatives.
//
// A tape is single-owner: it must not be shared across threads. Values read
// out of a tape (copies of Mat) are free to share.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Mat v);
  Var constant(Mat v);
  Var scalar(double v);
  Var zeros(int rows, int cols);

  // d(output)/d(wrt) for a scalar output. Each result is a node on this tape
  // with the shape of the corresponding wrt entry; wrt entries unreachable
  // from output yield zero tensors.
  std::vector<Var> gradient(const Var& output, std::span<const Var> wrt);
  Var gradient(const Var& output, const Var& wrt);

  const Mat& value(int id) const { return nodes_[id].val; }
  std::size_t size() const { return nodes_.size(); }

  // Re-evaluates every non-leaf node from its recorded inputs and checks the
  // result is bitwise identical to the cached value.
  bool replay_matches() const;

  bool all_finite() const;

  struct Node {
    Op op;
    std::vector<int> in;
    double c = 0.0;   // literal for kScale / kPow
    int a0 = 0;       // shape or slice attribute
    int a1 = 0;
    Mat val;
  };

  const Node& node(int id) const { return nodes_[id]; }

  Var emit(Op op, std::vector<int> in, double c = 0.0, int a0 = 0, int a1 = 0);

 private:
  Mat eval(const Node& n) const;

  std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return tape_->value(id_); }

// ---- expression-building free functions ----

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var scalar_mul(const Var& a, const Var& s);  // s is 1x1
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, int rows, int cols);
Var concat_cols(std::span<const Var> xs);
Var concat_cols(std::initializer_list<Var> xs);
Var slice_cols(const Var& a, int start, int count);
Var row_sum(const Var& a);
Var broadcast_cols(const Var& a, int cols);
Var reduce_sum(const Var& a);
Var broadcast_scalar(const Var& s, int rows, int cols);
Var sigmoid(const Var& a);
Var swish(const Var& a);
Var softplus(const Var& a);
Var square(const Var& a);
Var abs(const Var& a);
Var sign(const Var& a);
Var pow(const Var& a, double q);
Var row_softmax(const Var& a);
Var diag_from_vec(const Var& v);
Var diag_part(const Var& a);

// composites
Var vec(const Var& a);                       // row-major flatten to (size, 1)
Var vec_inv(const Var& a, int rows, int cols);
Var l2_norm(const Var& a);
Var slice_rows(const Var& a, int start, int count);
Var concat_rows(std::span<const Var> xs);
Var concat_rows(std::initializer_list<Var> xs);
Var dot(const Var& a, const Var& b);         // reduce_sum(mul(a, b))

}  // namespace phswarm::ad
