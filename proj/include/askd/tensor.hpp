// SPDX-License-Identifier: Apache-2.0
//
// Dense 64-bit tensors with reverse-mode gradient accumulation.
//
// Ops compute eagerly and record a node on the thread-active Graph when any
// input requires a gradient. Reductions use a fixed left-to-right summation
// order, so identical inputs give bit-identical outputs. Only rank-1 and
// rank-2 tensors exist; broadcasting is limited to scalar-times-tensor and
// the explicit row-wise ops.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "askd/error.hpp"

namespace askd {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until backward touches this tensor

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
  bool is_scalar() const { return numel() == 1; }
  bool is_matrix() const { return shape.size() == 2; }
  int64_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  int64_t cols() const { return shape.size() == 2 ? shape[1] : shape[0]; }
  double value() const;  // scalar tensors only
  bool grad_populated() const { return !grad.empty(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
  void zero_grad() {
    if (!grad.empty()) grad.assign(grad.size(), 0.0);
  }

  static TensorPtr zeros(std::vector<int64_t> shape, bool requires_grad = false);
  static TensorPtr full(std::vector<int64_t> shape, double v, bool requires_grad = false);
  // Validates size and finiteness.
  static TensorPtr from_data(std::vector<int64_t> shape, std::vector<double> data,
                             bool requires_grad = false);
  static TensorPtr scalar(double v, bool requires_grad = false);
  // Value copy that never carries gradient history.
  static TensorPtr detached(const Tensor& t);
};

std::string shape_str(const Tensor& t);

// Primitive kinds understood by the recorder. The first thirteen are the
// contract set; the rest are fused row-wise kernels the model uses.
enum class Op : uint8_t {
  kMatmul,
  kAdd,
  kMul,
  kScale,
  kExp,
  kLog,
  kMaxReduce,
  kSumReduce,
  kMaskFill,
  kSigmoid,
  kConcat,
  kSlice,
  kTranspose,
  // fused / convenience primitives
  kDiv,
  kAddScalar,
  kSoftmaxRows,
  kLayerNormRows,
  kRowAffine,
  kGatherRows,
};

const char* op_name(Op op);

// One recorded primitive application. Inputs precede the node that consumes
// them, so reverse iteration over the node list is a valid backward order.
struct Node {
  Node(Op op_, std::vector<TensorPtr> inputs_, TensorPtr out_)
      : op(op_), inputs(std::move(inputs_)), out(std::move(out_)) {}

  Op op;
  std::vector<TensorPtr> inputs;
  TensorPtr out;
  // saved values needed for backward
  double scalar = 0.0;       // kScale factor, kAddScalar addend, kMaskFill fill
  int axis = -1;             // kMaxReduce / kSumReduce / kConcat
  int64_t r0 = 0, c0 = 0;    // kSlice origin
  std::vector<int32_t> ints;     // kMaxReduce argmax, kGatherRows row ids
  std::vector<double> doubles;   // kLayerNormRows inverse std per row
};

class Graph {
 public:
  // Populates grad buffers of every requires_grad tensor the root depends
  // on with d(root)/d(tensor). Root must be scalar. Gradients accumulate,
  // so callers zero param grads between steps (sgd_step does).
  void backward(const TensorPtr& root);

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }
  void record(Node n) { nodes_.push_back(std::move(n)); }
  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  std::vector<Node> nodes_;
};

// RAII scope making a Graph the active recorder for this thread.
class GraphScope {
 public:
  explicit GraphScope(Graph& g);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;
  static Graph* active();

 private:
  Graph* prev_;
};

namespace ops {

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr div(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, double s);
TensorPtr add_scalar(const TensorPtr& a, double c);
TensorPtr exp(const TensorPtr& a);
TensorPtr log(const TensorPtr& a);
TensorPtr sigmoid(const TensorPtr& a);
// axis 0: reduce over rows -> [1, n]; axis 1: reduce over cols -> [m, 1];
// axis -1: reduce everything -> scalar [1].
TensorPtr max_reduce(const TensorPtr& a, int axis);
TensorPtr sum_reduce(const TensorPtr& a, int axis);
// mask entries must be 0 or 1; positions where mask == 0 are replaced by fill.
TensorPtr mask_fill(const TensorPtr& a, const TensorPtr& mask, double fill);
TensorPtr concat(const TensorPtr& a, const TensorPtr& b, int axis);
TensorPtr slice(const TensorPtr& a, int64_t r0, int64_t r1, int64_t c0, int64_t c1);
TensorPtr transpose(const TensorPtr& a);
TensorPtr softmax_rows(const TensorPtr& a);
TensorPtr layer_norm_rows(const TensorPtr& a, double eps = 1e-6);
// y[i][j] = x[i][j] * gain[j] + bias[j]
TensorPtr row_affine(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias);
TensorPtr gather_rows(const TensorPtr& table, const std::vector<int32_t>& ids);

}  // namespace ops

// Generic dispatcher over the primitive set; validates input finiteness up
// front. Aux carries the per-op extras.
struct PrimitiveArgs {
  double scalar = 0.0;  // scale factor / addend / mask fill
  int axis = -1;
  int64_t r0 = 0, r1 = 0, c0 = 0, c1 = 0;
  double eps = 1e-6;
  std::vector<int32_t> ids;
};
TensorPtr primitive_forward(Op op, const std::vector<TensorPtr>& inputs,
                            const PrimitiveArgs& args = {});

// p <- p - lr * grad(p), then grads are zeroed. Rejects missing grads,
// NaN grads and negative lr.
void sgd_step(std::span<const TensorPtr> params, double lr);

// Max over coordinates of |analytic - central difference| / (|cd| + 1e-8).
// f must be a deterministic tensor-to-scalar function; it is re-evaluated
// 2*numel(x) + 2 times.
double finite_diff_check(const std::function<TensorPtr(const TensorPtr&)>& f,
                         const TensorPtr& x, double step);

}  // namespace askd
