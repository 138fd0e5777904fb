// SPDX-License-Identifier: Apache-2.0

#include "askd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace askd {

namespace {

thread_local Graph* g_active_graph = nullptr;

bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void require_finite(const Tensor& t, const char* where) {
  if (!all_finite(t.data)) {
    throw NonFiniteError(std::string(where) + ": non-finite value in tensor " );
  }
}

void require_matrix(const TensorPtr& t, const char* where) {
  if (!t->is_matrix()) {
    throw ShapeError(std::string(where) + ": expected rank-2 tensor, got " + shape_str(*t));
  }
}

void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* where) {
  if (a->shape != b->shape) {
    throw ShapeError(std::string(where) + ": shape mismatch " + shape_str(*a) + " vs " +
                     shape_str(*b));
  }
}

bool should_record(std::initializer_list<TensorPtr> inputs) {
  if (g_active_graph == nullptr) return false;
  for (const auto& t : inputs) {
    if (t->requires_grad) return true;
  }
  return false;
}

TensorPtr make_out(std::vector<int64_t> shape) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data.assign(static_cast<size_t>(t->numel()), 0.0);
  return t;
}

void record(Node n) {
  n.out->requires_grad = true;
  g_active_graph->record(std::move(n));
}

// Ops that can leave the finite regime even on finite inputs get their
// outputs verified; pure data movement cannot and is skipped.
void check_out(const TensorPtr& t, Op op) {
  switch (op) {
    case Op::kSlice:
    case Op::kConcat:
    case Op::kTranspose:
    case Op::kGatherRows:
    case Op::kMaskFill:
      return;
    default:
      if (!all_finite(t->data)) {
        throw NonFiniteError(std::string("primitive ") + op_name(op) +
                             " produced a non-finite value");
      }
  }
}

}  // namespace

double Tensor::value() const {
  if (!is_scalar()) {
    throw ShapeError("value(): tensor is not scalar, shape " + shape_str(*this));
  }
  return data[0];
}

TensorPtr Tensor::zeros(std::vector<int64_t> shape, bool requires_grad) {
  auto t = make_out(std::move(shape));
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr Tensor::full(std::vector<int64_t> shape, double v, bool requires_grad) {
  auto t = make_out(std::move(shape));
  std::fill(t->data.begin(), t->data.end(), v);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr Tensor::from_data(std::vector<int64_t> shape, std::vector<double> data,
                            bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  if (static_cast<int64_t>(data.size()) != t->numel()) {
    throw ShapeError("from_data: " + std::to_string(data.size()) +
                     " values for shape " + shape_str(*t));
  }
  t->data = std::move(data);
  if (!all_finite(t->data)) throw NonFiniteError("from_data: non-finite input value");
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr Tensor::scalar(double v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

TensorPtr Tensor::detached(const Tensor& t) {
  auto out = std::make_shared<Tensor>();
  out->shape = t.shape;
  out->data = t.data;
  out->requires_grad = false;
  return out;
}

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < t.shape.size(); ++i) {
    if (i) os << "x";
    os << t.shape[i];
  }
  os << "]";
  return os.str();
}

const char* op_name(Op op) {
  switch (op) {
    case Op::kMatmul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kMaxReduce: return "max-reduce";
    case Op::kSumReduce: return "sum-reduce";
    case Op::kMaskFill: return "mask-fill";
    case Op::kSigmoid: return "sigmoid";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kTranspose: return "transpose";
    case Op::kDiv: return "div";
    case Op::kAddScalar: return "add-scalar";
    case Op::kSoftmaxRows: return "softmax-rows";
    case Op::kLayerNormRows: return "layer-norm-rows";
    case Op::kRowAffine: return "row-affine";
    case Op::kGatherRows: return "gather-rows";
  }
  return "?";
}

GraphScope::GraphScope(Graph& g) : prev_(g_active_graph) { g_active_graph = &g; }
GraphScope::~GraphScope() { g_active_graph = prev_; }
Graph* GraphScope::active() { return g_active_graph; }

// ---------------------------------------------------------------------------
// forward kernels
// ---------------------------------------------------------------------------

namespace ops {

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a->shape[1] != b->shape[0]) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(*a) + " x " +
                     shape_str(*b));
  }
  const int64_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
  auto out = make_out({m, n});
  const double* pa = a->data.data();
  const double* pb = b->data.data();
  double* pc = out->data.data();
  for (int64_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    const double* arow = pa + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = pb + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  check_out(out, Op::kMatmul);
  if (should_record({a, b})) record({Op::kMatmul, {a, b}, out});
  return out;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "add");
  auto out = make_out(a->shape);
  for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
  check_out(out, Op::kAdd);
  if (should_record({a, b})) record({Op::kAdd, {a, b}, out});
  return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "mul");
  auto out = make_out(a->shape);
  for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
  check_out(out, Op::kMul);
  if (should_record({a, b})) record({Op::kMul, {a, b}, out});
  return out;
}

TensorPtr div(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "div");
  auto out = make_out(a->shape);
  for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] / b->data[i];
  check_out(out, Op::kDiv);
  if (should_record({a, b})) record({Op::kDiv, {a, b}, out});
  return out;
}

TensorPtr scale(const TensorPtr& a, double s) {
  if (!std::isfinite(s)) throw NonFiniteError("scale: non-finite factor");
  auto out = make_out(a->shape);
  for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * s;
  check_out(out, Op::kScale);
  if (should_record({a})) {
    Node n{Op::kScale, {a}, out};
    n.scalar = s;
    record(std::move(n));
  }
  return out;
}

TensorPtr add_scalar(const TensorPtr& a, double c) {
  if (!std::isfinite(c)) throw NonFiniteError("add_scalar: non-finite addend");
  auto out = make_out(a->shape);
  for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + c;
  check_out(out, Op::kAddScalar);
  if (should_record({a})) record({Op::kAddScalar, {a}, out});
  return out;
}

TensorPtr exp(const TensorPtr& a) {
  auto out = make_out(a->shape);
  for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = std::exp(a->data[i]);
  check_out(out, Op::kExp);
  if (should_record({a})) record({Op::kExp, {a}, out});
  return out;
}

TensorPtr log(const TensorPtr& a) {
  auto out = make_out(a->shape);
  for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = std::log(a->data[i]);
  check_out(out, Op::kLog);
  if (should_record({a})) record({Op::kLog, {a}, out});
  return out;
}

TensorPtr sigmoid(const TensorPtr& a) {
  auto out = make_out(a->shape);
  for (size_t i = 0; i < out->data.size(); ++i) {
    const double x = a->data[i];
    out->data[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                          : std::exp(x) / (1.0 + std::exp(x));
  }
  check_out(out, Op::kSigmoid);
  if (should_record({a})) record({Op::kSigmoid, {a}, out});
  return out;
}

namespace {

void check_reduce_axis(int axis, const char* where) {
  if (axis != 0 && axis != 1 && axis != -1) {
    throw ValueError(std::string(where) + ": axis must be 0, 1 or -1");
  }
}

}  // namespace

TensorPtr max_reduce(const TensorPtr& a, int axis) {
  require_matrix(a, "max_reduce");
  check_reduce_axis(axis, "max_reduce");
  const int64_t m = a->shape[0], n = a->shape[1];
  TensorPtr out;
  std::vector<int32_t> arg;
  if (axis == 1) {
    out = make_out({m, 1});
    arg.resize(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) {
      const double* row = a->data.data() + i * n;
      int64_t best = 0;
      for (int64_t j = 1; j < n; ++j) {
        if (row[j] > row[best]) best = j;
      }
      out->data[static_cast<size_t>(i)] = row[best];
      arg[static_cast<size_t>(i)] = static_cast<int32_t>(best);
    }
  } else if (axis == 0) {
    out = make_out({1, n});
    arg.resize(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) {
      int64_t best = 0;
      for (int64_t i = 1; i < m; ++i) {
        if (a->data[static_cast<size_t>(i * n + j)] >
            a->data[static_cast<size_t>(best * n + j)]) {
          best = i;
        }
      }
      out->data[static_cast<size_t>(j)] = a->data[static_cast<size_t>(best * n + j)];
      arg[static_cast<size_t>(j)] = static_cast<int32_t>(best);
    }
  } else {
    out = make_out({1});
    size_t best = 0;
    for (size_t i = 1; i < a->data.size(); ++i) {
      if (a->data[i] > a->data[best]) best = i;
    }
    out->data[0] = a->data[best];
    arg.push_back(static_cast<int32_t>(best));
  }
  check_out(out, Op::kMaxReduce);
  if (should_record({a})) {
    Node nd{Op::kMaxReduce, {a}, out};
    nd.axis = axis;
    nd.ints = std::move(arg);
    record(std::move(nd));
  }
  return out;
}

TensorPtr sum_reduce(const TensorPtr& a, int axis) {
  require_matrix(a, "sum_reduce");
  check_reduce_axis(axis, "sum_reduce");
  const int64_t m = a->shape[0], n = a->shape[1];
  TensorPtr out;
  if (axis == 1) {
    out = make_out({m, 1});
    for (int64_t i = 0; i < m; ++i) {
      double s = 0.0;
      const double* row = a->data.data() + i * n;
      for (int64_t j = 0; j < n; ++j) s += row[j];
      out->data[static_cast<size_t>(i)] = s;
    }
  } else if (axis == 0) {
    out = make_out({1, n});
    for (int64_t i = 0; i < m; ++i) {
      const double* row = a->data.data() + i * n;
      for (int64_t j = 0; j < n; ++j) out->data[static_cast<size_t>(j)] += row[j];
    }
  } else {
    out = make_out({1});
    double s = 0.0;
    for (double v : a->data) s += v;
    out->data[0] = s;
  }
  check_out(out, Op::kSumReduce);
  if (should_record({a})) {
    Node nd{Op::kSumReduce, {a}, out};
    nd.axis = axis;
    record(std::move(nd));
  }
  return out;
}

TensorPtr mask_fill(const TensorPtr& a, const TensorPtr& mask, double fill) {
  require_same_shape(a, mask, "mask_fill");
  if (!std::isfinite(fill)) throw NonFiniteError("mask_fill: non-finite fill");
  auto out = make_out(a->shape);
  for (size_t i = 0; i < out->data.size(); ++i) {
    const double m = mask->data[i];
    if (m != 0.0 && m != 1.0) throw ValueError("mask_fill: mask entries must be 0 or 1");
    out->data[i] = m == 1.0 ? a->data[i] : fill;
  }
  if (should_record({a})) {
    Node nd{Op::kMaskFill, {a, mask}, out};
    nd.scalar = fill;
    record(std::move(nd));
  }
  return out;
}

TensorPtr concat(const TensorPtr& a, const TensorPtr& b, int axis) {
  require_matrix(a, "concat");
  require_matrix(b, "concat");
  if (axis != 0 && axis != 1) throw ValueError("concat: axis must be 0 or 1");
  TensorPtr out;
  if (axis == 0) {
    if (a->shape[1] != b->shape[1]) {
      throw ShapeError("concat rows: column counts differ, " + shape_str(*a) + " vs " +
                       shape_str(*b));
    }
    out = make_out({a->shape[0] + b->shape[0], a->shape[1]});
    std::copy(a->data.begin(), a->data.end(), out->data.begin());
    std::copy(b->data.begin(), b->data.end(), out->data.begin() + a->data.size());
  } else {
    if (a->shape[0] != b->shape[0]) {
      throw ShapeError("concat cols: row counts differ, " + shape_str(*a) + " vs " +
                       shape_str(*b));
    }
    const int64_t m = a->shape[0], na = a->shape[1], nb = b->shape[1];
    out = make_out({m, na + nb});
    for (int64_t i = 0; i < m; ++i) {
      std::copy(a->data.begin() + i * na, a->data.begin() + (i + 1) * na,
                out->data.begin() + i * (na + nb));
      std::copy(b->data.begin() + i * nb, b->data.begin() + (i + 1) * nb,
                out->data.begin() + i * (na + nb) + na);
    }
  }
  if (should_record({a, b})) {
    Node nd{Op::kConcat, {a, b}, out};
    nd.axis = axis;
    record(std::move(nd));
  }
  return out;
}

TensorPtr slice(const TensorPtr& a, int64_t r0, int64_t r1, int64_t c0, int64_t c1) {
  require_matrix(a, "slice");
  const int64_t m = a->shape[0], n = a->shape[1];
  if (r0 < 0 || r1 > m || r0 >= r1 || c0 < 0 || c1 > n || c0 >= c1) {
    throw ShapeError("slice: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                     ")x[" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") invalid for " + shape_str(*a));
  }
  auto out = make_out({r1 - r0, c1 - c0});
  for (int64_t i = r0; i < r1; ++i) {
    std::copy(a->data.begin() + i * n + c0, a->data.begin() + i * n + c1,
              out->data.begin() + (i - r0) * (c1 - c0));
  }
  if (should_record({a})) {
    Node nd{Op::kSlice, {a}, out};
    nd.r0 = r0;
    nd.c0 = c0;
    record(std::move(nd));
  }
  return out;
}

TensorPtr transpose(const TensorPtr& a) {
  require_matrix(a, "transpose");
  const int64_t m = a->shape[0], n = a->shape[1];
  auto out = make_out({n, m});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      out->data[static_cast<size_t>(j * m + i)] = a->data[static_cast<size_t>(i * n + j)];
    }
  }
  if (should_record({a})) record({Op::kTranspose, {a}, out});
  return out;
}

TensorPtr softmax_rows(const TensorPtr& a) {
  require_matrix(a, "softmax_rows");
  const int64_t m = a->shape[0], n = a->shape[1];
  auto out = make_out({m, n});
  for (int64_t i = 0; i < m; ++i) {
    const double* x = a->data.data() + i * n;
    double* y = out->data.data() + i * n;
    double mx = x[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    const double inv = 1.0 / s;
    for (int64_t j = 0; j < n; ++j) y[j] *= inv;
  }
  check_out(out, Op::kSoftmaxRows);
  if (should_record({a})) record({Op::kSoftmaxRows, {a}, out});
  return out;
}

TensorPtr layer_norm_rows(const TensorPtr& a, double eps) {
  require_matrix(a, "layer_norm_rows");
  if (eps <= 0) throw ValueError("layer_norm_rows: eps must be > 0");
  const int64_t m = a->shape[0], n = a->shape[1];
  auto out = make_out({m, n});
  std::vector<double> inv_std(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) {
    const double* x = a->data.data() + i * n;
    double* y = out->data.data() + i * n;
    double mean = 0.0;
    for (int64_t j = 0; j < n; ++j) mean += x[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<double>(n);
    const double r = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = r;
    for (int64_t j = 0; j < n; ++j) y[j] = (x[j] - mean) * r;
  }
  check_out(out, Op::kLayerNormRows);
  if (should_record({a})) {
    Node nd{Op::kLayerNormRows, {a}, out};
    nd.doubles = std::move(inv_std);
    record(std::move(nd));
  }
  return out;
}

TensorPtr row_affine(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias) {
  require_matrix(x, "row_affine");
  const int64_t m = x->shape[0], n = x->shape[1];
  if (gain->numel() != n || bias->numel() != n) {
    throw ShapeError("row_affine: gain/bias length must match columns of " + shape_str(*x));
  }
  auto out = make_out({m, n});
  for (int64_t i = 0; i < m; ++i) {
    const double* xr = x->data.data() + i * n;
    double* y = out->data.data() + i * n;
    for (int64_t j = 0; j < n; ++j) y[j] = xr[j] * gain->data[static_cast<size_t>(j)] +
                                           bias->data[static_cast<size_t>(j)];
  }
  check_out(out, Op::kRowAffine);
  if (should_record({x, gain, bias})) record({Op::kRowAffine, {x, gain, bias}, out});
  return out;
}

TensorPtr gather_rows(const TensorPtr& table, const std::vector<int32_t>& ids) {
  require_matrix(table, "gather_rows");
  if (ids.empty()) throw ValueError("gather_rows: empty id list");
  const int64_t v = table->shape[0], d = table->shape[1];
  for (int32_t id : ids) {
    if (id < 0 || id >= v) {
      throw ValueError("gather_rows: id " + std::to_string(id) + " out of range [0," +
                       std::to_string(v) + ")");
    }
  }
  auto out = make_out({static_cast<int64_t>(ids.size()), d});
  for (size_t t = 0; t < ids.size(); ++t) {
    std::copy(table->data.begin() + static_cast<int64_t>(ids[t]) * d,
              table->data.begin() + (static_cast<int64_t>(ids[t]) + 1) * d,
              out->data.begin() + static_cast<int64_t>(t) * d);
  }
  if (should_record({table})) {
    Node nd{Op::kGatherRows, {table}, out};
    nd.ints = ids;
    record(std::move(nd));
  }
  return out;
}

}  // namespace ops

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

namespace {

void accumulate_node(const Node& nd) {
  const std::vector<double>& g = nd.out->grad;
  if (g.empty()) return;  // root does not depend on this node
  auto want = [](const TensorPtr& t) { return t->requires_grad; };

  switch (nd.op) {
    case Op::kMatmul: {
      const auto& a = nd.inputs[0];
      const auto& b = nd.inputs[1];
      const int64_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
      if (want(a)) {
        a->ensure_grad();
        // dA = dC * B^T
        for (int64_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * n;
          double* arow = a->grad.data() + i * k;
          for (int64_t kk = 0; kk < k; ++kk) {
            const double* brow = b->data.data() + kk * n;
            double s = 0.0;
            for (int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            arow[kk] += s;
          }
        }
      }
      if (want(b)) {
        b->ensure_grad();
        // dB = A^T * dC
        for (int64_t kk = 0; kk < k; ++kk) {
          double* brow = b->grad.data() + kk * n;
          for (int64_t i = 0; i < m; ++i) {
            const double av = a->data[static_cast<size_t>(i * k + kk)];
            const double* grow = g.data() + i * n;
            for (int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
        }
      }
      break;
    }
    case Op::kAdd:
      for (int s = 0; s < 2; ++s) {
        const auto& t = nd.inputs[static_cast<size_t>(s)];
        if (!want(t)) continue;
        t->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) t->grad[i] += g[i];
      }
      break;
    case Op::kMul: {
      const auto& a = nd.inputs[0];
      const auto& b = nd.inputs[1];
      if (want(a)) {
        a->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) a->grad[i] += g[i] * b->data[i];
      }
      if (want(b)) {
        b->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) b->grad[i] += g[i] * a->data[i];
      }
      break;
    }
    case Op::kDiv: {
      const auto& a = nd.inputs[0];
      const auto& b = nd.inputs[1];
      if (want(a)) {
        a->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) a->grad[i] += g[i] / b->data[i];
      }
      if (want(b)) {
        b->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) {
          b->grad[i] -= g[i] * nd.out->data[i] / b->data[i];
        }
      }
      break;
    }
    case Op::kScale: {
      const auto& a = nd.inputs[0];
      if (want(a)) {
        a->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) a->grad[i] += g[i] * nd.scalar;
      }
      break;
    }
    case Op::kAddScalar: {
      const auto& a = nd.inputs[0];
      if (want(a)) {
        a->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) a->grad[i] += g[i];
      }
      break;
    }
    case Op::kExp: {
      const auto& a = nd.inputs[0];
      if (want(a)) {
        a->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) a->grad[i] += g[i] * nd.out->data[i];
      }
      break;
    }
    case Op::kLog: {
      const auto& a = nd.inputs[0];
      if (want(a)) {
        a->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) a->grad[i] += g[i] / a->data[i];
      }
      break;
    }
    case Op::kSigmoid: {
      const auto& a = nd.inputs[0];
      if (want(a)) {
        a->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) {
          const double y = nd.out->data[i];
          a->grad[i] += g[i] * y * (1.0 - y);
        }
      }
      break;
    }
    case Op::kMaxReduce: {
      const auto& a = nd.inputs[0];
      if (!want(a)) break;
      a->ensure_grad();
      const int64_t n = a->shape[1];
      if (nd.axis == 1) {
        for (size_t i = 0; i < nd.ints.size(); ++i) {
          a->grad[i * static_cast<size_t>(n) + static_cast<size_t>(nd.ints[i])] += g[i];
        }
      } else if (nd.axis == 0) {
        for (size_t j = 0; j < nd.ints.size(); ++j) {
          a->grad[static_cast<size_t>(nd.ints[j]) * static_cast<size_t>(n) + j] += g[j];
        }
      } else {
        a->grad[static_cast<size_t>(nd.ints[0])] += g[0];
      }
      break;
    }
    case Op::kSumReduce: {
      const auto& a = nd.inputs[0];
      if (!want(a)) break;
      a->ensure_grad();
      const int64_t m = a->shape[0], n = a->shape[1];
      if (nd.axis == 1) {
        for (int64_t i = 0; i < m; ++i) {
          const double gv = g[static_cast<size_t>(i)];
          double* row = a->grad.data() + i * n;
          for (int64_t j = 0; j < n; ++j) row[j] += gv;
        }
      } else if (nd.axis == 0) {
        for (int64_t i = 0; i < m; ++i) {
          double* row = a->grad.data() + i * n;
          for (int64_t j = 0; j < n; ++j) row[j] += g[static_cast<size_t>(j)];
        }
      } else {
        for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g[0];
      }
      break;
    }
    case Op::kMaskFill: {
      const auto& a = nd.inputs[0];
      const auto& mask = nd.inputs[1];
      if (!want(a)) break;
      a->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) {
        if (mask->data[i] == 1.0) a->grad[i] += g[i];
      }
      break;
    }
    case Op::kConcat: {
      const auto& a = nd.inputs[0];
      const auto& b = nd.inputs[1];
      if (nd.axis == 0) {
        if (want(a)) {
          a->ensure_grad();
          for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g[i];
        }
        if (want(b)) {
          b->ensure_grad();
          const size_t off = a->data.size();
          for (size_t i = 0; i < b->grad.size(); ++i) b->grad[i] += g[off + i];
        }
      } else {
        const int64_t m = a->shape[0], na = a->shape[1], nb = b->shape[1];
        if (want(a)) {
          a->ensure_grad();
          for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < na; ++j) {
              a->grad[static_cast<size_t>(i * na + j)] +=
                  g[static_cast<size_t>(i * (na + nb) + j)];
            }
          }
        }
        if (want(b)) {
          b->ensure_grad();
          for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < nb; ++j) {
              b->grad[static_cast<size_t>(i * nb + j)] +=
                  g[static_cast<size_t>(i * (na + nb) + na + j)];
            }
          }
        }
      }
      break;
    }
    case Op::kSlice: {
      const auto& a = nd.inputs[0];
      if (!want(a)) break;
      a->ensure_grad();
      const int64_t n = a->shape[1];
      const int64_t sm = nd.out->shape[0], sn = nd.out->shape[1];
      for (int64_t i = 0; i < sm; ++i) {
        for (int64_t j = 0; j < sn; ++j) {
          a->grad[static_cast<size_t>((nd.r0 + i) * n + nd.c0 + j)] +=
              g[static_cast<size_t>(i * sn + j)];
        }
      }
      break;
    }
    case Op::kTranspose: {
      const auto& a = nd.inputs[0];
      if (!want(a)) break;
      a->ensure_grad();
      const int64_t m = a->shape[0], n = a->shape[1];
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
          a->grad[static_cast<size_t>(i * n + j)] += g[static_cast<size_t>(j * m + i)];
        }
      }
      break;
    }
    case Op::kSoftmaxRows: {
      const auto& a = nd.inputs[0];
      if (!want(a)) break;
      a->ensure_grad();
      const int64_t m = a->shape[0], n = a->shape[1];
      for (int64_t i = 0; i < m; ++i) {
        const double* y = nd.out->data.data() + i * n;
        const double* gr = g.data() + i * n;
        double dot = 0.0;
        for (int64_t j = 0; j < n; ++j) dot += gr[j] * y[j];
        double* ar = a->grad.data() + i * n;
        for (int64_t j = 0; j < n; ++j) ar[j] += y[j] * (gr[j] - dot);
      }
      break;
    }
    case Op::kLayerNormRows: {
      const auto& a = nd.inputs[0];
      if (!want(a)) break;
      a->ensure_grad();
      const int64_t m = a->shape[0], n = a->shape[1];
      for (int64_t i = 0; i < m; ++i) {
        const double* y = nd.out->data.data() + i * n;  // normalized values
        const double* gr = g.data() + i * n;
        const double r = nd.doubles[static_cast<size_t>(i)];
        double gmean = 0.0, gydot = 0.0;
        for (int64_t j = 0; j < n; ++j) {
          gmean += gr[j];
          gydot += gr[j] * y[j];
        }
        gmean /= static_cast<double>(n);
        gydot /= static_cast<double>(n);
        double* ar = a->grad.data() + i * n;
        for (int64_t j = 0; j < n; ++j) ar[j] += r * (gr[j] - gmean - y[j] * gydot);
      }
      break;
    }
    case Op::kRowAffine: {
      const auto& x = nd.inputs[0];
      const auto& gain = nd.inputs[1];
      const auto& bias = nd.inputs[2];
      const int64_t m = x->shape[0], n = x->shape[1];
      if (want(x)) {
        x->ensure_grad();
        for (int64_t i = 0; i < m; ++i) {
          const double* gr = g.data() + i * n;
          double* xr = x->grad.data() + i * n;
          for (int64_t j = 0; j < n; ++j) xr[j] += gr[j] * gain->data[static_cast<size_t>(j)];
        }
      }
      if (want(gain)) {
        gain->ensure_grad();
        for (int64_t i = 0; i < m; ++i) {
          const double* gr = g.data() + i * n;
          const double* xr = x->data.data() + i * n;
          for (int64_t j = 0; j < n; ++j) gain->grad[static_cast<size_t>(j)] += gr[j] * xr[j];
        }
      }
      if (want(bias)) {
        bias->ensure_grad();
        for (int64_t i = 0; i < m; ++i) {
          const double* gr = g.data() + i * n;
          for (int64_t j = 0; j < n; ++j) bias->grad[static_cast<size_t>(j)] += gr[j];
        }
      }
      break;
    }
    case Op::kGatherRows: {
      const auto& table = nd.inputs[0];
      if (!want(table)) break;
      table->ensure_grad();
      const int64_t d = table->shape[1];
      for (size_t t = 0; t < nd.ints.size(); ++t) {
        const double* gr = g.data() + static_cast<int64_t>(t) * d;
        double* tr = table->grad.data() + static_cast<int64_t>(nd.ints[t]) * d;
        for (int64_t j = 0; j < d; ++j) tr[j] += gr[j];
      }
      break;
    }
  }
}

}  // namespace

void Graph::backward(const TensorPtr& root) {
  if (!root->is_scalar()) {
    throw ShapeError("backward: root must be scalar, got " + shape_str(*root));
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) accumulate_node(*it);
  // Finite audit over every gradient this pass touched.
  for (const Node& nd : nodes_) {
    for (const auto& in : nd.inputs) {
      if (in->requires_grad && !in->grad.empty() && !all_finite(in->grad)) {
        throw NonFiniteError("backward: non-finite gradient");
      }
    }
  }
}

TensorPtr primitive_forward(Op op, const std::vector<TensorPtr>& inputs,
                            const PrimitiveArgs& args) {
  for (const auto& in : inputs) require_finite(*in, op_name(op));
  auto in = [&](size_t i) -> const TensorPtr& {
    if (i >= inputs.size()) throw ValueError(std::string(op_name(op)) + ": missing input");
    return inputs[i];
  };
  switch (op) {
    case Op::kMatmul: return ops::matmul(in(0), in(1));
    case Op::kAdd: return ops::add(in(0), in(1));
    case Op::kMul: return ops::mul(in(0), in(1));
    case Op::kDiv: return ops::div(in(0), in(1));
    case Op::kScale: return ops::scale(in(0), args.scalar);
    case Op::kAddScalar: return ops::add_scalar(in(0), args.scalar);
    case Op::kExp: return ops::exp(in(0));
    case Op::kLog: return ops::log(in(0));
    case Op::kSigmoid: return ops::sigmoid(in(0));
    case Op::kMaxReduce: return ops::max_reduce(in(0), args.axis);
    case Op::kSumReduce: return ops::sum_reduce(in(0), args.axis);
    case Op::kMaskFill: return ops::mask_fill(in(0), in(1), args.scalar);
    case Op::kConcat: return ops::concat(in(0), in(1), args.axis);
    case Op::kSlice: return ops::slice(in(0), args.r0, args.r1, args.c0, args.c1);
    case Op::kTranspose: return ops::transpose(in(0));
    case Op::kSoftmaxRows: return ops::softmax_rows(in(0));
    case Op::kLayerNormRows: return ops::layer_norm_rows(in(0), args.eps);
    case Op::kRowAffine: return ops::row_affine(in(0), in(1), in(2));
    case Op::kGatherRows: return ops::gather_rows(in(0), args.ids);
  }
  throw ValueError("primitive_forward: unknown op");
}

void sgd_step(std::span<const TensorPtr> params, double lr) {
  if (lr < 0) throw ValueError("sgd_step: negative learning rate");
  for (const auto& p : params) {
    if (!p->grad_populated()) {
      throw ValueError("sgd_step: parameter has no gradient (shape " + shape_str(*p) + ")");
    }
    if (!all_finite(p->grad)) throw NonFiniteError("sgd_step: non-finite gradient");
  }
  for (const auto& p : params) {
    for (size_t i = 0; i < p->data.size(); ++i) p->data[i] -= lr * p->grad[i];
    p->zero_grad();
  }
}

double finite_diff_check(const std::function<TensorPtr(const TensorPtr&)>& f,
                         const TensorPtr& x, double step) {
  if (step <= 0) throw ValueError("finite_diff_check: step must be > 0");

  auto eval = [&](const std::vector<double>& vals) {
    auto leaf = Tensor::from_data(x->shape, vals, false);
    return f(leaf)->value();
  };

  // Determinism audit: two evaluations must agree bitwise.
  {
    const double a = eval(x->data);
    const double b = eval(x->data);
    if (std::memcmp(&a, &b, sizeof(double)) != 0) {
      throw ValueError("finite_diff_check: f is not deterministic");
    }
  }

  // Analytic gradient.
  auto leaf = Tensor::from_data(x->shape, x->data, true);
  Graph g;
  {
    GraphScope scope(g);
    auto y = f(leaf);
    g.backward(y);
  }
  leaf->ensure_grad();

  double max_err = 0.0;
  std::vector<double> probe = x->data;
  for (size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double fp = eval(probe);
    probe[i] = saved - step;
    const double fm = eval(probe);
    probe[i] = saved;
    const double cd = (fp - fm) / (2.0 * step);
    const double err = std::abs(leaf->grad[i] - cd) / (std::abs(cd) + 1e-8);
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace askd
