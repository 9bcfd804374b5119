#include "fedtwins/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "fedtwins/error.hpp"

namespace fedtwins {

std::size_t shape_numel(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  require(shape_numel(shape_) == data_.size(), ErrorCode::Shape,
          "tensor of shape " + shape_string(shape_) + " cannot hold " + std::to_string(data_.size()) +
              " values");
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    require(row.size() == c, ErrorCode::Shape, "ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  require(axis < shape_.size(), ErrorCode::Dimension,
          "axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  return shape_[axis];
}

double& Tensor::at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
double Tensor::at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
double& Tensor::at(std::size_t i, std::size_t j, std::size_t k) {
  return data_[(i * shape_[1] + j) * shape_[2] + k];
}
double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
  return data_[(i * shape_[1] + j) * shape_[2] + k];
}

double Tensor::item() const {
  require(data_.size() == 1, ErrorCode::Contract,
          "item() on non-scalar tensor of shape " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_numel(shape) == data_.size(), ErrorCode::Shape,
          "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// GEMM kernels. Each output element accumulates over k in a fixed order.

namespace {

constexpr std::size_t kRowTile = 4;
constexpr std::size_t kColTile = 32;

// One kRowTile x kColTile block of c, accumulated in registers over all of k.
inline void gemm_tile(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                      std::size_t ldc, std::size_t k) {
  double acc[kRowTile][kColTile];
  for (std::size_t r = 0; r < kRowTile; ++r)
    for (std::size_t j = 0; j < kColTile; ++j) acc[r][j] = c[r * ldc + j];
  for (std::size_t p = 0; p < k; ++p) {
    const double* bp = b + p * ldb;
    for (std::size_t r = 0; r < kRowTile; ++r) {
      const double av = a[r * lda + p];
      for (std::size_t j = 0; j < kColTile; ++j) acc[r][j] += av * bp[j];
    }
  }
  for (std::size_t r = 0; r < kRowTile; ++r)
    for (std::size_t j = 0; j < kColTile; ++j) c[r * ldc + j] = acc[r][j];
}

inline void gemm_row_range(const double* a, const double* b, double* c, std::size_t row, std::size_t k,
                           std::size_t n, std::size_t j0) {
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[row * k + p];
    const double* bp = b + p * n;
    double* cr = c + row * n;
    for (std::size_t j = j0; j < n; ++j) cr[j] += av * bp[j];
  }
}

}  // namespace

// Every output element sums its k products in increasing k order, whatever the tiling.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  std::size_t i = 0;
  for (; i + kRowTile <= m; i += kRowTile) {
    std::size_t j = 0;
    for (; j + kColTile <= n; j += kColTile) gemm_tile(a + i * k, k, b + j, n, c + i * n + j, n, k);
    if (j < n)
      for (std::size_t r = i; r < i + kRowTile; ++r) gemm_row_range(a, b, c, r, k, n, j);
  }
  for (; i < m; ++i) gemm_row_range(a, b, c, i, k, n, 0);
}

namespace {

constexpr std::size_t kLanes = 8;

inline double lane_sum(const double* acc) {
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

inline double dot(const double* a, const double* b, std::size_t k) {
  double acc[kLanes] = {};
  std::size_t p = 0;
  for (; p + kLanes <= k; p += kLanes)
    for (std::size_t u = 0; u < kLanes; ++u) acc[u] += a[p + u] * b[p + u];
  double tail = 0.0;
  for (; p < k; ++p) tail += a[p] * b[p];
  return lane_sum(acc) + tail;
}

inline void store(double* c, double v, bool accumulate) {
  if (accumulate)
    *c += v;
  else
    *c = v;
}

// c[m,n] (+)= a[m,k] * b[n,k]^T as row-by-row dot products. Each dot uses kLanes
// strided partial sums combined in a fixed tree, identical in the tiled and edge paths.
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  constexpr std::size_t kTile = 4;
  std::size_t i = 0;
  for (; i + kTile <= m; i += kTile) {
    std::size_t j = 0;
    for (; j + kTile <= n; j += kTile) {
      double acc[kTile][kTile][kLanes] = {};
      std::size_t p = 0;
      for (; p + kLanes <= k; p += kLanes)
        for (std::size_t r = 0; r < kTile; ++r)
          for (std::size_t q = 0; q < kTile; ++q)
            for (std::size_t u = 0; u < kLanes; ++u) acc[r][q][u] += a[(i + r) * k + p + u] * b[(j + q) * k + p + u];
      for (std::size_t r = 0; r < kTile; ++r)
        for (std::size_t q = 0; q < kTile; ++q) {
          double tail = 0.0;
          for (std::size_t t = p; t < k; ++t) tail += a[(i + r) * k + t] * b[(j + q) * k + t];
          store(c + (i + r) * n + j + q, lane_sum(acc[r][q]) + tail, accumulate);
        }
    }
    for (; j < n; ++j)
      for (std::size_t r = 0; r < kTile; ++r) store(c + (i + r) * n + j, dot(a + (i + r) * k, b + j * k, k), accumulate);
  }
  for (; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) store(c + i * n + j, dot(a + i * k, b + j * k, k), accumulate);
}

std::vector<double> transposed(const double* a, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  return t;
}

Tape& tape_of(Var a) {
  require(a.tape != nullptr, ErrorCode::Contract, "variable is not attached to a tape");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  require(b.tape == &t, ErrorCode::Contract, "operands belong to different tapes");
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape->value_at(index); }

Var Tape::variable(Tensor value) {
  require(value.all_finite(), ErrorCode::NumericDomain, "non-finite value entered the tape");
  nodes_.push_back(Node{std::move(value), {}, {}, {}, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  require(value.all_finite(), ErrorCode::NumericDomain, "non-finite value entered the tape");
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
  return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
  require(v.tape == this && v.index < nodes_.size(), ErrorCode::Contract, "variable is not on this tape");
  return nodes_[v.index].value;
}

Tensor Tape::grad(Var v) const {
  const Tensor& val = value(v);
  const Node& node = nodes_[v.index];
  if (node.grad.numel() == val.numel()) return node.grad;
  return Tensor(val.shape());
}

bool Tape::requires_grad(Var v) const {
  value(v);
  return nodes_[v.index].requires_grad;
}

Var Tape::record(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  if (!value.all_finite()) fail(ErrorCode::NumericDomain, std::string("op '") + op + "' produced a non-finite value");
  bool needs = false;
  for (std::size_t i : inputs) needs = needs || nodes_[i].requires_grad;
  Node node{std::move(value), {}, std::move(inputs), {}, needs};
  if (needs) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

std::span<double> Tape::grad_buffer(std::size_t index) {
  Node& node = nodes_[index];
  if (node.grad.numel() != node.value.numel()) node.grad = Tensor(node.value.shape());
  return node.grad.data();
}

void Tape::backward(Var loss) {
  require(!nodes_.empty(), ErrorCode::Contract, "backward on an empty tape");
  require(!backward_done_, ErrorCode::Contract, "backward called twice without reset");
  const Tensor& lv = value(loss);
  require(lv.numel() == 1, ErrorCode::Contract,
          "backward requires a scalar loss, got shape " + shape_string(lv.shape()));
  backward_done_ = true;
  if (!nodes_[loss.index].requires_grad) return;
  grad_buffer(loss.index)[0] = 1.0;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || !node.backward || node.grad.numel() == 0) continue;
    node.backward(*this, i);
  }
}

void Tape::reset() {
  nodes_.clear();
  backward_done_ = false;
}

// ---------------------------------------------------------------------------
// Ops

namespace ops {

namespace {

enum class Broadcast { Same, LeftScalar, RightScalar };

Broadcast check_binary(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (b.numel() == 1 && b.rank() <= 1) return Broadcast::RightScalar;
  if (a.numel() == 1 && a.rank() <= 1) return Broadcast::LeftScalar;
  fail(ErrorCode::Dimension, std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                                 shape_string(b.shape()) + " are not compatible");
}

// Shared driver for binary elementwise ops. f(x,y) gives the value, dfa/dfb the partials.
template <typename F, typename DA, typename DB>
Var binary(const char* op, Var a, Var b, F f, DA dfa, DB dfb) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast mode = check_binary(op, av, bv);
  const Shape out_shape = mode == Broadcast::LeftScalar ? bv.shape() : av.shape();
  const std::size_t n = shape_numel(out_shape);
  const std::size_t sa = mode == Broadcast::LeftScalar ? 0 : 1;
  const std::size_t sb = mode == Broadcast::RightScalar ? 0 : 1;
  Tensor out(out_shape);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i * sa], bv[i * sb]);
  const std::size_t ia = a.index, ib = b.index;
  return t.record(op, std::move(out), {ia, ib}, [=](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    const Tensor& x = tp.value_at(ia);
    const Tensor& y = tp.value_at(ib);
    if (tp.requires_grad_at(ia)) {
      auto ga = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < n; ++i) ga[i * sa] += g[i] * dfa(x[i * sa], y[i * sb]);
    }
    if (tp.requires_grad_at(ib)) {
      auto gb = tp.grad_buffer(ib);
      for (std::size_t i = 0; i < n; ++i) gb[i * sb] += g[i] * dfb(x[i * sa], y[i * sb]);
    }
  });
}

// Unary elementwise op. df receives (x, y=f(x)).
template <typename F, typename D>
Var unary(const char* op, Var a, F f, D df) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = f(av[i]);
  const std::size_t ia = a.index;
  return t.record(op, std::move(out), {ia}, [=](Tape& tp, std::size_t self) {
    const std::size_t n = tp.value_at(self).numel();
    double* __restrict ga = tp.grad_buffer(ia).data();
    const double* __restrict g = tp.grad_at(self).raw();
    const double* __restrict x = tp.value_at(ia).raw();
    const double* __restrict y = tp.value_at(self).raw();
    for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
  Shape reduced;
};

AxisSplit split_axis(const char* op, const Tensor& a, std::size_t axis) {
  require(axis < a.rank(), ErrorCode::Dimension,
          std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " + shape_string(a.shape()));
  AxisSplit s;
  for (std::size_t d = 0; d < a.rank(); ++d) {
    if (d < axis) s.outer *= a.shape()[d];
    if (d > axis) s.inner *= a.shape()[d];
    if (d != axis) s.reduced.push_back(a.shape()[d]);
  }
  s.extent = a.shape()[axis];
  require(s.extent > 0, ErrorCode::Dimension, std::string(op) + ": reduction over an empty axis");
  return s;
}

Var reduce_sum(const char* op, Var a, std::size_t axis, double factor) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const AxisSplit s = split_axis(op, av, axis);
  Tensor out(s.reduced);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.extent; ++j) {
      const double* src = av.raw() + (o * s.extent + j) * s.inner;
      double* dst = out.raw() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  if (factor != 1.0)
    for (double& v : out.data()) v *= factor;
  const std::size_t ia = a.index;
  return t.record(op, std::move(out), {ia}, [=](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    auto ga = tp.grad_buffer(ia);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < s.extent; ++j)
        for (std::size_t i = 0; i < s.inner; ++i)
          ga[(o * s.extent + j) * s.inner + i] += g[o * s.inner + i] * factor;
  });
}

void check_domain(const char* op, const Tensor& a, bool (*ok)(double), const char* requirement) {
  for (double v : a.data())
    if (!ok(v)) fail(ErrorCode::NumericDomain, std::string(op) + ": input " + std::to_string(v) + " " + requirement);
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.rank() == 2 && bv.rank() == 2, ErrorCode::Dimension, "matmul expects two matrices");
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
  require(bv.shape()[0] == k, ErrorCode::Dimension,
          "matmul inner dimensions differ: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  Tensor out(Shape{m, n});
  gemm(av.raw(), bv.raw(), out.raw(), m, k, n, false);
  const std::size_t ia = a.index, ib = b.index;
  return t.record("matmul", std::move(out), {ia, ib}, [=](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    const Tensor& x = tp.value_at(ia);
    const Tensor& y = tp.value_at(ib);
    if (tp.requires_grad_at(ia)) gemm_nt(g.raw(), y.raw(), tp.grad_buffer(ia).data(), m, n, k, true);
    if (tp.requires_grad_at(ib)) {
      const auto xt = transposed(x.raw(), m, k);
      gemm(xt.data(), g.raw(), tp.grad_buffer(ib).data(), k, m, n, true);
    }
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  require(av.rank() == 2, ErrorCode::Dimension, "transpose expects a matrix");
  const std::size_t r = av.shape()[0], c = av.shape()[1];
  Tensor out(Shape{c, r}, transposed(av.raw(), r, c));
  const std::size_t ia = a.index;
  return t.record("transpose", std::move(out), {ia}, [=](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    auto ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                 std::size_t padding) {
  require(stride > 0, ErrorCode::Shape, "conv1d stride must be positive");
  const std::size_t padded = length + 2 * padding;
  require(kernel > 0 && padded >= kernel, ErrorCode::Shape,
          "conv1d output length < 1 (length " + std::to_string(length) + ", kernel " + std::to_string(kernel) +
              ", padding " + std::to_string(padding) + ")");
  return (padded - kernel) / stride + 1;
}

Var conv1d(Var x, Var w, Var bias, std::size_t stride, std::size_t padding) {
  Tape& t = tape_of(x, w);
  require(bias.tape == &t, ErrorCode::Contract, "operands belong to different tapes");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = bias.value();
  require(xv.rank() == 3 && wv.rank() == 3 && bv.rank() == 1, ErrorCode::Dimension,
          "conv1d expects x[B,Cin,L], w[Cout,Cin,K], bias[Cout]");
  const std::size_t batch = xv.shape()[0], cin = xv.shape()[1], len = xv.shape()[2];
  const std::size_t cout = wv.shape()[0], ksize = wv.shape()[2];
  require(wv.shape()[1] == cin, ErrorCode::Dimension,
          "conv1d channel mismatch: x " + shape_string(xv.shape()) + ", w " + shape_string(wv.shape()));
  require(bv.shape()[0] == cout, ErrorCode::Dimension, "conv1d bias length differs from output channels");
  const std::size_t lout = conv1d_output_length(len, ksize, stride, padding);
  const std::size_t rows = cin * ksize;
  const std::size_t cols = batch * lout;

  // col[(c*K + k), b*Lout + t] = x[b, c, t*stride + k - padding]
  auto col = std::make_shared<std::vector<double>>(rows * cols, 0.0);
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t k = 0; k < ksize; ++k) {
      double* crow = col->data() + (c * ksize + k) * cols;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* xrow = xv.raw() + (b * cin + c) * len;
        for (std::size_t tt = 0; tt < lout; ++tt) {
          const std::size_t pos = tt * stride + k;
          if (pos >= padding && pos - padding < len) crow[b * lout + tt] = xrow[pos - padding];
        }
      }
    }

  std::vector<double> prod(cout * cols);
  gemm(wv.raw(), col->data(), prod.data(), cout, rows, cols, false);
  Tensor out(Shape{batch, cout, lout});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t b = 0; b < batch; ++b) {
      const double* src = prod.data() + o * cols + b * lout;
      double* dst = out.raw() + (b * cout + o) * lout;
      for (std::size_t tt = 0; tt < lout; ++tt) dst[tt] = src[tt] + bv[o];
    }

  const std::size_t ix = x.index, iw = w.index, ib = bias.index;
  return t.record("conv1d", std::move(out), {ix, iw, ib}, [=](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    std::vector<double> gr(cout * cols);
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t b = 0; b < batch; ++b)
        std::copy_n(g.raw() + (b * cout + o) * lout, lout, gr.data() + o * cols + b * lout);
    if (tp.requires_grad_at(ib)) {
      auto gb = tp.grad_buffer(ib);
      for (std::size_t o = 0; o < cout; ++o) {
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) s += gr[o * cols + j];
        gb[o] += s;
      }
    }
    if (tp.requires_grad_at(iw)) gemm_nt(gr.data(), col->data(), tp.grad_buffer(iw).data(), cout, cols, rows, true);
    if (tp.requires_grad_at(ix)) {
      const auto wt = transposed(tp.value_at(iw).raw(), cout, rows);
      std::vector<double> dcol(rows * cols);
      gemm(wt.data(), gr.data(), dcol.data(), rows, cout, cols, false);
      auto gx = tp.grad_buffer(ix);
      for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t k = 0; k < ksize; ++k) {
          const double* drow = dcol.data() + (c * ksize + k) * cols;
          for (std::size_t b = 0; b < batch; ++b) {
            double* gxrow = gx.data() + (b * cin + c) * len;
            for (std::size_t tt = 0; tt < lout; ++tt) {
              const std::size_t pos = tt * stride + k;
              if (pos >= padding && pos - padding < len) gxrow[pos - padding] += drow[b * lout + tt];
            }
          }
        }
    }
  });
}

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  check_domain("div", b.value(), [](double v) { return v != 0.0; }, "is a zero denominator");
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var scale(Var a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var log(Var a) {
  check_domain("log", a.value(), [](double v) { return v > 0.0; }, "is not positive");
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
  check_domain("sqrt", a.value(), [](double v) { return v >= 0.0; }, "is negative");
  return unary(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) {
        if (y == 0.0) fail(ErrorCode::NumericDomain, "sqrt: gradient undefined at 0");
        return 0.5 / y;
      });
}

Var square(Var a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var abs(Var a) {
  return unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var reciprocal(Var a) {
  check_domain("reciprocal", a.value(), [](double v) { return v != 0.0; }, "is zero");
  return unary(
      "reciprocal", a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

Var clamp_min(Var a, double floor) {
  return unary(
      "clamp_min", a, [floor](double x) { return x < floor ? floor : x; },
      [floor](double x, double) { return x < floor ? 0.0 : 1.0; });
}

Var sum(Var a, std::size_t axis) { return reduce_sum("sum", a, axis, 1.0); }

Var mean(Var a, std::size_t axis) {
  const std::size_t extent = split_axis("mean", a.value(), axis).extent;
  return reduce_sum("mean", a, axis, 1.0 / static_cast<double>(extent));
}

Var max(Var a, std::size_t axis) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const AxisSplit s = split_axis("max", av, axis);
  Tensor out(s.reduced);
  auto arg = std::make_shared<std::vector<std::size_t>>(s.outer * s.inner, 0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = 0;
      double bestv = av[o * s.extent * s.inner + i];
      for (std::size_t j = 1; j < s.extent; ++j) {
        const double v = av[(o * s.extent + j) * s.inner + i];
        if (v > bestv) {
          bestv = v;
          best = j;
        }
      }
      out[o * s.inner + i] = bestv;
      (*arg)[o * s.inner + i] = best;
    }
  const std::size_t ia = a.index;
  return t.record("max", std::move(out), {ia}, [=](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    auto ga = tp.grad_buffer(ia);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i)
        ga[(o * s.extent + (*arg)[o * s.inner + i]) * s.inner + i] += g[o * s.inner + i];
  });
}

Var sum_all(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  require(av.numel() > 0, ErrorCode::Dimension, "sum_all of an empty tensor");
  double s = 0.0;
  for (double v : av.data()) s += v;
  const std::size_t ia = a.index;
  return t.record("sum_all", Tensor::scalar(s), {ia}, [=](Tape& tp, std::size_t self) {
    const double g = tp.grad_at(self)[0];
    for (double& v : tp.grad_buffer(ia)) v += g;
  });
}

Var mean_all(Var a) {
  const std::size_t n = a.value().numel();
  require(n > 0, ErrorCode::Dimension, "mean_all of an empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(n));
}

Var trace(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  require(av.rank() == 2 && av.shape()[0] == av.shape()[1], ErrorCode::Dimension,
          "trace expects a square matrix, got " + shape_string(av.shape()));
  const std::size_t n = av.shape()[0];
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += av[i * n + i];
  const std::size_t ia = a.index;
  return t.record("trace", Tensor::scalar(s), {ia}, [=](Tape& tp, std::size_t self) {
    const double g = tp.grad_at(self)[0];
    auto ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < n; ++i) ga[i * n + i] += g;
  });
}

Var broadcast_rows(Var v, std::size_t rows) {
  Tape& t = tape_of(v);
  const Tensor& vv = v.value();
  require(vv.rank() == 1, ErrorCode::Dimension, "broadcast_rows expects a vector");
  require(rows > 0, ErrorCode::Dimension, "broadcast_rows needs at least one row");
  const std::size_t n = vv.shape()[0];
  Tensor out(Shape{rows, n});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(vv.raw(), n, out.raw() + r * n);
  const std::size_t iv = v.index;
  return t.record("broadcast_rows", std::move(out), {iv}, [=](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    auto gv = tp.grad_buffer(iv);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) gv[j] += g[r * n + j];
  });
}

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  require(av.rank() == 2, ErrorCode::Dimension, "softmax_rows expects a matrix");
  const std::size_t rows = av.shape()[0], k = av.shape()[1];
  require(k > 0, ErrorCode::Dimension, "softmax over zero classes");
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.raw() + r * k;
    double* y = out.raw() + r * k;
    const double m = *std::max_element(x, x + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += (y[j] = std::exp(x[j] - m));
    for (std::size_t j = 0; j < k; ++j) y[j] /= z;
  }
  const std::size_t ia = a.index;
  return t.record("softmax_rows", std::move(out), {ia}, [=](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    const Tensor& y = tp.value_at(self);
    auto ga = tp.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += g[r * k + j] * y[r * k + j];
      for (std::size_t j = 0; j < k; ++j) ga[r * k + j] += y[r * k + j] * (g[r * k + j] - dot);
    }
  });
}

}  // namespace ops

}  // namespace fedtwins
