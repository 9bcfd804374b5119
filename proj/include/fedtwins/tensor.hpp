#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fedtwins {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Rank 0 (empty shape) is a scalar.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_.size(); }
  bool is_scalar() const noexcept { return data_.size() == 1; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;
  double& at(std::size_t i, std::size_t j, std::size_t k);
  double at(std::size_t i, std::size_t j, std::size_t k) const;

  double item() const;
  Tensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid until the tape is reset.
struct Var {
  Tape* tape = nullptr;
  std::size_t index = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Dynamic reverse-mode tape. Nodes are appended in execution order, so the
// record is topologically sorted by construction. Single-threaded.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A leaf that accumulates a gradient (a parameter or a probed input).
  Var variable(Tensor value);
  // A leaf that never receives a gradient.
  Var constant(Tensor value);

  const Tensor& value(Var v) const;
  // Gradient of the last backward() loss w.r.t. v. Zeros if v did not influence the loss.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const;

  void backward(Var loss);
  void reset();
  std::size_t size() const noexcept { return nodes_.size(); }
  bool backward_done() const noexcept { return backward_done_; }

  // Op-implementation interface.
  Var record(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
  const Tensor& value_at(std::size_t index) const { return nodes_[index].value; }
  const Tensor& grad_at(std::size_t index) const { return nodes_[index].grad; }
  bool requires_grad_at(std::size_t index) const { return nodes_[index].requires_grad; }
  // Zero-initialized on first use; only call for nodes that require grad.
  std::span<double> grad_buffer(std::size_t index);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

namespace ops {

Var matmul(Var a, Var b);
Var transpose(Var a);
// Cross-correlation; x [B,Cin,L], w [Cout,Cin,K], bias [Cout].
Var conv1d(Var x, Var w, Var bias, std::size_t stride, std::size_t padding);
std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                 std::size_t padding);

// Elementwise. Binary ops accept equal shapes or one scalar operand.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double factor);
Var relu(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var abs(Var a);
Var reciprocal(Var a);
Var clamp_min(Var a, double floor);

// Reductions over one axis (the axis is removed from the shape).
Var sum(Var a, std::size_t axis);
Var mean(Var a, std::size_t axis);
Var max(Var a, std::size_t axis);
Var sum_all(Var a);
Var mean_all(Var a);
Var trace(Var a);

// Repeats a vector [N] into rows of a [rows,N] matrix; gradient sums over rows.
Var broadcast_rows(Var v, std::size_t rows);
// Row-wise softmax of a [B,K] matrix.
Var softmax_rows(Var a);

}  // namespace ops

// Plain GEMM kernels shared by ops and tests. Row-major, c = a*b (accumulate=false) or c += a*b.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate);

}  // namespace fedtwins
