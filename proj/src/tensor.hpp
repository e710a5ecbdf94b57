#pragma once

// Dense 64-bit tensors with a reverse-mode tape.
//
// Tensors are row-major with an explicit shape. Ops are free functions that
// take `Var` handles living on one `Tape`; an op records a backward closure
// only when one of its inputs requires gradients. Broadcasting is limited to
// a scalar (shape {1}) operand on elementwise ops.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxsynth {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the gradient of the recorded node and scatters it into parents.
  using BackwardFn = std::function<void(Tape&, const std::vector<double>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op result. Gradient tracking is enabled when any parent
  /// tracks gradients; `fn` is dropped otherwise.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn fn);

  /// Populates gradients of every node upstream of `loss`. The tape must be
  /// reset before it records again.
  void backward(Var loss);

  /// Gradient accumulated for `v`; zeros if none reached it.
  Tensor grad(Var v) const;

  void reset();
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Used by op implementations.
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool tracks(Var v) const { return nodes_[v.id_].requires_grad; }
  std::vector<double>& grad_buffer(Var v);

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    BackwardFn backward;
    std::vector<double> grad;
  };

  void check_writable() const;
  Var push(Node node);

  std::deque<Node> nodes_;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Ops

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var sum(Var a);
Var mean(Var a);

/// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);
Var transpose(Var a);
/// x [n,in] * w [in,out] + b [out]
Var linear(Var x, Var w, Var b);

Var leaky_relu(Var a, double slope = 0.2);
/// Softmax over the last axis.
Var softmax(Var a);

Var reshape(Var a, Shape shape);
Var permute(Var a, const std::vector<std::size_t>& axes);
Var concat(const std::vector<Var>& parts, std::size_t axis);
/// Rows [begin, end) along axis 0.
Var slice_rows(Var a, std::size_t begin, std::size_t end);

/// Rows of `table` [V,D] selected by `indices` -> [n,D].
Var embedding(Var table, std::span<const std::size_t> indices);

/// Identity in the forward pass, blocks gradients.
Var detach(Var a);

struct Conv3dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// x [Cin,D,H,W], w [Cout,Cin,k,k,k], b [Cout] -> [Cout,D',H',W']
Var conv3d(Var x, Var w, Var b, Conv3dOptions opt = {});
/// x [Cin,D,H,W], w [Cin,Cout,k,k,k], b [Cout]; adjoint of conv3d in x.
Var conv_transpose3d(Var x, Var w, Var b, Conv3dOptions opt = {});

Shape conv3d_output_shape(const Shape& x, const Shape& w, Conv3dOptions opt);
Shape conv_transpose3d_output_shape(const Shape& x, const Shape& w, Conv3dOptions opt);

/// Mean squared error over all elements, scalar result.
Var mse(Var a, Var b);

/// Mean negative log-likelihood of `targets` under softmax(logits) for
/// logits [n,C]. Rows whose target is `kIgnore` do not contribute.
inline constexpr std::size_t kIgnore = static_cast<std::size_t>(-1);
Var cross_entropy(Var logits, std::span<const std::size_t> targets);

// ---------------------------------------------------------------------------

/// Max over entries of |analytic - central| / (|analytic| + |central| + 1e-12)
/// for the gradient of the scalar `f` at `x`.
double finite_diff_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps);

}  // namespace voxsynth
