#include "tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace voxsynth {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return shape.empty() ? 0 : n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(element_count(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (element_count(shape) != data.size())
    throw ShapeError("tensor: shape " + shape_string(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->tracks(*this); }

// ---------------------------------------------------------------------------
// Tape

void Tape::check_writable() const {
  if (consumed_) throw std::logic_error("tape: already differentiated; call reset() before recording");
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  check_writable();
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  return record(std::move(value), std::vector<Var>(parents), std::move(fn));
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
  check_writable();
  for (const auto& v : value.data) {
    if (!std::isfinite(v)) throw std::domain_error("tape: op produced a non-finite value");
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(parents.begin(), parents.end(), [&](Var p) { return tracks(p); });
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

std::vector<double>& Tape::grad_buffer(Var v) {
  auto& node = nodes_[v.id_];
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

void Tape::backward(Var loss) {
  check_writable();
  if (loss.tape_ != this) throw std::invalid_argument("backward: loss belongs to another tape");
  if (loss.size() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  if (nodes_.empty()) throw std::logic_error("backward: empty tape");
  consumed_ = true;
  if (!nodes_[loss.id_].requires_grad) return;
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.backward || node.grad.empty()) continue;
    node.backward(*this, node.grad);
  }
}

Tensor Tape::grad(Var v) const {
  const auto& node = nodes_[v.id_];
  if (node.grad.empty()) return Tensor(node.value.shape, 0.0);
  return Tensor(node.value.shape, node.grad);
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

void require_same_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

bool is_scalar(const Shape& s) { return element_count(s) == 1; }

// Elementwise binary op with optional scalar broadcast on either side.
template <class Fwd, class DA, class DB>
Var binary(const char* name, Var a, Var b, Fwd fwd, DA da, DB db) {
  require_same_tape(a, b, name);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool a_scalar = is_scalar(av.shape) && !is_scalar(bv.shape);
  const bool b_scalar = is_scalar(bv.shape) && !is_scalar(av.shape);
  if (!a_scalar && !b_scalar && av.shape != bv.shape) shape_mismatch(name, av.shape, bv.shape);
  const Shape& out_shape = a_scalar ? bv.shape : av.shape;
  const std::size_t n = element_count(out_shape);
  Tensor out(out_shape);
  for (std::size_t i = 0; i < n; ++i)
    out.data[i] = fwd(av.data[a_scalar ? 0 : i], bv.data[b_scalar ? 0 : i]);
  auto& tape = a.tape();
  return tape.record(std::move(out), {a, b}, [a, b, a_scalar, b_scalar, n, da, db](Tape& t, const std::vector<double>& g) {
    const auto& av = a.value().data;
    const auto& bv = b.value().data;
    if (t.tracks(a)) {
      auto& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < n; ++i)
        ga[a_scalar ? 0 : i] += g[i] * da(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
    }
    if (t.tracks(b)) {
      auto& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < n; ++i)
        gb[b_scalar ? 0 : i] += g[i] * db(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
    }
  });
}

}  // namespace

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

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.data) v *= factor;
  return a.tape().record(std::move(out), {a}, [a, factor](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

Var sum(Var a) {
  const auto& v = a.value().data;
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  return a.tape().record(Tensor::scalar(s), {a}, [a](Tape& t, const std::vector<double>& g) {
    for (auto& x : t.grad_buffer(a)) x += g[0];
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

// ---------------------------------------------------------------------------
// Linear algebra

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

auto idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  MutMap(c, idx(m), idx(n)).noalias() += ConstMap(a, idx(m), idx(k)) * ConstMap(b, idx(k), idx(n));
}

// c[m,k] += g[m,n] * b[k,n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  MutMap(c, idx(m), idx(k)).noalias() += ConstMap(g, idx(m), idx(n)) * ConstMap(b, idx(k), idx(n)).transpose();
}

// c[k,n] += a[m,k]^T * g[m,n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  MutMap(c, idx(k), idx(n)).noalias() += ConstMap(a, idx(m), idx(k)).transpose() * ConstMap(g, idx(m), idx(n));
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) shape_mismatch("matmul", as, bs);
  const std::size_t m = as[0], k = as[1], n = bs[1];
  Tensor out({m, n});
  gemm_nn(a.value().data.data(), b.value().data.data(), out.data.data(), m, k, n);
  return a.tape().record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const std::vector<double>& g) {
    if (t.tracks(a)) gemm_nt(g.data(), b.value().data.data(), t.grad_buffer(a).data(), m, n, k);
    if (t.tracks(b)) gemm_tn(a.value().data.data(), g.data(), t.grad_buffer(b).data(), m, k, n);
  });
}

Var transpose(Var a) { return permute(a, {1, 0}); }

Var linear(Var x, Var w, Var b) {
  require_same_tape(x, w, "linear");
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0]) shape_mismatch("linear", xs, ws);
  if (b.shape() != Shape{ws[1]}) shape_mismatch("linear(bias)", b.shape(), Shape{ws[1]});
  const std::size_t m = xs[0], k = xs[1], n = ws[1];
  Tensor out({m, n});
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < m; ++i) std::copy(bv.begin(), bv.end(), out.data.begin() + i * n);
  gemm_nn(x.value().data.data(), w.value().data.data(), out.data.data(), m, k, n);
  return x.tape().record(std::move(out), {x, w, b}, [x, w, b, m, k, n](Tape& t, const std::vector<double>& g) {
    if (t.tracks(x)) gemm_nt(g.data(), w.value().data.data(), t.grad_buffer(x).data(), m, n, k);
    if (t.tracks(w)) gemm_tn(x.value().data.data(), g.data(), t.grad_buffer(w).data(), m, k, n);
    if (t.tracks(b)) {
      auto& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities

Var leaky_relu(Var a, double slope) {
  Tensor out = a.value();
  for (auto& v : out.data) v = v > 0.0 ? v : slope * v;
  return a.tape().record(std::move(out), {a}, [a, slope](Tape& t, const std::vector<double>& g) {
    const auto& x = a.value().data;
    auto& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > 0.0 ? g[i] : slope * g[i];
  });
}

Var softmax(Var a) {
  const auto& s = a.shape();
  if (s.empty()) throw ShapeError("softmax: rank-0 input");
  const std::size_t cols = s.back();
  const std::size_t rows = a.size() / cols;
  Tensor out = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (row[c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) row[c] /= z;
  }
  std::vector<double> p = out.data;
  return a.tape().record(std::move(out), {a}, [a, p = std::move(p), rows, cols](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[o + c] * p[o + c];
      for (std::size_t c = 0; c < cols; ++c) ga[o + c] += p[o + c] * (g[o + c] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

Var reshape(Var a, Shape shape) {
  if (element_count(shape) != a.size()) shape_mismatch("reshape", a.shape(), shape);
  Tensor out(std::move(shape), a.value().data);
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

namespace {

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// For every output flat index, the source flat index under the permutation.
std::vector<std::size_t> permutation_map(const Shape& in, const std::vector<std::size_t>& axes, Shape& out) {
  const std::size_t r = in.size();
  out.resize(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = in[axes[i]];
  const auto in_st = strides_of(in);
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) src_stride[i] = in_st[axes[i]];
  std::vector<std::size_t> map(element_count(in));
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < map.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < r; ++d) src += idx[d] * src_stride[d];
    map[flat] = src;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out[d]) break;
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace

Var permute(Var a, const std::vector<std::size_t>& axes) {
  const auto& in = a.shape();
  std::vector<std::size_t> sorted = axes;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(in.size());
  std::iota(iota.begin(), iota.end(), 0);
  if (sorted != iota) throw ShapeError("permute: axes are not a permutation of " + shape_string(in));
  Shape out_shape;
  auto map = permutation_map(in, axes, out_shape);
  Tensor out(out_shape);
  const auto& src = a.value().data;
  for (std::size_t i = 0; i < map.size(); ++i) out.data[i] = src[map[i]];
  return a.tape().record(std::move(out), {a}, [a, map = std::move(map)](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < map.size(); ++i) ga[map[i]] += g[i];
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != first.size()) shape_mismatch("concat", first, s);
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != first[d]) shape_mismatch("concat", first, s);
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  Tensor out(out_shape);
  const std::size_t out_row = out_shape[axis] * inner;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t row = p.shape()[axis] * inner;
    const auto& src = p.value().data;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src.begin() + o * row, row, out.data.begin() + o * out_row + off);
    off += row;
  }
  return parts.front().tape().record(
      std::move(out), parts, [parts, offsets, outer, inner, axis, out_row](Tape& t, const std::vector<double>& g) {
        for (std::size_t i = 0; i < parts.size(); ++i) {
          if (!t.tracks(parts[i])) continue;
          auto& gp = t.grad_buffer(parts[i]);
          const std::size_t row = parts[i].shape()[axis] * inner;
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < row; ++j) gp[o * row + j] += g[o * out_row + offsets[i] + j];
        }
      });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const auto& s = a.shape();
  if (s.empty() || begin > end || end > s[0])
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_string(s));
  const std::size_t row = a.size() / s[0];
  Shape out_shape = s;
  out_shape[0] = end - begin;
  Tensor out(out_shape);
  std::copy(a.value().data.begin() + begin * row, a.value().data.begin() + end * row, out.data.begin());
  return a.tape().record(std::move(out), {a}, [a, begin, row](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[begin * row + i] += g[i];
  });
}

Var embedding(Var table, std::span<const std::size_t> indices) {
  const auto& s = table.shape();
  if (s.size() != 2) throw ShapeError("embedding: table must be rank 2, got " + shape_string(s));
  const std::size_t dim = s[1];
  Tensor out({indices.size(), dim});
  const auto& src = table.value().data;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= s[0])
      throw ShapeError("embedding: index " + std::to_string(indices[i]) + " out of range for " + shape_string(s));
    std::copy_n(src.begin() + indices[i] * dim, dim, out.data.begin() + i * dim);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return table.tape().record(std::move(out), {table}, [table, idx = std::move(idx), dim](Tape& t, const std::vector<double>& g) {
    auto& gt = t.grad_buffer(table);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < dim; ++j) gt[idx[i] * dim + j] += g[i * dim + j];
  });
}

Var detach(Var a) { return a.tape().constant(a.value()); }

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeom {
  std::size_t cin, cout, k, stride, pad;
  std::size_t d, h, w;     // input extents
  std::size_t od, oh, ow;  // output extents
};

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  if (in + 2 * p < k) return 0;
  return (in + 2 * p - k) / s + 1;
}

// Output positions o in [lo, hi) with 0 <= o*stride + kk - pad < in.
std::pair<std::size_t, std::size_t> valid_range(std::size_t kk, std::size_t s, std::size_t p, std::size_t in,
                                                std::size_t out) {
  std::size_t lo = 0;
  if (p > kk) lo = (p - kk + s - 1) / s;
  if (in + p <= kk) return {0, 0};
  const std::size_t hi = std::min(out, (in - 1 + p - kk) / s + 1);
  return {lo, std::max(lo, hi)};
}

// Unfolds input patches into col[K, P] with K = cin*k^3 (ci, kz, ky, kx)
// and P = od*oh*ow. Out-of-range taps read as zero.
void im2col(const ConvGeom& g, const double* in, double* col) {
  const std::size_t k = g.k, s = g.stride, p = g.pad;
  const std::size_t P = g.od * g.oh * g.ow;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t kz = 0; kz < k; ++kz) {
      const auto [z0, z1] = valid_range(kz, s, p, g.d, g.od);
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto [y0, y1] = valid_range(ky, s, p, g.h, g.oh);
        for (std::size_t kx = 0; kx < k; ++kx, ++row) {
          const auto [x0, x1] = valid_range(kx, s, p, g.w, g.ow);
          double* c = col + row * P;
          std::fill_n(c, P, 0.0);
          for (std::size_t oz = z0; oz < z1; ++oz) {
            const std::size_t iz = oz * s + kz - p;
            for (std::size_t oy = y0; oy < y1; ++oy) {
              const std::size_t iy = oy * s + ky - p;
              const double* src = in + ((ci * g.d + iz) * g.h + iy) * g.w + (x0 * s + kx - p);
              double* dst = c + (oz * g.oh + oy) * g.ow;
              for (std::size_t ox = x0; ox < x1; ++ox) dst[ox] = src[(ox - x0) * s];
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters col[K, P] back onto the input grid.
void col2im(const ConvGeom& g, const double* col, double* in) {
  const std::size_t k = g.k, s = g.stride, p = g.pad;
  const std::size_t P = g.od * g.oh * g.ow;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t kz = 0; kz < k; ++kz) {
      const auto [z0, z1] = valid_range(kz, s, p, g.d, g.od);
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto [y0, y1] = valid_range(ky, s, p, g.h, g.oh);
        for (std::size_t kx = 0; kx < k; ++kx, ++row) {
          const auto [x0, x1] = valid_range(kx, s, p, g.w, g.ow);
          const double* c = col + row * P;
          for (std::size_t oz = z0; oz < z1; ++oz) {
            const std::size_t iz = oz * s + kz - p;
            for (std::size_t oy = y0; oy < y1; ++oy) {
              const std::size_t iy = oy * s + ky - p;
              double* dst = in + ((ci * g.d + iz) * g.h + iy) * g.w + (x0 * s + kx - p);
              const double* src = c + (oz * g.oh + oy) * g.ow;
              for (std::size_t ox = x0; ox < x1; ++ox) dst[(ox - x0) * s] += src[ox];
            }
          }
        }
      }
    }
  }
}

std::size_t patch_rows(const ConvGeom& g) { return g.cin * g.k * g.k * g.k; }
std::size_t patch_cols(const ConvGeom& g) { return g.od * g.oh * g.ow; }

void conv_forward(const ConvGeom& g, const double* in, const double* w, double* out) {
  std::vector<double> col(patch_rows(g) * patch_cols(g));
  im2col(g, in, col.data());
  gemm_nn(w, col.data(), out, g.cout, patch_rows(g), patch_cols(g));
}

void conv_backward_input(const ConvGeom& g, const double* gout, const double* w, double* gin) {
  std::vector<double> col(patch_rows(g) * patch_cols(g), 0.0);
  gemm_tn(w, gout, col.data(), g.cout, patch_rows(g), patch_cols(g));
  col2im(g, col.data(), gin);
}

void conv_backward_weight(const ConvGeom& g, const double* gout, const double* in, double* gw) {
  std::vector<double> col(patch_rows(g) * patch_cols(g));
  im2col(g, in, col.data());
  gemm_nt(gout, col.data(), gw, g.cout, patch_cols(g), patch_rows(g));
}

void check_conv_args(const char* op, const Shape& x, const Shape& w, Conv3dOptions opt) {
  if (x.size() != 4) throw ShapeError(std::string(op) + ": input must be [C,D,H,W], got " + shape_string(x));
  if (w.size() != 5 || w[2] != w[3] || w[3] != w[4])
    throw ShapeError(std::string(op) + ": kernel must be [A,B,k,k,k], got " + shape_string(w));
  if (opt.stride == 0) throw std::invalid_argument(std::string(op) + ": stride must be positive");
}

}  // namespace

Shape conv3d_output_shape(const Shape& x, const Shape& w, Conv3dOptions opt) {
  check_conv_args("conv3d", x, w, opt);
  if (x[0] != w[1]) shape_mismatch("conv3d", x, w);
  Shape out{w[0], conv_out(x[1], w[2], opt.stride, opt.padding), conv_out(x[2], w[2], opt.stride, opt.padding),
            conv_out(x[3], w[2], opt.stride, opt.padding)};
  if (out[1] == 0 || out[2] == 0 || out[3] == 0) shape_mismatch("conv3d", x, w);
  return out;
}

Shape conv_transpose3d_output_shape(const Shape& x, const Shape& w, Conv3dOptions opt) {
  check_conv_args("conv_transpose3d", x, w, opt);
  if (x[0] != w[0]) shape_mismatch("conv_transpose3d", x, w);
  Shape out{w[1], 0, 0, 0};
  for (int d = 1; d <= 3; ++d) {
    const std::size_t full = (x[d] - 1) * opt.stride + w[2];
    if (full <= 2 * opt.padding) shape_mismatch("conv_transpose3d", x, w);
    out[d] = full - 2 * opt.padding;
  }
  return out;
}

Var conv3d(Var x, Var w, Var b, Conv3dOptions opt) {
  require_same_tape(x, w, "conv3d");
  const Shape out_shape = conv3d_output_shape(x.shape(), w.shape(), opt);
  if (b.shape() != Shape{out_shape[0]}) shape_mismatch("conv3d(bias)", b.shape(), Shape{out_shape[0]});
  const auto& xs = x.shape();
  const ConvGeom g{xs[0], out_shape[0], w.shape()[2], opt.stride, opt.padding, xs[1], xs[2], xs[3],
                   out_shape[1], out_shape[2], out_shape[3]};
  Tensor out(out_shape);
  const std::size_t vox = g.od * g.oh * g.ow;
  for (std::size_t c = 0; c < g.cout; ++c)
    std::fill_n(out.data.begin() + c * vox, vox, b.value().data[c]);
  conv_forward(g, x.value().data.data(), w.value().data.data(), out.data.data());
  return x.tape().record(std::move(out), {x, w, b}, [x, w, b, g, vox](Tape& t, const std::vector<double>& go) {
    if (t.tracks(x)) conv_backward_input(g, go.data(), w.value().data.data(), t.grad_buffer(x).data());
    if (t.tracks(w)) conv_backward_weight(g, go.data(), x.value().data.data(), t.grad_buffer(w).data());
    if (t.tracks(b)) {
      auto& gb = t.grad_buffer(b);
      for (std::size_t c = 0; c < g.cout; ++c)
        gb[c] += std::accumulate(go.begin() + c * vox, go.begin() + (c + 1) * vox, 0.0);
    }
  });
}

Var conv_transpose3d(Var x, Var w, Var b, Conv3dOptions opt) {
  require_same_tape(x, w, "conv_transpose3d");
  const Shape out_shape = conv_transpose3d_output_shape(x.shape(), w.shape(), opt);
  if (b.shape() != Shape{out_shape[0]}) shape_mismatch("conv_transpose3d(bias)", b.shape(), Shape{out_shape[0]});
  const auto& xs = x.shape();
  // Geometry of the forward conv whose input gradient this op computes.
  const ConvGeom g{out_shape[0], xs[0], w.shape()[2], opt.stride, opt.padding, out_shape[1], out_shape[2],
                   out_shape[3], xs[1], xs[2], xs[3]};
  Tensor out(out_shape);
  const std::size_t vox = out_shape[1] * out_shape[2] * out_shape[3];
  for (std::size_t c = 0; c < out_shape[0]; ++c)
    std::fill_n(out.data.begin() + c * vox, vox, b.value().data[c]);
  conv_backward_input(g, x.value().data.data(), w.value().data.data(), out.data.data());
  return x.tape().record(std::move(out), {x, w, b}, [x, w, b, g, vox](Tape& t, const std::vector<double>& go) {
    if (t.tracks(x)) conv_forward(g, go.data(), w.value().data.data(), t.grad_buffer(x).data());
    if (t.tracks(w)) conv_backward_weight(g, x.value().data.data(), go.data(), t.grad_buffer(w).data());
    if (t.tracks(b)) {
      auto& gb = t.grad_buffer(b);
      for (std::size_t c = 0; c < g.cin; ++c)
        gb[c] += std::accumulate(go.begin() + c * vox, go.begin() + (c + 1) * vox, 0.0);
    }
  });
}

// ---------------------------------------------------------------------------
// Losses

Var mse(Var a, Var b) {
  require_same_tape(a, b, "mse");
  if (a.shape() != b.shape()) shape_mismatch("mse", a.shape(), b.shape());
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  const double n = static_cast<double>(av.size());
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  return a.tape().record(Tensor::scalar(s / n), {a, b}, [a, b, n](Tape& t, const std::vector<double>& g) {
    const auto& av = a.value().data;
    const auto& bv = b.value().data;
    const double c = 2.0 * g[0] / n;
    if (t.tracks(a)) {
      auto& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += c * (av[i] - bv[i]);
    }
    if (t.tracks(b)) {
      auto& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= c * (av[i] - bv[i]);
    }
  });
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets) {
  const auto& s = logits.shape();
  if (s.size() != 2 || s[0] != targets.size())
    throw ShapeError("cross_entropy: logits " + shape_string(s) + " vs " + std::to_string(targets.size()) +
                     " targets");
  const std::size_t rows = s[0], cols = s[1];
  const auto& x = logits.value().data;
  std::vector<double> probs(x.size(), 0.0);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == kIgnore) continue;
    if (targets[r] >= cols) throw ShapeError("cross_entropy: target " + std::to_string(targets[r]) + " >= " + std::to_string(cols));
    const double* row = x.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (probs[r * cols + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] /= z;
    total += std::log(z) + mx - row[targets[r]];
    ++counted;
  }
  const double denom = counted ? static_cast<double>(counted) : 1.0;
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return logits.tape().record(
      Tensor::scalar(total / denom), {logits},
      [logits, probs = std::move(probs), tg = std::move(tg), cols, denom](Tape& t, const std::vector<double>& g) {
        auto& gl = t.grad_buffer(logits);
        const double c = g[0] / denom;
        for (std::size_t r = 0; r < tg.size(); ++r) {
          if (tg[r] == kIgnore) continue;
          for (std::size_t k = 0; k < cols; ++k)
            gl[r * cols + k] += c * (probs[r * cols + k] - (k == tg[r] ? 1.0 : 0.0));
        }
      });
}

// ---------------------------------------------------------------------------

double finite_diff_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw std::invalid_argument("finite_diff_check: eps must lie in (0, 1e-2]");
  Tape tape;
  Var xv = tape.leaf(x, true);
  Var y = f(tape, xv);
  tape.backward(y);
  const Tensor analytic = tape.grad(xv);

  auto eval = [&](const Tensor& at) {
    Tape t;
    return f(t, t.leaf(at, false)).value().data[0];
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe.data[i];
    probe.data[i] = orig + eps;
    const double up = eval(probe);
    probe.data[i] = orig - eps;
    const double down = eval(probe);
    probe.data[i] = orig;
    const double central = (up - down) / (2.0 * eps);
    const double a = analytic.data[i];
    worst = std::max(worst, std::abs(a - central) / (std::abs(a) + std::abs(central) + 1e-12));
  }
  return worst;
}

}  // namespace voxsynth
