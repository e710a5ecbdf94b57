#pragma once

// Independent reference implementations used as test oracles.

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "tensor.hpp"

namespace oracle {

using voxsynth::Tensor;

inline Tensor random_tensor(voxsynth::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (auto& v : t.data) v = u(rng);
  return t;
}

/// Direct six-fold summation for x [Cin,D,H,W], w [Cout,Cin,k,k,k].
inline Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad) {
  const std::size_t ci = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::size_t co = w.shape[0], k = w.shape[2];
  const std::size_t od = (D + 2 * pad - k) / stride + 1, oh = (H + 2 * pad - k) / stride + 1,
                    ow = (W + 2 * pad - k) / stride + 1;
  Tensor y({co, od, oh, ow});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t yy = 0; yy < oh; ++yy)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double s = b.data[o];
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t a = 0; a < k; ++a)
              for (std::size_t bb = 0; bb < k; ++bb)
                for (std::size_t cc = 0; cc < k; ++cc) {
                  const long iz = static_cast<long>(z * stride + a) - static_cast<long>(pad);
                  const long iy = static_cast<long>(yy * stride + bb) - static_cast<long>(pad);
                  const long ix = static_cast<long>(xx * stride + cc) - static_cast<long>(pad);
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= static_cast<long>(D) || iy >= static_cast<long>(H) ||
                      ix >= static_cast<long>(W))
                    continue;
                  s += x.data[((c * D + iz) * H + iy) * W + ix] * w.data[(((o * ci + c) * k + a) * k + bb) * k + cc];
                }
          y.data[((o * od + z) * oh + yy) * ow + xx] = s;
        }
  return y;
}

/// Column-by-column central-difference Jacobian of a vector function.
inline std::vector<std::vector<double>> jacobian(const std::function<std::vector<double>(const std::vector<double>&)>& f,
                                                 std::vector<double> x, double eps = 1e-6) {
  const auto y0 = f(x);
  std::vector<std::vector<double>> J(y0.size(), std::vector<double>(x.size(), 0.0));
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double orig = x[j];
    x[j] = orig + eps;
    const auto up = f(x);
    x[j] = orig - eps;
    const auto down = f(x);
    x[j] = orig;
    for (std::size_t i = 0; i < y0.size(); ++i) J[i][j] = (up[i] - down[i]) / (2 * eps);
  }
  return J;
}

inline std::vector<std::vector<double>> matmul(const std::vector<std::vector<double>>& a,
                                               const std::vector<std::vector<double>>& b) {
  std::vector<std::vector<double>> c(a.size(), std::vector<double>(b.front().size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b.front().size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

/// Solves A X = B by Gauss-Jordan elimination with partial pivoting.
inline std::vector<std::vector<double>> solve(std::vector<std::vector<double>> A, std::vector<std::vector<double>> B) {
  const std::size_t n = A.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(A[r][col]) > std::fabs(A[piv][col])) piv = r;
    if (std::fabs(A[piv][col]) < 1e-14) throw std::runtime_error("singular");
    std::swap(A[piv], A[col]);
    std::swap(B[piv], B[col]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = A[r][col] / A[col][col];
      for (std::size_t c = 0; c < n; ++c) A[r][c] -= f * A[col][c];
      for (std::size_t c = 0; c < B[r].size(); ++c) B[r][c] -= f * B[col][c];
    }
  }
  for (std::size_t r = 0; r < n; ++r)
    for (auto& v : B[r]) v /= A[r][r];
  return B;
}

/// Least-squares P (rows = latent entries) for Q ~ P m via the
/// pseudo-inverse (M^T M)^{-1} M^T, computed by elimination.
inline std::vector<std::vector<double>> glm_pinv(const std::vector<std::vector<double>>& Q,
                                                 const std::vector<std::array<double, 3>>& M) {
  std::vector<std::vector<double>> MtM(3, std::vector<double>(3, 0.0));
  const std::size_t L = Q.front().size();
  std::vector<std::vector<double>> MtQ(3, std::vector<double>(L, 0.0));
  for (std::size_t i = 0; i < M.size(); ++i)
    for (std::size_t a = 0; a < 3; ++a) {
      for (std::size_t b = 0; b < 3; ++b) MtM[a][b] += M[i][a] * M[i][b];
      for (std::size_t l = 0; l < L; ++l) MtQ[a][l] += M[i][a] * Q[i][l];
    }
  const auto Pt = solve(MtM, MtQ);  // 3 x L
  std::vector<std::vector<double>> P(L, std::vector<double>(3));
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t a = 0; a < 3; ++a) P[l][a] = Pt[a][l];
  return P;
}

inline double dist2(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

/// KL(p || q) over a shared support; q entries of zero where p > 0 give +inf.
inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
    s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

}  // namespace oracle
