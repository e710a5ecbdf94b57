#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace voxsynth {

namespace {

double sq_dist(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("mmd: element size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return s;
}

}  // namespace

double mmd_raw(std::span<const std::vector<double>> a, std::span<const std::vector<double>> b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("mmd: each set needs at least 2 elements");
  std::vector<const std::vector<double>*> pooled;
  for (const auto& x : a) pooled.push_back(&x);
  for (const auto& x : b) pooled.push_back(&x);
  std::vector<double> d;
  for (std::size_t i = 0; i < pooled.size(); ++i)
    for (std::size_t j = i + 1; j < pooled.size(); ++j) d.push_back(std::sqrt(sq_dist(*pooled[i], *pooled[j])));
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double median = *mid;
  if (d.size() % 2 == 0) median = 0.5 * (median + *std::max_element(d.begin(), mid));
  const double bw = median > 0.0 ? median : 1.0;
  const double gamma = 1.0 / (2.0 * bw * bw);

  auto within = [&](std::span<const std::vector<double>> s) {
    double k = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = i + 1; j < s.size(); ++j) k += 2.0 * std::exp(-gamma * sq_dist(s[i], s[j]));
    return k / static_cast<double>(s.size() * (s.size() - 1));
  };
  double cross = 0.0;
  for (const auto& x : a)
    for (const auto& y : b) cross += std::exp(-gamma * sq_dist(x, y));
  cross /= static_cast<double>(a.size() * b.size());
  return within(a) + within(b) - 2.0 * cross;
}

double mmd(std::span<const std::vector<double>> a, std::span<const std::vector<double>> b) {
  return std::max(0.0, mmd_raw(a, b));
}

double snr(const Volume& volume, std::span<const std::uint8_t> foreground) {
  if (foreground.size() != volume.size()) throw std::invalid_argument("snr: mask size differs from the volume");
  double fg = 0.0, bg = 0.0;
  std::size_t nf = 0, nb = 0;
  for (std::size_t i = 0; i < volume.size(); ++i) {
    if (foreground[i]) {
      fg += volume.voxels[i];
      ++nf;
    } else {
      bg += volume.voxels[i];
      ++nb;
    }
  }
  if (nf == 0 || nb == 0) throw std::invalid_argument("snr: mask must split the volume into two non-empty parts");
  const double mb = bg / static_cast<double>(nb);
  bool constant = true;
  double first = 0.0;
  bool seen = false;
  for (std::size_t i = 0; i < volume.size() && constant; ++i) {
    if (foreground[i]) continue;
    if (!seen) first = volume.voxels[i], seen = true;
    constant = volume.voxels[i] == first;
  }
  if (constant) throw std::domain_error("snr: background has zero deviation");
  double var = 0.0;
  for (std::size_t i = 0; i < volume.size(); ++i)
    if (!foreground[i]) var += (volume.voxels[i] - mb) * (volume.voxels[i] - mb);
  const double sd = std::sqrt(var / static_cast<double>(nb));
  if (!(sd > 0.0)) throw std::domain_error("snr: background has zero deviation");
  return (fg / static_cast<double>(nf)) / sd;
}

namespace {

// Separable periodic Gaussian filter.
std::vector<double> blur(const std::vector<double>& x, const Extents& e, const std::vector<double>& kernel) {
  const auto half = static_cast<long>(kernel.size() / 2);
  std::vector<double> cur = x, next(x.size());
  const std::size_t strides[3] = {e[1] * e[2], e[2], 1};
  for (int axis = 0; axis < 3; ++axis) {
    const auto n = static_cast<long>(e[axis]);
    const std::size_t stride = strides[axis];
    for (std::size_t i = 0; i < cur.size(); ++i) {
      const auto coord = static_cast<long>((i / stride) % e[axis]);
      const std::size_t base = i - static_cast<std::size_t>(coord) * stride;
      double s = 0.0;
      for (long k = -half; k <= half; ++k) {
        const long c = ((coord + k) % n + n) % n;
        s += kernel[static_cast<std::size_t>(k + half)] * cur[base + static_cast<std::size_t>(c) * stride];
      }
      next[i] = s;
    }
    std::swap(cur, next);
  }
  return cur;
}

struct SsimTerms {
  double luminance_cs = 0.0;  // mean of l * cs
  double cs = 0.0;            // mean of cs
};

SsimTerms ssim_terms(const std::vector<double>& a, const std::vector<double>& b, const Extents& e,
                     const std::vector<double>& kernel, const MsSsimOptions& opt) {
  const std::size_t n = a.size();
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto ma = blur(a, e, kernel), mb = blur(b, e, kernel);
  const auto saa = blur(aa, e, kernel), sbb = blur(bb, e, kernel), sab = blur(ab, e, kernel);
  SsimTerms t;
  for (std::size_t i = 0; i < n; ++i) {
    const double va = saa[i] - ma[i] * ma[i];
    const double vb = sbb[i] - mb[i] * mb[i];
    const double cov = sab[i] - ma[i] * mb[i];
    const double l = (2.0 * ma[i] * mb[i] + opt.c1) / (ma[i] * ma[i] + mb[i] * mb[i] + opt.c1);
    const double cs = (2.0 * cov + opt.c2) / (va + vb + opt.c2);
    t.luminance_cs += l * cs;
    t.cs += cs;
  }
  t.luminance_cs /= static_cast<double>(n);
  t.cs /= static_cast<double>(n);
  return t;
}

std::vector<double> pool(const std::vector<double>& x, Extents& e) {
  const Extents o{e[0] / 2, e[1] / 2, e[2] / 2};
  std::vector<double> out(o[0] * o[1] * o[2], 0.0);
  for (std::size_t z = 0; z < o[0]; ++z)
    for (std::size_t y = 0; y < o[1]; ++y)
      for (std::size_t w = 0; w < o[2]; ++w) {
        double s = 0.0;
        for (std::size_t dz = 0; dz < 2; ++dz)
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx)
              s += x[((2 * z + dz) * e[1] + 2 * y + dy) * e[2] + 2 * w + dx];
        out[(z * o[1] + y) * o[2] + w] = s / 8.0;
      }
  e = o;
  return out;
}

}  // namespace

double ms_ssim(const Volume& a, const Volume& b, const MsSsimOptions& opt) {
  if (a.extents != b.extents) throw std::invalid_argument("ms_ssim: extents differ");
  const std::size_t scales = opt.weights.size();
  if (scales == 0 || opt.window % 2 == 0 || !(opt.sigma > 0.0)) throw std::invalid_argument("ms_ssim: bad options");
  const std::size_t min_extent = std::size_t{1} << (scales + 1);
  for (std::size_t s : a.extents)
    if (s < min_extent)
      throw std::invalid_argument("ms_ssim: extent " + std::to_string(s) + " too small for " + std::to_string(scales) +
                                  " scales (need >= " + std::to_string(min_extent) + ")");
  std::vector<double> kernel(opt.window);
  const double c = static_cast<double>(opt.window / 2);
  double total = 0.0;
  for (std::size_t i = 0; i < opt.window; ++i) {
    const double x = static_cast<double>(i) - c;
    total += (kernel[i] = std::exp(-x * x / (2.0 * opt.sigma * opt.sigma)));
  }
  for (auto& k : kernel) k /= total;

  std::vector<double> xa = a.voxels, xb = b.voxels;
  Extents e = a.extents;
  double result = 1.0;
  for (std::size_t s = 0; s < scales; ++s) {
    const auto t = ssim_terms(xa, xb, e, kernel, opt);
    const double term = s + 1 == scales ? t.luminance_cs : t.cs;
    result *= std::pow(std::max(term, 0.0), opt.weights[s]);
    if (s + 1 < scales) {
      Extents eb = e;
      xa = pool(xa, e);
      xb = pool(xb, eb);
    }
  }
  return result;
}

}  // namespace voxsynth
