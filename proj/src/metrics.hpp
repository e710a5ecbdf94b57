#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "volume.hpp"

namespace voxsynth {

/// Unbiased squared MMD with an RBF kernel whose bandwidth is the median
/// pairwise distance over the pooled set. Each set needs >= 2 elements.
double mmd_raw(std::span<const std::vector<double>> a, std::span<const std::vector<double>> b);
/// mmd_raw clamped at 0.
double mmd(std::span<const std::vector<double>> a, std::span<const std::vector<double>> b);

/// Foreground mean over background standard deviation (population form).
double snr(const Volume& volume, std::span<const std::uint8_t> foreground);

struct MsSsimOptions {
  std::size_t window = 7;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
  std::vector<double> weights{0.25, 0.35, 0.40};
};

/// 3D multi-scale SSIM with periodic boundaries and 2x2x2 average pooling
/// between scales. Negative contrast-structure terms are clamped to 0.
double ms_ssim(const Volume& a, const Volume& b, const MsSsimOptions& opt = {});

}  // namespace voxsynth
