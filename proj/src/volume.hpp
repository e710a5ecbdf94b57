#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace voxsynth {

using Extents = std::array<std::size_t, 3>;

/// Scalar grid in depth-height-width order; intensities nominally in [0,1].
struct Volume {
  Extents extents{0, 0, 0};
  std::vector<double> voxels;

  Volume() = default;
  explicit Volume(Extents e, double fill = 0.0) : extents(e), voxels(e[0] * e[1] * e[2], fill) {}

  std::size_t size() const { return voxels.size(); }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const {
    return (z * extents[1] + y) * extents[2] + x;
  }
  double& at(std::size_t z, std::size_t y, std::size_t x) { return voxels[index(z, y, x)]; }
  double at(std::size_t z, std::size_t y, std::size_t x) const { return voxels[index(z, y, x)]; }

  friend bool operator==(const Volume&, const Volume&) = default;
};

}  // namespace voxsynth
