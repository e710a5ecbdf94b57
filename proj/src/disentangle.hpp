#pragma once

// Least-squares split of quantized encodings into a metadata component P*m
// and a residual, plus conversion of residuals to integer R-codes.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "codec.hpp"
#include "phantom.hpp"

namespace voxsynth {

class GlmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kMetadataLength = 3;

struct GLMModel {
  /// Row-major [latent_size, 3]; column order matches Metadata::vector().
  std::vector<double> P;
  std::size_t latent_size = 0;
  /// Age normalization used for the design matrix, in years.
  double age_min_years = kAgeMinYears;
  double age_max_years = kAgeMaxYears;

  /// P*m as a flat latent vector.
  std::vector<double> project(const std::array<double, 3>& m) const;

  friend bool operator==(const GLMModel&, const GLMModel&) = default;
};

/// Closed-form least squares over all samples: P = (Q^T M)(M^T M)^-1.
/// Throws GlmError naming the first column of M that is linearly dependent
/// on the preceding ones.
GLMModel fit_glm(std::span<const std::vector<double>> encodings, std::span<const Metadata> metadata);

/// Flattened residual r = q - P*m, nudged by at most one ulp so that P*m + r
/// reproduces q exactly whenever a double r allows it, and otherwise misses
/// by the spacing of doubles near max(|q|, |P*m|).
LatentGrid split(const QuantizedGrid& q, const std::array<double, 3>& m, const GLMModel& glm);
LatentGrid split(const QuantizedGrid& q, const Metadata& m, const GLMModel& glm);

/// Integer code of a residual: one (primary, residual) index pair per
/// half-vector, laid out as [2, d, h, w, 2]. MASK is codebook_size.
struct RCode {
  std::array<std::size_t, 4> grid{0, 0, 0, 0};  // 2, d, h, w
  std::vector<std::uint32_t> tokens;             // grid cells x 2

  std::size_t cells() const { return grid[0] * grid[1] * grid[2] * grid[3]; }
  bool contains(std::uint32_t token) const;

  friend bool operator==(const RCode&, const RCode&) = default;
};

RCode residual_to_rcode(const LatentGrid& r, const Codebook& codebook);

/// Sum of codebook entry pairs, stacked back into a latent grid.
LatentGrid dequantize(const RCode& code, const Codebook& codebook);

/// dequantize(code) + P*m. Throws GlmError if any token is MASK.
QuantizedGrid recombine(const RCode& code, const Metadata& m, const GLMModel& glm, const Codebook& codebook);

}  // namespace voxsynth
