#pragma once

// Procedural ellipsoid phantoms whose region geometry responds linearly to
// age and sex. Each phantom carries its ground-truth label grid.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "volume.hpp"

namespace voxsynth {

inline constexpr double kAgeMinYears = 13.0;
inline constexpr double kAgeMaxYears = 91.0;

/// Design vector [bias, normalized age, sex].
struct Metadata {
  double bias = 1.0;
  double age_norm = 0.0;
  double sex = 0.0;

  static Metadata from_years(double age_years, double sex);
  double age_years() const { return kAgeMinYears + age_norm * (kAgeMaxYears - kAgeMinYears); }
  std::array<double, 3> vector() const { return {bias, age_norm, sex}; }
  void validate() const;

  friend bool operator==(const Metadata&, const Metadata&) = default;
};

struct Region {
  std::array<double, 3> center{};      // voxel coordinates (d, h, w)
  std::array<double, 3> radii{};       // base radii, voxels
  std::array<double, 3> age_coeff{};   // voxels per unit age_norm
  std::array<double, 3> sex_offset{};  // voxels added when sex == 1
  double intensity = 0.5;

  /// Max over min base radius; proxy for geometric complexity.
  double complexity() const;
  std::array<double, 3> radii_at(const Metadata& m) const;

  friend bool operator==(const Region&, const Region&) = default;
};

class PhantomError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PhantomSpec {
  Extents grid{32, 32, 32};
  std::vector<Region> regions;
  double noise_sigma = 0.02;
  double background_intensity = 0.05;
  /// Relative sd of a per-subject, per-region isotropic radius scale,
  /// truncated at 3 sd.
  double anatomical_sd = 0.02;

  /// Six regions: shrinking, growing, and age-independent responses.
  static PhantomSpec default_spec();

  /// Copy with every age coefficient multiplied by `factor`.
  PhantomSpec with_age_scaled(double factor) const;

  /// Throws PhantomError naming the first region that leaves the grid at any
  /// extreme of metadata space, or any out-of-range scalar.
  void validate() const;

  std::size_t region_count() const { return regions.size(); }

  friend bool operator==(const PhantomSpec&, const PhantomSpec&) = default;
};

struct LabeledVolume {
  Volume volume;
  std::vector<std::uint8_t> labels;  // 0 = background, k = region k (1-based)
  Metadata metadata;
  std::vector<double> region_volumes;  // voxel counts per region
  std::vector<double> region_scales;   // subject-specific radius factors
  std::uint64_t seed = 0;
};

LabeledVolume generate_phantom(const PhantomSpec& spec, const Metadata& metadata, std::uint64_t seed);

struct CohortOptions {
  std::size_t count = 200;
  double age_low = kAgeMinYears;
  double age_high = kAgeMaxYears;
  double sex_balance = 0.5;
};

std::vector<LabeledVolume> generate_cohort(const PhantomSpec& spec, const CohortOptions& opt, std::uint64_t seed);

/// Metadata drawn the way generate_cohort draws it, without rendering.
std::vector<Metadata> draw_cohort_metadata(const CohortOptions& opt, std::uint64_t seed);

/// Per-region count of voxels above `threshold` inside the metadata-driven
/// template ellipsoid dilated by two voxels.
std::vector<double> measure_regions_via_template(const Volume& volume, const PhantomSpec& spec, const Metadata& metadata,
                                                 double threshold);

/// Union of the undilated metadata-driven template ellipsoids.
std::vector<std::uint8_t> template_mask(const PhantomSpec& spec, const Metadata& metadata);

}  // namespace voxsynth
