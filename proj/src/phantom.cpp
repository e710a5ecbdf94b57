#include "phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "rng.hpp"

namespace voxsynth {

Metadata Metadata::from_years(double age_years, double sex) {
  Metadata m;
  m.age_norm = (age_years - kAgeMinYears) / (kAgeMaxYears - kAgeMinYears);
  m.sex = sex;
  m.validate();
  return m;
}

void Metadata::validate() const {
  if (bias != 1.0) throw std::invalid_argument("metadata: bias must be 1");
  if (!(age_norm >= 0.0 && age_norm <= 1.0))
    throw std::invalid_argument("metadata: age_norm " + std::to_string(age_norm) + " outside [0,1]");
  if (sex != 0.0 && sex != 1.0) throw std::invalid_argument("metadata: sex must be 0 or 1");
}

double Region::complexity() const {
  const auto [mn, mx] = std::minmax_element(radii.begin(), radii.end());
  return *mx / *mn;
}

std::array<double, 3> Region::radii_at(const Metadata& m) const {
  std::array<double, 3> r{};
  for (int a = 0; a < 3; ++a) r[a] = radii[a] + age_coeff[a] * m.age_norm + sex_offset[a] * m.sex;
  return r;
}

PhantomSpec PhantomSpec::default_spec() {
  PhantomSpec s;
  s.regions = {
      {{15.5, 8.5, 5.5}, {5.0, 4.0, 3.0}, {-1.0, -0.8, -0.6}, {0.3, 0.2, 0.2}, 0.80},
      {{15.5, 8.5, 15.5}, {3.0, 3.0, 3.0}, {-0.5, -0.5, -0.5}, {0.3, 0.3, 0.3}, 0.70},
      {{15.5, 8.5, 25.5}, {6.0, 4.5, 2.5}, {1.0, 0.6, 0.3}, {0.0, 0.0, 0.0}, 0.75},
      {{15.5, 23.5, 5.5}, {4.0, 3.5, 2.8}, {0.0, 0.0, 0.0}, {0.4, 0.4, 0.4}, 0.72},
      {{15.5, 23.5, 15.5}, {7.0, 4.0, 3.0}, {-1.5, -0.6, -0.4}, {0.5, 0.3, 0.2}, 0.85},
      {{15.5, 23.5, 25.5}, {3.5, 3.0, 2.5}, {0.7, 0.6, 0.5}, {0.1, 0.1, 0.1}, 0.78},
  };
  return s;
}

PhantomSpec PhantomSpec::with_age_scaled(double factor) const {
  PhantomSpec s = *this;
  for (auto& r : s.regions)
    for (auto& c : r.age_coeff) c *= factor;
  return s;
}

void PhantomSpec::validate() const {
  if (grid[0] == 0 || grid[1] == 0 || grid[2] == 0) throw PhantomError("phantom: empty grid");
  if (regions.empty() || regions.size() > 255) throw PhantomError("phantom: region count must be in [1,255]");
  if (!(noise_sigma >= 0.0)) throw PhantomError("phantom: noise_sigma must be >= 0");
  if (!(background_intensity >= 0.0 && background_intensity < 1.0))
    throw PhantomError("phantom: background_intensity must lie in [0,1)");
  if (!(anatomical_sd >= 0.0 && anatomical_sd < 0.2)) throw PhantomError("phantom: anatomical_sd must lie in [0,0.2)");
  const double widest = 1.0 + 3.0 * anatomical_sd;
  for (std::size_t k = 0; k < regions.size(); ++k) {
    const Region& r = regions[k];
    if (!(r.intensity > 0.0 && r.intensity <= 1.0))
      throw PhantomError("phantom: region " + std::to_string(k + 1) + " intensity outside (0,1]");
    for (double age : {0.0, 1.0}) {
      for (double sex : {0.0, 1.0}) {
        Metadata m;
        m.age_norm = age;
        m.sex = sex;
        const auto radii = r.radii_at(m);
        for (int a = 0; a < 3; ++a) {
          const double lo = r.center[a] - radii[a] * widest;
          const double hi = r.center[a] + radii[a] * widest;
          if (!(radii[a] > 0.0) || lo < 0.0 || hi > static_cast<double>(grid[a] - 1)) {
            std::ostringstream os;
            os << "phantom: region " << k + 1 << " escapes the grid on axis " << a << " at age_norm=" << age
               << " sex=" << sex;
            throw PhantomError(os.str());
          }
        }
      }
    }
  }
}

namespace {

template <class Fn>
void for_each_in_ellipsoid(const Extents& grid, const std::array<double, 3>& c, const std::array<double, 3>& r, Fn fn) {
  std::array<std::size_t, 3> lo{}, hi{};
  for (int a = 0; a < 3; ++a) {
    lo[a] = static_cast<std::size_t>(std::max(0.0, std::ceil(c[a] - r[a])));
    hi[a] = static_cast<std::size_t>(std::clamp(std::floor(c[a] + r[a]), -1.0, static_cast<double>(grid[a] - 1)) + 1);
  }
  for (std::size_t z = lo[0]; z < hi[0]; ++z) {
    const double dz = (static_cast<double>(z) - c[0]) / r[0];
    for (std::size_t y = lo[1]; y < hi[1]; ++y) {
      const double dy = (static_cast<double>(y) - c[1]) / r[1];
      for (std::size_t x = lo[2]; x < hi[2]; ++x) {
        const double dx = (static_cast<double>(x) - c[2]) / r[2];
        if (dz * dz + dy * dy + dx * dx <= 1.0) fn(z, y, x);
      }
    }
  }
}

}  // namespace

LabeledVolume generate_phantom(const PhantomSpec& spec, const Metadata& metadata, std::uint64_t seed) {
  spec.validate();
  metadata.validate();
  LabeledVolume out;
  out.metadata = metadata;
  out.seed = seed;
  out.volume = Volume(spec.grid, spec.background_intensity);
  out.labels.assign(out.volume.size(), 0);
  Rng anatomy(derive_seed(seed, "anatomy"));
  std::normal_distribution<double> jitter(0.0, 1.0);
  for (std::size_t k = 0; k < spec.regions.size(); ++k) {
    const Region& r = spec.regions[k];
    const double scale = 1.0 + spec.anatomical_sd * std::clamp(jitter(anatomy), -3.0, 3.0);
    out.region_scales.push_back(scale);
    auto radii = r.radii_at(metadata);
    for (auto& x : radii) x *= scale;
    for_each_in_ellipsoid(spec.grid, r.center, radii, [&](std::size_t z, std::size_t y, std::size_t x) {
      out.labels[out.volume.index(z, y, x)] = static_cast<std::uint8_t>(k + 1);
    });
  }
  out.region_volumes.assign(spec.regions.size(), 0.0);
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < out.volume.size(); ++i) {
    const auto label = out.labels[i];
    double v = label ? spec.regions[label - 1].intensity : spec.background_intensity;
    if (label) out.region_volumes[label - 1] += 1.0;
    if (spec.noise_sigma > 0.0) v += spec.noise_sigma * noise(rng);
    out.volume.voxels[i] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

std::vector<Metadata> draw_cohort_metadata(const CohortOptions& opt, std::uint64_t seed) {
  if (opt.count < 2) throw std::invalid_argument("cohort: count must be >= 2");
  if (!(opt.age_low >= kAgeMinYears && opt.age_low < opt.age_high && opt.age_high <= kAgeMaxYears))
    throw std::invalid_argument("cohort: ages must satisfy 13 <= low < high <= 91");
  if (!(opt.sex_balance >= 0.0 && opt.sex_balance <= 1.0))
    throw std::invalid_argument("cohort: sex_balance must lie in [0,1]");
  Rng rng(seed);
  std::uniform_real_distribution<double> age(opt.age_low, opt.age_high);
  const auto n_female = static_cast<std::size_t>(std::llround(static_cast<double>(opt.count) * opt.sex_balance));
  std::vector<double> sexes(opt.count, 0.0);
  std::fill_n(sexes.begin(), n_female, 1.0);
  std::shuffle(sexes.begin(), sexes.end(), rng);
  std::vector<Metadata> out;
  out.reserve(opt.count);
  for (std::size_t i = 0; i < opt.count; ++i) {
    const double years = std::min(age(rng), opt.age_high);
    out.push_back(Metadata::from_years(years, sexes[i]));
  }
  return out;
}

std::vector<LabeledVolume> generate_cohort(const PhantomSpec& spec, const CohortOptions& opt, std::uint64_t seed) {
  const auto meta = draw_cohort_metadata(opt, seed);
  std::vector<LabeledVolume> out;
  out.reserve(meta.size());
  for (std::size_t i = 0; i < meta.size(); ++i) out.push_back(generate_phantom(spec, meta[i], derive_seed(seed, i)));
  return out;
}

std::vector<double> measure_regions_via_template(const Volume& volume, const PhantomSpec& spec,
                                                 const Metadata& metadata, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("measure: threshold must lie in (0,1)");
  if (volume.extents != spec.grid) throw std::invalid_argument("measure: volume extents differ from the phantom grid");
  std::vector<double> out(spec.regions.size(), 0.0);
  for (std::size_t k = 0; k < spec.regions.size(); ++k) {
    auto radii = spec.regions[k].radii_at(metadata);
    for (auto& r : radii) r = std::max(r, 0.0) + 2.0;
    for_each_in_ellipsoid(spec.grid, spec.regions[k].center, radii, [&](std::size_t z, std::size_t y, std::size_t x) {
      if (volume.at(z, y, x) > threshold) out[k] += 1.0;
    });
  }
  return out;
}

std::vector<std::uint8_t> template_mask(const PhantomSpec& spec, const Metadata& metadata) {
  std::vector<std::uint8_t> mask(spec.grid[0] * spec.grid[1] * spec.grid[2], 0);
  for (const auto& r : spec.regions) {
    auto radii = r.radii_at(metadata);
    for (auto& x : radii) x = std::max(x, 0.0);
    for_each_in_ellipsoid(spec.grid, r.center, radii, [&](std::size_t z, std::size_t y, std::size_t x) {
      mask[(z * spec.grid[1] + y) * spec.grid[2] + x] = 1;
    });
  }
  return mask;
}

}  // namespace voxsynth
