#pragma once

// Sampling new volumes from the trained stack and auditing their distance to
// the training latents.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "codec.hpp"
#include "disentangle.hpp"
#include "maskdiff.hpp"
#include "phantom.hpp"
#include "stats.hpp"

namespace voxsynth {

struct SynthRequest {
  std::size_t count = 1;
  /// Random metadata when empty.
  std::optional<Metadata> fixed;
  double age_low = kAgeMinYears;
  double age_high = kAgeMaxYears;
  std::uint64_t seed = 0;
};

struct SynthModels {
  const CodecParams* codec = nullptr;
  const GLMModel* glm = nullptr;
  const Denoiser* denoiser = nullptr;
  SubcodePartition partition;
  MaskSchedule schedule;
};

struct SynthResult {
  std::vector<Volume> volumes;
  std::vector<Metadata> metadata;
  std::vector<RCode> rcodes;
  std::vector<std::vector<double>> latents;  // flattened quantized encodings
};

/// Code grid {2, d, h, w} for the codec's latent extents.
std::array<std::size_t, 4> rcode_grid(const CodecParams& codec);

SynthResult synthesize(const SynthRequest& req, const SynthModels& models);

/// Holds the subject's residual fixed and swaps its metadata.
Volume counterfactual(const LabeledVolume& base, const Metadata& new_metadata, const SynthModels& models);

struct NoveltyReport {
  std::vector<double> distances;  // per synthetic sample
  std::vector<std::size_t> nearest;
  double mean = 0.0;
  double sd = 0.0;
  /// One-sample t-test of the distances against 0; NaN when undefined.
  TestResult test{};
};

NoveltyReport novelty_check(std::span<const std::vector<double>> synthetic,
                            std::span<const std::vector<double>> training);

}  // namespace voxsynth
