#pragma once

// Command orchestration: each stage reads its upstream artifacts from the
// output directory, writes its own, and records a run manifest.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "config.hpp"

namespace voxsynth {

class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::string kind, const std::string& msg) : std::runtime_error(msg), kind_(std::move(kind)) {}
  /// Short machine-readable category, e.g. "missing_artifact".
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

inline const std::vector<std::string> kCommands = {"train-codec", "fit-glm", "train-diffusion", "synth",
                                                   "eval",        "augment-exp", "pipeline"};

/// Artifact file names inside the output directory.
namespace artifact {
inline constexpr const char* kCodec = "codec.vxs";
inline constexpr const char* kGlm = "glm.vxs";
inline constexpr const char* kDenoiser = "denoiser.vxs";
inline constexpr const char* kSynth = "synth.vxs";
}  // namespace artifact

/// Stage seeds fanned out from the global seed.
std::map<std::string, std::uint64_t> stage_seeds(std::uint64_t seed);

using Logger = std::function<void(const std::string&)>;

struct RunSummary {
  std::vector<std::string> artifacts;  // files written, relative to the output directory
  double wall_seconds = 0.0;
};

/// Runs `command` against `out`. Throws ConfigError for bad configs and
/// PipelineError for runtime failures. Holds `out/.voxsynth.lock` while it
/// runs.
RunSummary run_command(const std::string& command, const RunConfig& config, const std::filesystem::path& out,
                       const Logger& log = {});

/// SHA-256 of the canonical config text, lowercase hex.
std::string config_hash(const RunConfig& config);

}  // namespace voxsynth
