#pragma once

// Run configuration: `key = value` lines grouped under `[section]` headers.
// Serialization is canonical, so parse(serialize(c)) == c and a serialized
// config echoes back byte-identically.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "codec.hpp"
#include "maskdiff.hpp"
#include "phantom.hpp"

namespace voxsynth {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& msg, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct DiffusionConfig {
  std::size_t subcodes = 2;  // N_I
  MaskSchedule schedule{ScheduleKind::linear, 16};
  std::string denoiser = "tabular";
  double smoothing = 0.01;
  std::size_t epochs = 1;
  std::size_t embed = 16;
  std::size_t hidden = 32;
  double learning_rate = 1e-2;
  friend bool operator==(const DiffusionConfig&, const DiffusionConfig&) = default;
};

struct SynthConfig {
  std::size_t count = 300;
  double age_low = kAgeMinYears;
  double age_high = kAgeMaxYears;
  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

struct EvalConfig {
  double threshold = 0.4;
  std::size_t real_count = 300;
  std::size_t augment_real_count = 40;
  std::size_t folds = 2;
  std::vector<std::size_t> pool_sizes{0, 50, 200, 500};
  double augment_age_low = 55.0;
  double augment_age_high = 80.0;
  double accelerated_factor = 2.0;
  std::size_t accelerated_count = 100;
  std::size_t heldout_count = 100;
  double ridge_lambda = 1.0;
  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct RunConfig {
  std::uint64_t seed = 7;
  std::string out = "voxsynth-out";
  PhantomSpec phantom = PhantomSpec::default_spec();
  std::size_t train_count = 200;
  double sex_balance = 0.5;
  CodecConfig codec;
  DiffusionConfig diffusion;
  SynthConfig synth;
  EvalConfig eval;

  /// Throws ConfigError naming the first out-of-range field.
  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& config);

/// `section.key=value`; region keys are `region.N.key`.
void apply_override(RunConfig& config, std::string_view assignment);
void set_config_value(RunConfig& config, std::string_view dotted_key, std::string_view value);
std::string get_config_value(const RunConfig& config, std::string_view dotted_key);

struct ConfigKeyDoc {
  std::string key;
  std::string doc;
};
/// Every accepted key with a one-line description.
std::vector<ConfigKeyDoc> config_key_docs();

}  // namespace voxsynth
