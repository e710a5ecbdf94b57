#include "config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "csv.hpp"

namespace voxsynth {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> words(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const auto start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

std::uint64_t parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc{} || r.ptr != s.data() + s.size())
    throw std::invalid_argument("not a non-negative integer: '" + std::string(s) + "'");
  return v;
}

std::size_t parse_size(std::string_view s) { return static_cast<std::size_t>(parse_u64(s)); }

double parse_real(std::string_view s) {
  const double v = parse_double(s);
  if (!std::isfinite(v)) throw std::invalid_argument("not a finite number: '" + std::string(s) + "'");
  return v;
}

std::array<double, 3> parse_triple(std::string_view s) {
  const auto w = words(s);
  if (w.size() != 3) throw std::invalid_argument("expected 3 numbers, got " + std::to_string(w.size()));
  return {parse_real(w[0]), parse_real(w[1]), parse_real(w[2])};
}

std::string triple(const std::array<double, 3>& v) { return fmt(v[0]) + " " + fmt(v[1]) + " " + fmt(v[2]); }

std::string parse_word(std::string_view s) {
  if (s.empty() || s.find_first_of(" \t#=[]") != std::string_view::npos)
    throw std::invalid_argument("expected a single word, got '" + std::string(s) + "'");
  return std::string(s);
}

struct Field {
  std::string key;  // section.name
  std::string doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

#define VXS_REAL(KEY, MEMBER, DOC) \
  Field { KEY, DOC, [](const RunConfig& c) { return fmt(c.MEMBER); }, [](RunConfig& c, std::string_view v) { c.MEMBER = parse_real(v); } }
#define VXS_SIZE(KEY, MEMBER, DOC)                                                   \
  Field {                                                                            \
    KEY, DOC, [](const RunConfig& c) { return std::to_string(c.MEMBER); },           \
        [](RunConfig& c, std::string_view v) { c.MEMBER = parse_size(v); }           \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"run.seed", "global seed; every stage seed is derived from it",
            [](const RunConfig& c) { return std::to_string(c.seed); },
            [](RunConfig& c, std::string_view v) { c.seed = parse_u64(v); }},
      Field{"run.out", "output directory (overridden by --out, then VOXSYNTH_OUT)",
            [](const RunConfig& c) { return c.out; }, [](RunConfig& c, std::string_view v) { c.out = parse_word(v); }},
      Field{"phantom.grid", "volume extents D H W; each divisible by 4",
            [](const RunConfig& c) {
              const auto& g = c.phantom.grid;
              return std::to_string(g[0]) + " " + std::to_string(g[1]) + " " + std::to_string(g[2]);
            },
            [](RunConfig& c, std::string_view v) {
              const auto w = words(v);
              if (w.size() != 3) throw std::invalid_argument("expected 3 extents");
              c.phantom.grid = {parse_size(w[0]), parse_size(w[1]), parse_size(w[2])};
            }},
      VXS_REAL("phantom.noise_sigma", phantom.noise_sigma, "sd of additive Gaussian intensity noise"),
      VXS_REAL("phantom.background_intensity", phantom.background_intensity, "intensity outside all regions"),
      VXS_REAL("phantom.anatomical_sd", phantom.anatomical_sd,
               "relative sd of each subject's per-region radius scale, in [0, 0.2)"),
      VXS_SIZE("cohort.train_count", train_count, "phantoms used to train the codec, GLM and denoiser"),
      VXS_REAL("cohort.sex_balance", sex_balance, "fraction of every generated cohort with sex = 1"),
      VXS_SIZE("codec.codebook_size", codec.codebook_size, "codebook entries N_C, entry 0 pinned to zero"),
      VXS_SIZE("codec.latent_dim", codec.latent_dim, "latent channels n_D (even)"),
      VXS_SIZE("codec.hidden_channels", codec.hidden_channels, "channels after the first encoder stage"),
      VXS_REAL("codec.beta", codec.beta, "commitment loss weight"),
      VXS_REAL("codec.learning_rate", codec.learning_rate, "Adam learning rate"),
      VXS_SIZE("codec.iterations", codec.iterations, "training iterations, one volume each"),
      VXS_REAL("codec.leak", codec.leak, "leaky ReLU negative slope"),
      VXS_SIZE("codec.restart_interval", codec.restart_interval,
               "iterations between re-seeding unused codebook entries; 0 disables"),
      VXS_SIZE("diffusion.subcodes", diffusion.subcodes, "sub-codes N_I along latent depth"),
      VXS_SIZE("diffusion.steps", diffusion.schedule.steps, "diffusion steps T"),
      Field{"diffusion.schedule", "masking schedule: linear or factorial",
            [](const RunConfig& c) { return to_string(c.diffusion.schedule.kind); },
            [](RunConfig& c, std::string_view v) { c.diffusion.schedule.kind = parse_schedule_kind(v); }},
      Field{"diffusion.denoiser", "denoiser model: tabular or neural",
            [](const RunConfig& c) { return c.diffusion.denoiser; },
            [](RunConfig& c, std::string_view v) { c.diffusion.denoiser = parse_word(v); }},
      VXS_REAL("diffusion.smoothing", diffusion.smoothing, "tabular denoiser additive count smoothing"),
      VXS_SIZE("diffusion.epochs", diffusion.epochs, "training epochs over the residual codes"),
      VXS_SIZE("diffusion.embed", diffusion.embed, "neural denoiser embedding width"),
      VXS_SIZE("diffusion.hidden", diffusion.hidden, "neural denoiser feed-forward width"),
      VXS_REAL("diffusion.learning_rate", diffusion.learning_rate, "neural denoiser Adam learning rate"),
      VXS_SIZE("synth.count", synth.count, "synthetic volumes generated by the synth command"),
      VXS_REAL("synth.age_low", synth.age_low, "lowest synthetic age, years"),
      VXS_REAL("synth.age_high", synth.age_high, "highest synthetic age, years"),
      VXS_REAL("eval.threshold", eval.threshold, "intensity threshold for region volume measurement"),
      VXS_SIZE("eval.real_count", eval.real_count, "real phantoms compared against the synthetic set"),
      VXS_SIZE("eval.augment_real_count", eval.augment_real_count,
               "real phantoms in the age-prediction experiment, split across folds"),
      VXS_SIZE("eval.folds", eval.folds, "cross-validation folds of the age-prediction experiment"),
      Field{"eval.pool_sizes", "synthetic pool sizes added to each training fold; may be empty",
            [](const RunConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.eval.pool_sizes.size(); ++i)
                s += (i ? " " : "") + std::to_string(c.eval.pool_sizes[i]);
              return s;
            },
            [](RunConfig& c, std::string_view v) {
              c.eval.pool_sizes.clear();
              for (auto w : words(v)) c.eval.pool_sizes.push_back(parse_size(w));
            }},
      VXS_REAL("eval.augment_age_low", eval.augment_age_low, "lowest age of the age-prediction cohorts, years"),
      VXS_REAL("eval.augment_age_high", eval.augment_age_high, "highest age of the age-prediction cohorts, years"),
      VXS_REAL("eval.accelerated_factor", eval.accelerated_factor,
               "age coefficient multiplier of the accelerated-aging cohort"),
      VXS_SIZE("eval.accelerated_count", eval.accelerated_count, "accelerated-aging phantoms"),
      VXS_SIZE("eval.heldout_count", eval.heldout_count, "held-out normal phantoms"),
      VXS_REAL("eval.ridge_lambda", eval.ridge_lambda, "ridge penalty of the age regressor"),
  };
  return table;
}

#undef VXS_REAL
#undef VXS_SIZE

const std::vector<std::string> kRegionKeys = {"center", "radii", "age_coeff", "sex_offset", "intensity"};

std::array<double, 3>& region_triple(Region& r, std::string_view key) {
  if (key == "center") return r.center;
  if (key == "radii") return r.radii;
  if (key == "age_coeff") return r.age_coeff;
  return r.sex_offset;
}

std::string region_get(const Region& r, std::string_view key) {
  if (key == "intensity") return fmt(r.intensity);
  return triple(region_triple(const_cast<Region&>(r), key));
}

void region_set(Region& r, std::string_view key, std::string_view value) {
  if (key == "intensity")
    r.intensity = parse_real(value);
  else
    region_triple(r, key) = parse_triple(value);
}

// "region.N.key" -> (N, key); N is 1-based.
bool split_region_key(std::string_view dotted, std::size_t& index, std::string& key) {
  if (dotted.substr(0, 7) != "region.") return false;
  const auto rest = dotted.substr(7);
  const auto dot = rest.find('.');
  if (dot == std::string_view::npos) throw ConfigError("region key needs the form region.N.key: " + std::string(dotted));
  index = parse_size(rest.substr(0, dot));
  key = std::string(rest.substr(dot + 1));
  if (index == 0) throw ConfigError("region numbers start at 1: " + std::string(dotted));
  if (std::find(kRegionKeys.begin(), kRegionKeys.end(), key) == kRegionKeys.end())
    throw ConfigError("unknown region key: " + std::string(dotted));
  return true;
}

const Field* find_field(std::string_view dotted) {
  for (const auto& f : fields())
    if (f.key == dotted) return &f;
  return nullptr;
}

}  // namespace

void RunConfig::validate() const {
  try {
    phantom.validate();
  } catch (const PhantomError& e) {
    throw ConfigError(e.what());
  }
  for (auto e : phantom.grid)
    if (e % kDownsample != 0) throw ConfigError("phantom.grid: extents must be divisible by 4");
  if (train_count < 3) throw ConfigError("cohort.train_count: need at least 3 phantoms");
  if (!(sex_balance >= 0.0 && sex_balance <= 1.0)) throw ConfigError("cohort.sex_balance: must lie in [0,1]");
  if (codec.codebook_size < 2) throw ConfigError("codec.codebook_size: need at least 2 entries");
  if (codec.latent_dim < 2 || codec.latent_dim % 2) throw ConfigError("codec.latent_dim: must be even and >= 2");
  if (codec.hidden_channels < 1) throw ConfigError("codec.hidden_channels: must be >= 1");
  if (!(codec.beta >= 0.0)) throw ConfigError("codec.beta: must be >= 0");
  if (!(codec.learning_rate > 0.0)) throw ConfigError("codec.learning_rate: must be > 0");
  if (!(codec.leak >= 0.0 && codec.leak < 1.0)) throw ConfigError("codec.leak: must lie in [0,1)");
  const std::size_t depth = phantom.grid[0] / kDownsample;
  if (diffusion.subcodes < 1 || diffusion.subcodes > depth)
    throw ConfigError("diffusion.subcodes: must lie in [1," + std::to_string(depth) + "]");
  if (diffusion.schedule.steps < 1) throw ConfigError("diffusion.steps: must be >= 1");
  if (diffusion.schedule.kind == ScheduleKind::factorial && diffusion.schedule.steps > 20)
    throw ConfigError("diffusion.steps: factorial schedule supports at most 20 steps");
  if (diffusion.denoiser != "tabular" && diffusion.denoiser != "neural")
    throw ConfigError("diffusion.denoiser: expected tabular or neural, got " + diffusion.denoiser);
  if (!(diffusion.smoothing > 0.0)) throw ConfigError("diffusion.smoothing: must be > 0");
  if (diffusion.embed < 1 || diffusion.hidden < 1) throw ConfigError("diffusion.embed/hidden: must be >= 1");
  if (!(diffusion.learning_rate > 0.0)) throw ConfigError("diffusion.learning_rate: must be > 0");
  auto check_ages = [](const char* what, double lo, double hi) {
    if (!(lo >= kAgeMinYears && lo < hi && hi <= kAgeMaxYears))
      throw ConfigError(std::string(what) + ": ages must satisfy 13 <= low < high <= 91");
  };
  if (synth.count < 2) throw ConfigError("synth.count: must be >= 2");
  check_ages("synth.age_low/age_high", synth.age_low, synth.age_high);
  if (!(eval.threshold > 0.0 && eval.threshold < 1.0)) throw ConfigError("eval.threshold: must lie in (0,1)");
  if (eval.real_count < 2) throw ConfigError("eval.real_count: must be >= 2");
  if (eval.folds < 2) throw ConfigError("eval.folds: must be >= 2");
  if (eval.augment_real_count < 2 * eval.folds)
    throw ConfigError("eval.augment_real_count: need at least two subjects per fold");
  check_ages("eval.augment_age_low/augment_age_high", eval.augment_age_low, eval.augment_age_high);
  if (!(eval.accelerated_factor > 0.0)) throw ConfigError("eval.accelerated_factor: must be > 0");
  if (eval.accelerated_count < 2 || eval.heldout_count < 2)
    throw ConfigError("eval.accelerated_count/heldout_count: must be >= 2");
  if (!(eval.ridge_lambda >= 0.0)) throw ConfigError("eval.ridge_lambda: must be >= 0");
  for (std::size_t i = 1; i < eval.pool_sizes.size(); ++i)
    if (eval.pool_sizes[i] <= eval.pool_sizes[i - 1]) throw ConfigError("eval.pool_sizes: must be strictly increasing");
}

void set_config_value(RunConfig& config, std::string_view dotted, std::string_view value) {
  value = trim(value);
  try {
    std::size_t index = 0;
    std::string key;
    if (split_region_key(dotted, index, key)) {
      if (index > config.phantom.regions.size())
        throw ConfigError("region " + std::to_string(index) + " does not exist (" +
                          std::to_string(config.phantom.regions.size()) + " regions)");
      region_set(config.phantom.regions[index - 1], key, value);
      return;
    }
    const Field* f = find_field(dotted);
    if (!f) throw ConfigError("unknown key: " + std::string(dotted));
    f->set(config, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string(dotted) + ": " + e.what());
  }
}

std::string get_config_value(const RunConfig& config, std::string_view dotted) {
  std::size_t index = 0;
  std::string key;
  if (split_region_key(dotted, index, key)) {
    if (index > config.phantom.regions.size()) throw ConfigError("region " + std::to_string(index) + " does not exist");
    return region_get(config.phantom.regions[index - 1], key);
  }
  const Field* f = find_field(dotted);
  if (!f) throw ConfigError("unknown key: " + std::string(dotted));
  return f->get(config);
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override must look like section.key=value: " + std::string(assignment));
  set_config_value(config, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::string section;
  std::size_t line_no = 0;
  std::map<std::size_t, Region> regions;
  std::map<std::size_t, std::vector<std::string>> region_keys_seen;
  std::vector<std::string> seen;
  std::size_t region_index = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("unterminated section header");
        section = std::string(trim(line.substr(1, line.size() - 2)));
        region_index = 0;
        if (section.rfind("region.", 0) == 0) {
          region_index = parse_size(section.substr(7));
          if (region_index == 0) throw ConfigError("region numbers start at 1");
          if (regions.count(region_index)) throw ConfigError("duplicate section [" + section + "]");
          regions[region_index] = Region{};
        } else {
          static const std::vector<std::string> known = {"run", "phantom", "cohort", "codec", "diffusion", "synth", "eval"};
          if (std::find(known.begin(), known.end(), section) == known.end())
            throw ConfigError("unknown section [" + section + "]");
        }
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError("expected key = value");
      const auto key = std::string(trim(line.substr(0, eq)));
      const auto value = trim(line.substr(eq + 1));
      if (section.empty()) throw ConfigError("key '" + key + "' appears before any section");
      if (region_index) {
        if (std::find(kRegionKeys.begin(), kRegionKeys.end(), key) == kRegionKeys.end())
          throw ConfigError("unknown region key: " + key);
        auto& keys = region_keys_seen[region_index];
        if (std::find(keys.begin(), keys.end(), key) != keys.end()) throw ConfigError("duplicate key " + key);
        keys.push_back(key);
        region_set(regions[region_index], key, value);
        continue;
      }
      const auto dotted = section + "." + key;
      if (std::find(seen.begin(), seen.end(), dotted) != seen.end()) throw ConfigError("duplicate key " + dotted);
      seen.push_back(dotted);
      set_config_value(config, dotted, value);
    } catch (const ConfigError& e) {
      if (e.line()) throw;
      throw ConfigError(e.what(), line_no);
    } catch (const std::exception& e) {
      throw ConfigError(e.what(), line_no);
    }
  }
  if (!regions.empty()) {
    config.phantom.regions.clear();
    std::size_t expect = 1;
    for (auto& [index, region] : regions) {
      if (index != expect) throw ConfigError("region sections must be numbered 1..K without gaps; missing region." + std::to_string(expect));
      if (region_keys_seen[index].size() != kRegionKeys.size())
        throw ConfigError("region." + std::to_string(index) + " must set center, radii, age_coeff, sex_offset and intensity");
      config.phantom.regions.push_back(region);
      ++expect;
    }
  }
  config.validate();
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const auto sec = f.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    const auto value = f.get(config);
    out += f.key.substr(dot + 1) + " =" + (value.empty() ? "" : " " + value) + "\n";
  }
  for (std::size_t k = 0; k < config.phantom.regions.size(); ++k) {
    out += "\n[region." + std::to_string(k + 1) + "]\n";
    for (const auto& key : kRegionKeys) out += key + " = " + region_get(config.phantom.regions[k], key) + "\n";
  }
  return out;
}

std::vector<ConfigKeyDoc> config_key_docs() {
  std::vector<ConfigKeyDoc> out;
  for (const auto& f : fields()) out.push_back({f.key, f.doc});
  out.push_back({"region.N.center", "region N centre, voxel coordinates D H W"});
  out.push_back({"region.N.radii", "region N base ellipsoid radii, voxels"});
  out.push_back({"region.N.age_coeff", "region N radius change per unit normalized age (13 -> 0, 91 -> 1)"});
  out.push_back({"region.N.sex_offset", "region N radius change when sex = 1"});
  out.push_back({"region.N.intensity", "region N intensity in (0,1]"});
  return out;
}

}  // namespace voxsynth
