#include "pipeline.hpp"

#include <fcntl.h>
#include <openssl/evp.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "codec.hpp"
#include "container.hpp"
#include "csv.hpp"
#include "disentangle.hpp"
#include "evaluation.hpp"
#include "maskdiff.hpp"
#include "metrics.hpp"
#include "persist.hpp"
#include "rng.hpp"
#include "svg.hpp"
#include "synth.hpp"

namespace voxsynth {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr const char* kLockName = ".voxsynth.lock";
constexpr std::size_t kMetricSamples = 100;

class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / kLockName) {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw PipelineError("locked", "output directory is locked by another run (remove " + path_.string() +
                                        " if no run is active)");
    const auto pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto n = ::write(fd_, pid.data(), pid.size());
  }
  ~DirLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

struct Context {
  const RunConfig& cfg;
  fs::path out;
  std::map<std::string, std::uint64_t> seeds;
  const Logger& log;
  std::vector<std::string> written;

  void note(const std::string& msg) const {
    if (log) log(msg);
  }
  fs::path path(const std::string& name) const { return out / name; }

  void write_text(const std::string& name, const std::string& text) {
    const auto p = path(name);
    const auto tmp = fs::path(p.string() + ".tmp");
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      if (!f) throw PipelineError("io", "cannot write " + tmp.string());
      f << text;
      if (!f) throw PipelineError("io", "failed writing " + tmp.string());
    }
    fs::rename(tmp, p);
    written.push_back(name);
  }
  template <class Fn>
  void write_csv(const std::string& name, Fn fn) {
    std::ostringstream os;
    fn(os);
    write_text(name, os.str());
  }
  void save(const std::string& name, const Container& c) {
    c.save(path(name));
    written.push_back(name);
  }
  Container load(const std::string& name, const std::string& producer) const {
    const auto p = path(name);
    if (!fs::exists(p))
      throw PipelineError("missing_artifact", "required artifact " + p.string() + " not found; run " + producer + " first");
    return Container::load(p);
  }
};

std::vector<LabeledVolume> cohort(const RunConfig& cfg, const PhantomSpec& spec, std::size_t count, double lo,
                                  double hi, std::uint64_t seed) {
  CohortOptions opt;
  opt.count = count;
  opt.age_low = lo;
  opt.age_high = hi;
  opt.sex_balance = cfg.sex_balance;
  return generate_cohort(spec, opt, seed);
}

std::vector<LabeledVolume> training_cohort(const Context& ctx) {
  return cohort(ctx.cfg, ctx.cfg.phantom, ctx.cfg.train_count, kAgeMinYears, kAgeMaxYears, ctx.seeds.at("cohort.train"));
}

RegionTable measure(const Context& ctx, const std::vector<LabeledVolume>& c, const std::string& cohort_name,
                    const std::string& prefix) {
  std::vector<Volume> v;
  std::vector<Metadata> m;
  for (const auto& l : c) {
    v.push_back(l.volume);
    m.push_back(l.metadata);
  }
  return measure_table(v, m, ctx.cfg.phantom, ctx.cfg.eval.threshold, cohort_name, prefix);
}

CodecParams load_checked_codec(const Context& ctx) {
  auto codec = load_codec(ctx.load(artifact::kCodec, "train-codec"));
  if (codec.input_extents != ctx.cfg.phantom.grid)
    throw PipelineError("stale_artifact", ctx.path(artifact::kCodec).string() +
                                              " was trained on a different grid; rerun train-codec");
  return codec;
}

double safe_snr(const Volume& v, const std::vector<std::uint8_t>& mask) {
  try {
    return snr(v, mask);
  } catch (const std::exception&) {
    return std::nan("");
  }
}

double tail_mean(const std::vector<double>& v, std::size_t n) {
  if (v.empty()) return std::nan("");
  n = std::min(n, v.size());
  double s = 0.0;
  for (std::size_t i = v.size() - n; i < v.size(); ++i) s += v[i];
  return s / static_cast<double>(n);
}

void train_codec_stage(Context& ctx) {
  const auto train = training_cohort(ctx);
  std::vector<Volume> vols;
  for (const auto& l : train) vols.push_back(l.volume);
  ctx.note("train-codec: " + std::to_string(vols.size()) + " phantoms, " + std::to_string(ctx.cfg.codec.iterations) +
           " iterations");
  auto params = CodecParams::initialize(ctx.cfg.codec, ctx.cfg.phantom.grid, ctx.seeds.at("codec.init"));
  auto res = train_codec(vols, std::move(params), ctx.seeds.at("codec.train"));
  Container c;
  store_codec(c, res.params);
  c.put("codec.loss", res.loss_trace);
  c.put("codec.recon", res.recon_trace);
  ctx.save(artifact::kCodec, c);
  ctx.write_csv("codec_trace.csv", [&](std::ostream& os) {
    os << "iteration,loss,recon_mse\n";
    for (std::size_t i = 0; i < res.loss_trace.size(); ++i)
      os << i + 1 << ',' << fmt(res.loss_trace[i]) << ',' << fmt(res.recon_trace[i]) << '\n';
  });
  const double usage = codebook_usage(vols, res.params);
  const double recon = tail_mean(res.recon_trace, 100);
  ctx.write_csv("codec_summary.csv", [&](std::ostream& os) {
    os << "quantity,value\n";
    os << "final_recon_mse," << fmt(recon) << '\n';
    os << "codebook_usage," << fmt(usage) << '\n';
  });
  ctx.note("train-codec: final recon mse " + fmt(recon) + ", codebook usage " + fmt(usage));
}

void fit_glm_stage(Context& ctx) {
  const auto codec = load_checked_codec(ctx);
  const auto train = training_cohort(ctx);
  std::vector<QuantizedGrid> qs;
  std::vector<std::vector<double>> latents;
  std::vector<Metadata> meta;
  for (const auto& l : train) {
    qs.push_back(quantize(encode(l.volume, codec), codec.codebook).quantized);
    latents.push_back(qs.back().grid.values);
    meta.push_back(l.metadata);
  }
  const auto glm = fit_glm(latents, meta);
  std::vector<RCode> codes;
  for (std::size_t i = 0; i < qs.size(); ++i) codes.push_back(residual_to_rcode(split(qs[i], meta[i], glm), codec.codebook));
  Container c;
  store_glm(c, glm);
  store_rcodes(c, codes);
  store_metadata(c, meta);
  store_latents(c, latents);
  ctx.save(artifact::kGlm, c);
  ctx.note("fit-glm: " + std::to_string(codes.size()) + " residual codes");
}

void train_diffusion_stage(Context& ctx) {
  const auto codec = load_checked_codec(ctx);
  const auto glm_box = ctx.load(artifact::kGlm, "fit-glm");
  const auto codes = load_rcodes(glm_box);
  if (codes.empty()) throw PipelineError("stale_artifact", "no residual codes in " + ctx.path(artifact::kGlm).string());
  const auto& dc = ctx.cfg.diffusion;
  const auto part = SubcodePartition::even(codes.front().grid[1], dc.subcodes);
  std::unique_ptr<Denoiser> model;
  if (dc.denoiser == "neural") {
    std::size_t longest = 0;
    for (const auto& s : partition(codes.front(), part)) longest = std::max(longest, s.tokens.size());
    NeuralDenoiser::Options opt;
    opt.embed = dc.embed;
    opt.hidden = dc.hidden;
    opt.learning_rate = dc.learning_rate;
    model = std::make_unique<NeuralDenoiser>(codec.codebook.size(), 2 * longest, dc.schedule.steps, opt,
                                             ctx.seeds.at("denoiser.init"));
  } else {
    model = std::make_unique<TabularDenoiser>(codec.codebook.size(), dc.smoothing);
  }
  ctx.note("train-diffusion: " + dc.denoiser + " denoiser, " + std::to_string(dc.epochs) + " epochs");
  const auto res = train_denoiser(codes, part, dc.schedule, *model, dc.epochs, ctx.seeds.at("denoiser.train"));
  Container c;
  store_denoiser(c, *model, part);
  c.put("denoiser.loss", res.loss_trace);
  ctx.save(artifact::kDenoiser, c);
  ctx.write_csv("denoiser_trace.csv", [&](std::ostream& os) {
    os << "epoch,masked_cross_entropy\n";
    for (std::size_t i = 0; i < res.loss_trace.size(); ++i) os << i + 1 << ',' << fmt(res.loss_trace[i]) << '\n';
  });
}

struct Models {
  CodecParams codec;
  GLMModel glm;
  std::unique_ptr<Denoiser> denoiser;
  SubcodePartition partition;
  std::vector<std::vector<double>> training_latents;

  SynthModels view() const { return {&codec, &glm, denoiser.get(), partition, denoiser->schedule}; }
};

Models load_models(const Context& ctx) {
  Models m;
  m.codec = load_checked_codec(ctx);
  const auto glm_box = ctx.load(artifact::kGlm, "fit-glm");
  m.glm = load_glm(glm_box);
  m.training_latents = load_latents(glm_box, load_metadata(glm_box).size());
  const auto den_box = ctx.load(artifact::kDenoiser, "train-diffusion");
  m.denoiser = load_denoiser(den_box);
  m.partition = load_partition(den_box);
  return m;
}

void synth_stage(Context& ctx) {
  const auto models = load_models(ctx);
  SynthRequest req;
  req.count = ctx.cfg.synth.count;
  req.age_low = ctx.cfg.synth.age_low;
  req.age_high = ctx.cfg.synth.age_high;
  req.seed = ctx.seeds.at("synth");
  ctx.note("synth: " + std::to_string(req.count) + " volumes");
  const auto res = synthesize(req, models.view());
  Container c;
  store_volumes(c, res.volumes);
  store_metadata(c, res.metadata);
  store_rcodes(c, res.rcodes);
  store_latents(c, res.latents);
  ctx.save(artifact::kSynth, c);
  const auto nov = novelty_check(res.latents, models.training_latents);
  ctx.write_csv("novelty.csv", [&](std::ostream& os) {
    os << "sample,nearest_training,distance\n";
    for (std::size_t i = 0; i < nov.distances.size(); ++i)
      os << i << ',' << nov.nearest[i] << ',' << fmt(nov.distances[i]) << '\n';
  });
  ctx.write_csv("novelty_summary.csv", [&](std::ostream& os) {
    os << "quantity,value\n";
    os << "mean_distance," << fmt(nov.mean) << '\n';
    os << "sd_distance," << fmt(nov.sd) << '\n';
    os << "t," << fmt(nov.test.statistic) << '\n';
    os << "p," << fmt(nov.test.p) << '\n';
  });
}

std::vector<std::string> region_names(std::size_t k) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back("R" + std::to_string(i + 1));
  return out;
}

void plausibility_plots(Context& ctx, const RegionTable& real, const RegionTable& synth, const EffectReport& rep) {
  const std::size_t K = real.regions();
  svg::BoxSeries rs{"real", "#1f77b4", {}}, ss{"synthetic", "#d62728", {}};
  svg::BoxSeries rz{"real", "#1f77b4", {}}, sz{"synthetic", "#d62728", {}};
  for (std::size_t k = 0; k < K; ++k) {
    const auto a = real.column(k), b = synth.column(k);
    rs.groups.push_back(a);
    ss.groups.push_back(b);
    const double mu = mean(a), sd = stddev(a);
    auto z = [&](std::vector<double> v) {
      for (auto& x : v) x = sd > 0.0 ? (x - mu) / sd : 0.0;
      return v;
    };
    rz.groups.push_back(z(a));
    sz.groups.push_back(z(b));
  }
  const auto names = region_names(K);
  ctx.write_text("region_volumes.svg",
                 svg::boxplot("Region volumes, real vs synthetic", "voxels", names, {rs, ss}));
  ctx.write_text("standardized_volumes.svg",
                 svg::boxplot("Region volumes standardized by the real cohort", "z", names, {rz, sz}));
  std::vector<svg::Point> cx, sex, age;
  for (std::size_t k = 0; k < K; ++k) {
    const auto& e = rep.regions[k];
    cx.push_back({e.complexity, std::fabs(e.d_real_vs_synth), names[k]});
    sex.push_back({e.d_sex_real, e.d_sex_synth, names[k]});
    age.push_back({e.age_real.statistic, e.age_synth.statistic, names[k]});
  }
  ctx.write_text("complexity.svg",
                 svg::scatter("Effect size against region complexity", "complexity", "|Cohen's d|", cx, false));
  ctx.write_text("sex_effects.svg",
                 svg::scatter("Sex effects (Cohen's d)", "real", "synthetic", sex, true));
  ctx.write_text("age_effects.svg",
                 svg::scatter("Age effects (Pearson r)", "real", "synthetic", age, true));
}

void eval_stage(Context& ctx) {
  const auto box = ctx.load(artifact::kSynth, "synth");
  const auto volumes = load_volumes(box);
  const auto meta = load_metadata(box);
  if (volumes.empty() || volumes.front().extents != ctx.cfg.phantom.grid)
    throw PipelineError("stale_artifact", ctx.path(artifact::kSynth).string() + " does not match the phantom grid");
  const auto& ec = ctx.cfg.eval;
  const auto real_cohort = cohort(ctx.cfg, ctx.cfg.phantom, ec.real_count, kAgeMinYears, kAgeMaxYears, ctx.seeds.at("cohort.real"));
  const auto real = measure(ctx, real_cohort, "real", "real-");
  const auto synth = measure_table(volumes, meta, ctx.cfg.phantom, ec.threshold, "synthetic", "synth-");
  ctx.write_csv("regions_real.csv", [&](std::ostream& os) { real.write_csv(os); });
  ctx.write_csv("regions_synth.csv", [&](std::ostream& os) { synth.write_csv(os); });
  const auto rep = plausibility_report(real, synth, ctx.cfg.phantom);
  ctx.write_csv("effects.csv", [&](std::ostream& os) { rep.write_csv(os); });
  ctx.write_csv("effects_summary.csv", [&](std::ostream& os) { rep.write_summary_csv(os); });
  ctx.note("eval: " + std::to_string(rep.small_or_small_to_medium) + " of " + std::to_string(rep.regions.size()) +
           " regions small or small-to-medium");

  const std::size_t n = std::min({kMetricSamples, real_cohort.size(), volumes.size()});
  std::vector<std::vector<double>> ra, sa;
  double snr_real = 0.0, snr_synth = 0.0, ssim_real = 0.0, ssim_synth = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ra.push_back(real_cohort[i].volume.voxels);
    sa.push_back(volumes[i].voxels);
    snr_real += safe_snr(real_cohort[i].volume, template_mask(ctx.cfg.phantom, real_cohort[i].metadata)) / n;
    snr_synth += safe_snr(volumes[i], template_mask(ctx.cfg.phantom, meta[i])) / n;
    if (i + 1 < n) {
      ssim_real += ms_ssim(real_cohort[i].volume, real_cohort[i + 1].volume) / (n - 1);
      ssim_synth += ms_ssim(volumes[i], volumes[i + 1]) / (n - 1);
    }
  }
  const double mmd_value = n >= 2 ? mmd(ra, sa) : std::nan("");
  ctx.write_csv("image_metrics.csv", [&](std::ostream& os) {
    os << "set,ms_ssim_consecutive_pairs,snr,mmd_vs_real\n";
    os << "real," << fmt(ssim_real) << ',' << fmt(snr_real) << ",0\n";
    os << "synthetic," << fmt(ssim_synth) << ',' << fmt(snr_synth) << ',' << fmt(mmd_value) << '\n';
  });
  plausibility_plots(ctx, real, synth, rep);
}

void augment_stage(Context& ctx) {
  const auto& ec = ctx.cfg.eval;
  const auto real = measure(ctx, cohort(ctx.cfg, ctx.cfg.phantom, ec.augment_real_count, ec.augment_age_low,
                                        ec.augment_age_high, ctx.seeds.at("cohort.augment")),
                            "real", "ctrl-");
  const auto accelerated =
      measure(ctx, cohort(ctx.cfg, ctx.cfg.phantom.with_age_scaled(ec.accelerated_factor), ec.accelerated_count,
                          ec.augment_age_low, ec.augment_age_high, ctx.seeds.at("cohort.accelerated")),
              "accelerated", "acc-");
  const auto heldout = measure(ctx, cohort(ctx.cfg, ctx.cfg.phantom, ec.heldout_count, ec.augment_age_low,
                                           ec.augment_age_high, ctx.seeds.at("cohort.heldout")),
                               "heldout", "held-");
  RegionTable pool;
  const std::size_t largest = ec.pool_sizes.empty() ? 0 : ec.pool_sizes.back();
  if (largest > 0) {
    const auto models = load_models(ctx);
    SynthRequest req;
    req.count = largest;
    req.age_low = ec.augment_age_low;
    req.age_high = ec.augment_age_high;
    req.seed = ctx.seeds.at("synth.pool");
    ctx.note("augment-exp: synthesizing a pool of " + std::to_string(largest));
    const auto res = synthesize(req, models.view());
    pool = measure_table(res.volumes, res.metadata, ctx.cfg.phantom, ec.threshold, "augment", "pool-");
  }
  ctx.write_csv("regions_augment_real.csv", [&](std::ostream& os) { real.write_csv(os); });
  ctx.write_csv("regions_pool.csv", [&](std::ostream& os) { pool.write_csv(os); });
  AugmentationOptions opt;
  opt.folds = ec.folds;
  opt.pool_sizes = ec.pool_sizes;
  opt.lambda = ec.ridge_lambda;
  const auto res = augmentation_experiment(real, pool, accelerated, heldout, opt);
  ctx.write_csv("augmentation.csv", [&](std::ostream& os) { write_augmentation_csv(os, res); });
  if (res.pools.empty()) {
    ctx.note("augment-exp: no pool sizes configured, trend plot skipped");
    return;
  }
  const auto& last = res.pools.back();
  ctx.write_csv("gaps.csv", [&](std::ostream& os) { write_gap_csv(os, last, accelerated, heldout); });
  std::vector<double> x, y, err;
  for (const auto& p : res.pools) {
    x.push_back(static_cast<double>(p.size));
    y.push_back(p.mae);
    err.push_back(p.abs_errors.size() > 1 ? stddev(p.abs_errors) / std::sqrt(static_cast<double>(p.abs_errors.size()))
                                          : 0.0);
  }
  ctx.write_text("augmentation_trend.svg", svg::line("Age prediction error against synthetic pool size",
                                               "synthetic samples per fold", "MAE (years)", x, y, err));
  ctx.write_text("gaps.svg",
                 svg::boxplot("Predicted minus chronological age", "years", {"accelerated", "held-out"},
                              {{"pool " + std::to_string(last.size), "#2ca02c", {last.gap_accelerated, last.gap_heldout}}}));
  ctx.note("augment-exp: MAE " + fmt(res.pools.front().mae) + " -> " + fmt(last.mae));
}

using Stage = void (*)(Context&);

const std::vector<std::pair<std::string, Stage>>& stages() {
  static const std::vector<std::pair<std::string, Stage>> table = {
      {"train-codec", train_codec_stage}, {"fit-glm", fit_glm_stage}, {"train-diffusion", train_diffusion_stage},
      {"synth", synth_stage},             {"eval", eval_stage},       {"augment-exp", augment_stage},
  };
  return table;
}

}  // namespace

std::map<std::string, std::uint64_t> stage_seeds(std::uint64_t seed) {
  std::map<std::string, std::uint64_t> out;
  for (const char* label : {"cohort.train", "codec.init", "codec.train", "denoiser.init", "denoiser.train", "synth",
                            "cohort.real", "cohort.augment", "cohort.accelerated", "cohort.heldout", "synth.pool"})
    out[label] = derive_seed(seed, label);
  return out;
}

std::string config_hash(const RunConfig& config) {
  const auto text = serialize_config(config);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr))
    throw PipelineError("internal", "sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

RunSummary run_command(const std::string& command, const RunConfig& config, const fs::path& out, const Logger& log) {
  if (std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end())
    throw ConfigError("unknown command: " + command);
  config.validate();
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw PipelineError("io", "cannot create output directory " + out.string() + ": " + ec.message());
  DirLock lock(out);

  Context ctx{config, out, stage_seeds(config.seed), log, {}};
  const auto start = Clock::now();
  nlohmann::ordered_json timings = nlohmann::ordered_json::array();
  for (const auto& [name, fn] : stages()) {
    if (command != "pipeline" && command != name) continue;
    const auto t0 = Clock::now();
    try {
      fn(ctx);
    } catch (const PipelineError&) {
      throw;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw PipelineError("stage_failed", name + ": " + e.what());
    }
    timings.push_back({{"stage", name}, {"wall_seconds", std::chrono::duration<double>(Clock::now() - t0).count()}});
  }
  RunSummary summary;
  summary.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();

  nlohmann::ordered_json manifest;
  manifest["command"] = command;
  manifest["seed"] = config.seed;
  manifest["config_sha256"] = config_hash(config);
  manifest["config"] = serialize_config(config);
  nlohmann::ordered_json seeds;
  for (const auto& [k, v] : ctx.seeds) seeds[k] = v;
  manifest["stage_seeds"] = seeds;
  manifest["stages"] = timings;
  manifest["wall_seconds"] = summary.wall_seconds;
  manifest["artifacts"] = ctx.written;
  const std::string manifest_name = "manifest-" + command + ".json";
  ctx.write_text(manifest_name, manifest.dump(2) + "\n");
  summary.artifacts = ctx.written;
  return summary;
}

}  // namespace voxsynth
