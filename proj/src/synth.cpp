#include "synth.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "rng.hpp"

namespace voxsynth {

namespace {

void check_models(const SynthModels& m) {
  if (!m.codec || !m.glm || !m.denoiser) throw std::invalid_argument("synthesize: missing model");
  if (m.denoiser->categories() != m.codec->codebook.size())
    throw CodecError("synthesize: denoiser has " + std::to_string(m.denoiser->categories()) +
                     " categories but the codebook has " + std::to_string(m.codec->codebook.size()) + " entries");
  const auto e = m.codec->latent_extents();
  if (m.glm->latent_size != e[0] * e[1] * e[2] * m.codec->config.latent_dim)
    throw GlmError("synthesize: GLM latent size does not match the codec");
}

}  // namespace

std::array<std::size_t, 4> rcode_grid(const CodecParams& codec) {
  const auto e = codec.latent_extents();
  return {2, e[0], e[1], e[2]};
}

SynthResult synthesize(const SynthRequest& req, const SynthModels& models) {
  check_models(models);
  if (req.count < 1) throw std::invalid_argument("synthesize: count must be >= 1");
  if (!(req.age_low >= kAgeMinYears && req.age_low <= req.age_high && req.age_high <= kAgeMaxYears))
    throw std::invalid_argument("synthesize: ages must satisfy 13 <= low <= high <= 91");
  if (req.fixed) req.fixed->validate();
  const auto grid = rcode_grid(*models.codec);
  SynthResult out;
  for (std::size_t i = 0; i < req.count; ++i) {
    const std::uint64_t s = derive_seed(req.seed, i);
    Metadata m;
    if (req.fixed) {
      m = *req.fixed;
    } else {
      Rng rng(derive_seed(s, "metadata"));
      std::uniform_real_distribution<double> age(req.age_low, req.age_high);
      std::bernoulli_distribution sex(0.5);
      const double years = std::min(age(rng), req.age_high);
      m = Metadata::from_years(years, sex(rng) ? 1.0 : 0.0);
    }
    RCode code = sample_rcode(grid, models.partition, models.schedule, *models.denoiser, derive_seed(s, "rcode"));
    QuantizedGrid q = recombine(code, m, *models.glm, models.codec->codebook);
    out.volumes.push_back(decode(q, *models.codec));
    out.metadata.push_back(m);
    out.rcodes.push_back(std::move(code));
    out.latents.push_back(std::move(q.grid.values));
  }
  return out;
}

Volume counterfactual(const LabeledVolume& base, const Metadata& new_metadata, const SynthModels& models) {
  if (!models.codec || !models.glm) throw std::invalid_argument("counterfactual: missing model");
  new_metadata.validate();
  auto q = quantize(encode(base.volume, *models.codec), models.codec->codebook).quantized;
  if (q.grid.values.size() != models.glm->latent_size) throw GlmError("counterfactual: GLM latent size does not match the codec");
  // P m_new + (q - P m_base), grouped so that unchanged metadata returns q bitwise.
  const auto pm_new = models.glm->project(new_metadata.vector());
  const auto pm_base = models.glm->project(base.metadata.vector());
  for (std::size_t i = 0; i < pm_new.size(); ++i) q.grid.values[i] += pm_new[i] - pm_base[i];
  return decode(q, *models.codec);
}

NoveltyReport novelty_check(std::span<const std::vector<double>> synthetic,
                            std::span<const std::vector<double>> training) {
  if (training.empty()) throw std::invalid_argument("novelty_check: no training latents");
  NoveltyReport rep;
  for (const auto& s : synthetic) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < training.size(); ++j) {
      if (training[j].size() != s.size()) throw std::invalid_argument("novelty_check: latent size mismatch");
      double d2 = 0.0;
      for (std::size_t k = 0; k < s.size(); ++k) d2 += (s[k] - training[j][k]) * (s[k] - training[j][k]);
      if (d2 < best) {
        best = d2;
        arg = j;
      }
    }
    rep.distances.push_back(std::sqrt(best));
    rep.nearest.push_back(arg);
  }
  if (!rep.distances.empty()) rep.mean = mean(rep.distances);
  rep.test = {std::nan(""), std::nan("")};
  if (rep.distances.size() >= 2) {
    rep.sd = stddev(rep.distances);
    if (rep.sd > 0.0) rep.test = t_test_one_sample(rep.distances, 0.0);
  }
  return rep;
}

}  // namespace voxsynth
