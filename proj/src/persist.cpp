#include "persist.hpp"

namespace voxsynth {

namespace {

std::vector<std::uint32_t> to_u32(const Shape& s) { return {s.begin(), s.end()}; }

Tensor tensor_from(const Container& c, const std::string& name, const Shape& shape) {
  const auto& v = c.f64(name);
  if (v.size() != element_count(shape))
    throw ContainerError("container: section '" + name + "' has " + std::to_string(v.size()) + " values, expected " +
                         std::to_string(element_count(shape)));
  return Tensor(shape, v);
}

}  // namespace

void store_codec(Container& c, const CodecParams& p) {
  const auto& k = p.config;
  c.put("codec.config", std::vector<double>{static_cast<double>(k.codebook_size), static_cast<double>(k.latent_dim),
                                            static_cast<double>(k.hidden_channels), k.beta, k.learning_rate,
                                            static_cast<double>(k.iterations), k.leak,
                                            static_cast<double>(k.restart_interval)});
  c.put("codec.extents", std::vector<std::uint32_t>{static_cast<std::uint32_t>(p.input_extents[0]),
                                                    static_cast<std::uint32_t>(p.input_extents[1]),
                                                    static_cast<std::uint32_t>(p.input_extents[2])});
  c.put("codec.enc1_w", p.enc1_w.data);
  c.put("codec.enc1_b", p.enc1_b.data);
  c.put("codec.enc2_w", p.enc2_w.data);
  c.put("codec.enc2_b", p.enc2_b.data);
  c.put("codec.dec1_w", p.dec1_w.data);
  c.put("codec.dec1_b", p.dec1_b.data);
  c.put("codec.dec2_w", p.dec2_w.data);
  c.put("codec.dec2_b", p.dec2_b.data);
  c.put("codec.codebook", p.codebook.table().data);
}

CodecParams load_codec(const Container& c) {
  const auto& k = c.f64("codec.config");
  const auto& e = c.u32("codec.extents");
  if (k.size() != 8 || e.size() != 3) throw ContainerError("container: malformed codec header");
  CodecConfig cfg;
  cfg.codebook_size = static_cast<std::size_t>(k[0]);
  cfg.latent_dim = static_cast<std::size_t>(k[1]);
  cfg.hidden_channels = static_cast<std::size_t>(k[2]);
  cfg.beta = k[3];
  cfg.learning_rate = k[4];
  cfg.iterations = static_cast<std::size_t>(k[5]);
  cfg.leak = k[6];
  cfg.restart_interval = static_cast<std::size_t>(k[7]);
  // Shapes come from a fresh initialization with the same configuration.
  CodecParams p = CodecParams::initialize(cfg, {e[0], e[1], e[2]}, 0);
  p.enc1_w = tensor_from(c, "codec.enc1_w", p.enc1_w.shape);
  p.enc1_b = tensor_from(c, "codec.enc1_b", p.enc1_b.shape);
  p.enc2_w = tensor_from(c, "codec.enc2_w", p.enc2_w.shape);
  p.enc2_b = tensor_from(c, "codec.enc2_b", p.enc2_b.shape);
  p.dec1_w = tensor_from(c, "codec.dec1_w", p.dec1_w.shape);
  p.dec1_b = tensor_from(c, "codec.dec1_b", p.dec1_b.shape);
  p.dec2_w = tensor_from(c, "codec.dec2_w", p.dec2_w.shape);
  p.dec2_b = tensor_from(c, "codec.dec2_b", p.dec2_b.shape);
  p.codebook = Codebook(tensor_from(c, "codec.codebook", p.codebook.table().shape));
  return p;
}

void store_glm(Container& c, const GLMModel& g) {
  c.put("glm.P", g.P);
  c.put("glm.meta", std::vector<double>{static_cast<double>(g.latent_size), g.age_min_years, g.age_max_years});
}

GLMModel load_glm(const Container& c) {
  GLMModel g;
  g.P = c.f64("glm.P");
  const auto& m = c.f64("glm.meta");
  if (m.size() != 3) throw ContainerError("container: malformed glm.meta");
  g.latent_size = static_cast<std::size_t>(m[0]);
  g.age_min_years = m[1];
  g.age_max_years = m[2];
  if (g.P.size() != g.latent_size * kMetadataLength) throw ContainerError("container: glm.P size mismatch");
  if (g.age_min_years != kAgeMinYears || g.age_max_years != kAgeMaxYears)
    throw ContainerError("container: GLM was fitted with a different age normalization");
  return g;
}

void store_rcodes(Container& c, const std::vector<RCode>& codes) {
  std::vector<std::uint32_t> grid, tokens;
  if (!codes.empty())
    for (auto g : codes.front().grid) grid.push_back(static_cast<std::uint32_t>(g));
  grid.push_back(static_cast<std::uint32_t>(codes.size()));
  for (const auto& r : codes) {
    if (r.grid != codes.front().grid) throw ContainerError("container: R-codes differ in shape");
    tokens.insert(tokens.end(), r.tokens.begin(), r.tokens.end());
  }
  c.put("rcodes.grid", std::move(grid));
  c.put("rcodes.tokens", std::move(tokens));
}

std::vector<RCode> load_rcodes(const Container& c) {
  const auto& g = c.u32("rcodes.grid");
  const auto& t = c.u32("rcodes.tokens");
  if (g.size() == 1 && g[0] == 0) return {};
  if (g.size() != 5) throw ContainerError("container: malformed rcodes.grid");
  std::vector<RCode> out(g[4]);
  const std::size_t per = std::size_t{g[0]} * g[1] * g[2] * g[3] * 2;
  if (t.size() != per * out.size()) throw ContainerError("container: rcodes.tokens size mismatch");
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].grid = {g[0], g[1], g[2], g[3]};
    out[i].tokens.assign(t.begin() + static_cast<std::ptrdiff_t>(i * per), t.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
  }
  return out;
}

void store_metadata(Container& c, const std::vector<Metadata>& m) {
  std::vector<double> v;
  for (const auto& x : m) {
    v.push_back(x.age_norm);
    v.push_back(x.sex);
  }
  c.put("metadata", std::move(v));
}

std::vector<Metadata> load_metadata(const Container& c) {
  const auto& v = c.f64("metadata");
  if (v.size() % 2) throw ContainerError("container: malformed metadata");
  std::vector<Metadata> out(v.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].age_norm = v[2 * i];
    out[i].sex = v[2 * i + 1];
    out[i].validate();
  }
  return out;
}

void store_latents(Container& c, const std::vector<std::vector<double>>& latents) {
  std::vector<double> flat;
  for (const auto& l : latents) flat.insert(flat.end(), l.begin(), l.end());
  c.put("latents", std::move(flat));
}

std::vector<std::vector<double>> load_latents(const Container& c, std::size_t count) {
  const auto& flat = c.f64("latents");
  if (count == 0 || flat.size() % count) throw ContainerError("container: latents do not split into rows");
  const std::size_t L = flat.size() / count;
  std::vector<std::vector<double>> out(count);
  for (std::size_t i = 0; i < count; ++i)
    out[i].assign(flat.begin() + static_cast<std::ptrdiff_t>(i * L), flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * L));
  return out;
}

void store_volumes(Container& c, const std::vector<Volume>& volumes) {
  std::vector<std::uint32_t> e{0, 0, 0, static_cast<std::uint32_t>(volumes.size())};
  std::vector<double> flat;
  for (const auto& v : volumes) {
    if (v.extents != volumes.front().extents) throw ContainerError("container: volumes differ in extents");
    flat.insert(flat.end(), v.voxels.begin(), v.voxels.end());
  }
  if (!volumes.empty())
    for (int a = 0; a < 3; ++a) e[a] = static_cast<std::uint32_t>(volumes.front().extents[a]);
  c.put("volumes.extents", std::move(e));
  c.put("volumes", std::move(flat));
}

std::vector<Volume> load_volumes(const Container& c) {
  const auto& e = c.u32("volumes.extents");
  const auto& flat = c.f64("volumes");
  if (e.size() != 4) throw ContainerError("container: malformed volumes.extents");
  const Extents ext{e[0], e[1], e[2]};
  const std::size_t per = ext[0] * ext[1] * ext[2];
  if (flat.size() != per * e[3]) throw ContainerError("container: volumes size mismatch");
  std::vector<Volume> out;
  for (std::size_t i = 0; i < e[3]; ++i) {
    Volume v(ext);
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(i * per), per, v.voxels.begin());
    out.push_back(std::move(v));
  }
  return out;
}

void store_denoiser(Container& c, const Denoiser& d, const SubcodePartition& part) {
  for (const auto& [name, t] : d.state()) {
    c.put("denoiser.state." + name, t.data);
    c.put("denoiser.shape." + name, to_u32(t.shape));
  }
  std::vector<std::uint32_t> b;
  for (const auto& [lo, hi] : part.boundaries) {
    b.push_back(static_cast<std::uint32_t>(lo));
    b.push_back(static_cast<std::uint32_t>(hi));
  }
  c.put("denoiser.partition", std::move(b));
}

std::unique_ptr<Denoiser> load_denoiser(const Container& c) {
  DenoiserState state;
  const std::string prefix = "denoiser.state.";
  for (const auto& s : c.sections()) {
    if (s.name.rfind(prefix, 0) != 0) continue;
    const std::string name = s.name.substr(prefix.size());
    const auto& shape = c.u32("denoiser.shape." + name);
    state.emplace_back(name, tensor_from(c, s.name, Shape(shape.begin(), shape.end())));
  }
  return denoiser_from_state(state);
}

SubcodePartition load_partition(const Container& c) {
  const auto& b = c.u32("denoiser.partition");
  if (b.empty() || b.size() % 2) throw ContainerError("container: malformed denoiser.partition");
  SubcodePartition p;
  for (std::size_t i = 0; i < b.size(); i += 2) p.boundaries.emplace_back(b[i], b[i + 1]);
  return p;
}

}  // namespace voxsynth
