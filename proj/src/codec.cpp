#include "codec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "optim.hpp"
#include "rng.hpp"

namespace voxsynth {

Codebook::Codebook(Tensor table) : table_(std::move(table)) {
  if (table_.rank() != 2) throw CodecError("codebook: table must be [N_C, dim], got " + shape_string(table_.shape));
}

void Codebook::validate() const {
  if (size() == 0 || dim() == 0) throw CodecError("codebook: empty");
  for (double v : entry(0))
    if (v != 0.0) throw CodecError("codebook: entry 0 must be the zero vector");
  for (std::size_t a = 0; a < size(); ++a)
    for (std::size_t b = a + 1; b < size(); ++b)
      if (std::equal(entry(a).begin(), entry(a).end(), entry(b).begin()))
        throw CodecError("codebook: entries " + std::to_string(a) + " and " + std::to_string(b) + " are identical");
}

std::size_t nearest_code(std::span<const double> v, const Codebook& codebook) {
  if (codebook.size() == 0) throw CodecError("nearest_code: empty codebook");
  if (v.size() != codebook.dim())
    throw CodecError("nearest_code: vector of dim " + std::to_string(v.size()) + " vs codebook dim " +
                     std::to_string(codebook.dim()));
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < codebook.size(); ++k) {
    const auto e = codebook.entry(k);
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) d += (v[i] - e[i]) * (v[i] - e[i]);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

FineCode fine_quantize(std::span<const double> v, const Codebook& codebook) {
  FineCode out;
  out.primary = nearest_code(v, codebook);
  const auto e1 = codebook.entry(out.primary);
  std::vector<double> rest(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) rest[i] = v[i] - e1[i];
  out.residual = nearest_code(rest, codebook);
  const auto e2 = codebook.entry(out.residual);
  out.q.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out.q[i] = e1[i] + e2[i];
  return out;
}

Tensor split_halves(const LatentGrid& z) {
  if (z.channels % 2 != 0) throw CodecError("split_halves: latent dim " + std::to_string(z.channels) + " is odd");
  const std::size_t half = z.channels / 2;
  const std::size_t cells = z.cells();
  Tensor out({2, z.extents[0], z.extents[1], z.extents[2], half});
  for (std::size_t c = 0; c < cells; ++c)
    for (std::size_t h = 0; h < 2; ++h)
      std::copy_n(z.values.begin() + c * z.channels + h * half, half, out.data.begin() + (h * cells + c) * half);
  return out;
}

LatentGrid stack_halves(const Tensor& halves) {
  const auto& s = halves.shape;
  if (s.size() != 5 || s[0] != 2) throw CodecError("stack_halves: expected [2,d,h,w,k], got " + shape_string(s));
  const std::size_t half = s[4];
  LatentGrid z({s[1], s[2], s[3]}, 2 * half);
  const std::size_t cells = z.cells();
  for (std::size_t c = 0; c < cells; ++c)
    for (std::size_t h = 0; h < 2; ++h)
      std::copy_n(halves.data.begin() + (h * cells + c) * half, half, z.values.begin() + c * z.channels + h * half);
  return z;
}

// ---------------------------------------------------------------------------

namespace {

constexpr Conv3dOptions kDown{2, 1};
constexpr std::size_t kKernel = 4;

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t.data) v = u(rng);
  return t;
}

Tensor volume_tensor(const Volume& v) {
  return Tensor({1, v.extents[0], v.extents[1], v.extents[2]}, v.voxels);
}

struct NetVars {
  Var enc1_w, enc1_b, enc2_w, enc2_b, dec1_w, dec1_b, dec2_w, dec2_b;
};

NetVars bind(Tape& tape, const CodecParams& p, bool track) {
  return {tape.leaf(p.enc1_w, track), tape.leaf(p.enc1_b, track), tape.leaf(p.enc2_w, track),
          tape.leaf(p.enc2_b, track), tape.leaf(p.dec1_w, track), tape.leaf(p.dec1_b, track),
          tape.leaf(p.dec2_w, track), tape.leaf(p.dec2_b, track)};
}

// [1,D,H,W] -> [n_D,d,h,w]
Var encoder(Var x, const NetVars& n, double leak) {
  Var h = leaky_relu(conv3d(x, n.enc1_w, n.enc1_b, kDown), leak);
  return conv3d(h, n.enc2_w, n.enc2_b, kDown);
}

// [n_D,d,h,w] -> [1,D,H,W]
Var decoder(Var q, const NetVars& n, double leak) {
  Var h = leaky_relu(conv_transpose3d(q, n.dec1_w, n.dec1_b, kDown), leak);
  return conv_transpose3d(h, n.dec2_w, n.dec2_b, kDown);
}

void check_extents(const Extents& e, const CodecParams& p) {
  for (auto v : e)
    if (v == 0 || v % kDownsample != 0)
      throw CodecError("encode: extents must be positive multiples of " + std::to_string(kDownsample));
  if (e != p.input_extents) throw CodecError("encode: volume extents differ from the codec input extents");
}

}  // namespace

CodecParams CodecParams::initialize(const CodecConfig& config, Extents input_extents, std::uint64_t seed) {
  if (config.latent_dim == 0 || config.latent_dim % 2 != 0) throw CodecError("codec: latent_dim must be even");
  if (config.codebook_size < 2) throw CodecError("codec: codebook_size must be >= 2");
  for (auto v : input_extents)
    if (v == 0 || v % kDownsample != 0)
      throw CodecError("codec: input extents must be positive multiples of " + std::to_string(kDownsample));
  CodecParams p;
  p.config = config;
  p.input_extents = input_extents;
  Rng rng(seed);
  const std::size_t k3 = kKernel * kKernel * kKernel;
  const std::size_t hid = config.hidden_channels, lat = config.latent_dim;
  p.enc1_w = uniform_tensor({hid, 1, kKernel, kKernel, kKernel}, std::sqrt(6.0 / k3), rng);
  p.enc1_b = Tensor({hid});
  p.enc2_w = uniform_tensor({lat, hid, kKernel, kKernel, kKernel}, std::sqrt(6.0 / (hid * k3)), rng);
  p.enc2_b = Tensor({lat});
  // Transposed kernels: each output voxel sees k3/8 taps per input channel.
  p.dec1_w = uniform_tensor({lat, hid, kKernel, kKernel, kKernel}, std::sqrt(6.0 / (lat * k3 / 8)), rng);
  p.dec1_b = Tensor({hid});
  p.dec2_w = uniform_tensor({hid, 1, kKernel, kKernel, kKernel}, std::sqrt(3.0 / (hid * k3 / 8)), rng);
  p.dec2_b = Tensor({1});
  p.codebook = Codebook(config.codebook_size, lat / 2);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t k = 1; k < config.codebook_size; ++k)
    for (auto& v : p.codebook.entry(k)) v = n(rng);
  return p;
}

Extents CodecParams::latent_extents() const {
  return {input_extents[0] / kDownsample, input_extents[1] / kDownsample, input_extents[2] / kDownsample};
}

std::vector<Tensor*> CodecParams::weights() {
  return {&enc1_w, &enc1_b, &enc2_w, &enc2_b, &dec1_w, &dec1_b, &dec2_w, &dec2_b, &codebook.table()};
}

std::vector<const Tensor*> CodecParams::weights() const {
  return {&enc1_w, &enc1_b, &enc2_w, &enc2_b, &dec1_w, &dec1_b, &dec2_w, &dec2_b, &codebook.table()};
}

LatentGrid encode(const Volume& x, const CodecParams& params) {
  check_extents(x.extents, params);
  Tape tape;
  const NetVars n = bind(tape, params, false);
  Var z = encoder(tape.constant(volume_tensor(x)), n, params.config.leak);
  Var zl = permute(z, {1, 2, 3, 0});
  LatentGrid out(params.latent_extents(), params.config.latent_dim);
  out.values = zl.value().data;
  return out;
}

Quantization quantize(const LatentGrid& z, const Codebook& codebook) {
  Tensor halves = split_halves(z);
  const std::size_t dim = halves.shape[4];
  if (dim != codebook.dim())
    throw CodecError("quantize: half-vector dim " + std::to_string(dim) + " vs codebook dim " +
                     std::to_string(codebook.dim()));
  const std::size_t count = halves.size() / dim;
  Quantization out;
  out.primary.resize(count);
  out.residual.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto fc = fine_quantize(std::span<const double>(halves.data.data() + i * dim, dim), codebook);
    out.primary[i] = fc.primary;
    out.residual[i] = fc.residual;
    std::copy(fc.q.begin(), fc.q.end(), halves.data.begin() + i * dim);
  }
  out.quantized.grid = stack_halves(halves);
  return out;
}

Volume decode(const QuantizedGrid& q, const CodecParams& params) {
  const auto& g = q.grid;
  if (g.extents != params.latent_extents() || g.channels != params.config.latent_dim)
    throw CodecError("decode: quantized grid [" + std::to_string(g.extents[0]) + "," + std::to_string(g.extents[1]) +
                     "," + std::to_string(g.extents[2]) + "," + std::to_string(g.channels) +
                     "] does not match the decoder input");
  Tape tape;
  const NetVars n = bind(tape, params, false);
  Var ql = tape.constant(Tensor({g.extents[0], g.extents[1], g.extents[2], g.channels}, g.values));
  Var y = decoder(permute(ql, {3, 0, 1, 2}), n, params.config.leak);
  Volume out(params.input_extents);
  const auto& v = y.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.voxels[i] = std::clamp(v[i], 0.0, 1.0);
  return out;
}

Volume reconstruct(const Volume& x, const CodecParams& params) {
  return decode(quantize(encode(x, params), params.codebook).quantized, params);
}

// ---------------------------------------------------------------------------
// Training

namespace {

// Latent [n_D,d,h,w] -> rows of half-vectors [cells*2, n_D/2], cell-major.
Var half_rows(Var z, std::size_t latent_dim) {
  Var zl = permute(z, {1, 2, 3, 0});
  return reshape(zl, {zl.size() / (latent_dim / 2), latent_dim / 2});
}

Var from_half_rows(Var rows, const Extents& e, std::size_t latent_dim) {
  return permute(reshape(rows, {e[0], e[1], e[2], latent_dim}), {3, 0, 1, 2});
}

void seed_codebook(Codebook& cb, std::span<const Volume> dataset, const CodecParams& params, Rng& rng) {
  std::vector<double> pool;
  const std::size_t dim = cb.dim();
  const std::size_t probes = std::min<std::size_t>(dataset.size(), 8);
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  for (std::size_t i = 0; i < probes; ++i) {
    const auto z = encode(dataset[pick(rng)], params);
    pool.insert(pool.end(), z.values.begin(), z.values.end());
  }
  const std::size_t rows = pool.size() / dim;
  std::uniform_int_distribution<std::size_t> row(0, rows - 1);
  std::normal_distribution<double> jitter(0.0, 1e-3);
  for (std::size_t k = 1; k < cb.size(); ++k) {
    const std::size_t r = row(rng);
    auto e = cb.entry(k);
    for (std::size_t j = 0; j < dim; ++j) e[j] = pool[r * dim + j] + jitter(rng);
  }
}

}  // namespace

CodecTrainResult train_codec(std::span<const Volume> dataset, CodecParams params, std::uint64_t seed) {
  if (dataset.empty()) throw CodecError("train_codec: empty dataset");
  for (const auto& v : dataset) check_extents(v.extents, params);
  CodecTrainResult result;
  const auto& cfg = params.config;
  if (cfg.iterations == 0) {
    result.params = std::move(params);
    return result;
  }
  Rng rng(seed);
  Codebook& cb = params.codebook;
  seed_codebook(cb, dataset, params, rng);

  auto weights = params.weights();
  Adam adam(weights, {.learning_rate = cfg.learning_rate});
  const std::size_t codebook_slot = weights.size() - 1;
  const std::size_t dim = cb.dim();
  const Extents lat = params.latent_extents();
  const std::size_t restart_until = cfg.iterations * 4 / 5;
  std::vector<std::size_t> usage(cb.size(), 0);
  std::vector<double> recent_rows;
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);

  result.loss_trace.reserve(cfg.iterations);
  result.recon_trace.reserve(cfg.iterations);
  Tape tape;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    tape.reset();
    const Volume& x = dataset[pick(rng)];
    double total = 0.0, recon = 0.0;
    std::vector<Tensor> grads;
    try {
      const NetVars n = bind(tape, params, true);
      Var codebook = tape.leaf(cb.table(), true);
      Var xv = tape.constant(volume_tensor(x));
      Var z = encoder(xv, n, cfg.leak);
      Var v = half_rows(z, cfg.latent_dim);

      const std::size_t rows = v.shape()[0];
      std::vector<std::size_t> k1(rows), k2(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        const auto fc = fine_quantize(std::span<const double>(v.value().data.data() + r * dim, dim), cb);
        k1[r] = fc.primary;
        k2[r] = fc.residual;
        ++usage[fc.primary];
        ++usage[fc.residual];
      }
      Var q = add(embedding(codebook, k1), embedding(codebook, k2));
      Var straight = add(v, detach(sub(q, v)));
      Var y = decoder(from_half_rows(straight, lat, cfg.latent_dim), n, cfg.leak);
      Var rec = mse(y, xv);
      Var loss = add(add(rec, mse(detach(v), q)), scale(mse(v, detach(q)), cfg.beta));
      total = loss.value().data[0];
      recon = rec.value().data[0];
      if (it % 16 == 0) recent_rows = v.value().data;
      tape.backward(loss);
      grads = {tape.grad(n.enc1_w), tape.grad(n.enc1_b), tape.grad(n.enc2_w), tape.grad(n.enc2_b),
               tape.grad(n.dec1_w), tape.grad(n.dec1_b), tape.grad(n.dec2_w), tape.grad(n.dec2_b),
               tape.grad(codebook)};
    } catch (const std::domain_error&) {
      throw CodecError("train_codec: diverged (non-finite loss) at iteration " + std::to_string(it));
    }
    if (!std::isfinite(total)) throw CodecError("train_codec: diverged (non-finite loss) at iteration " + std::to_string(it));

    std::fill_n(grads[codebook_slot].data.begin(), dim, 0.0);
    const double progress = static_cast<double>(it) / static_cast<double>(cfg.iterations);
    const double lr_scale = 0.1 + 0.45 * (1.0 + std::cos(3.14159265358979323846 * progress));
    adam.step(grads, lr_scale);
    std::fill_n(cb.table().data.begin(), dim, 0.0);

    result.loss_trace.push_back(total);
    result.recon_trace.push_back(recon);

    // Re-seed entries that went unused over the last interval.
    if (cfg.restart_interval > 0 && (it + 1) % cfg.restart_interval == 0) {
      if (it < restart_until && !recent_rows.empty()) {
        const std::size_t rows = recent_rows.size() / dim;
        std::uniform_int_distribution<std::size_t> row(0, rows - 1);
        std::normal_distribution<double> jitter(0.0, 1e-3);
        for (std::size_t k = 1; k < cb.size(); ++k) {
          if (usage[k] != 0) continue;
          const std::size_t r = row(rng);
          auto e = cb.entry(k);
          for (std::size_t j = 0; j < dim; ++j) e[j] = recent_rows[r * dim + j] + jitter(rng);
          adam.reset_moments(codebook_slot, k * dim, dim);
        }
      }
      std::fill(usage.begin(), usage.end(), 0);
    }
  }
  result.params = std::move(params);
  return result;
}

double codebook_usage(std::span<const Volume> dataset, const CodecParams& params) {
  std::vector<bool> used(params.codebook.size(), false);
  for (const auto& v : dataset) {
    const auto q = quantize(encode(v, params), params.codebook);
    for (auto k : q.primary) used[k] = true;
    for (auto k : q.residual) used[k] = true;
  }
  return static_cast<double>(std::count(used.begin(), used.end(), true)) / static_cast<double>(used.size());
}

}  // namespace voxsynth
