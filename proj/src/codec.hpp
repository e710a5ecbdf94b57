#pragma once

// Stage-one codec: a small 3D convolutional VQ-VAE whose latent vectors are
// split into halves and quantized in two passes (nearest entry, then nearest
// entry to the leftover).

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "tensor.hpp"
#include "volume.hpp"

namespace voxsynth {

class CodecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// N_C entries of dimension n_D/2. Entry 0 is pinned to the zero vector.
class Codebook {
 public:
  Codebook() = default;
  Codebook(std::size_t size, std::size_t dim) : table_({size, dim}, 0.0) {}
  explicit Codebook(Tensor table);

  std::size_t size() const { return table_.shape.empty() ? 0 : table_.shape[0]; }
  std::size_t dim() const { return table_.shape.size() < 2 ? 0 : table_.shape[1]; }
  std::span<const double> entry(std::size_t k) const { return {table_.data.data() + k * dim(), dim()}; }
  std::span<double> entry(std::size_t k) { return {table_.data.data() + k * dim(), dim()}; }

  Tensor& table() { return table_; }
  const Tensor& table() const { return table_; }

  /// Throws CodecError unless entry 0 is zero and no two entries coincide.
  void validate() const;

  friend bool operator==(const Codebook&, const Codebook&) = default;

 private:
  Tensor table_;
};

/// Index of the closest entry in Euclidean distance; ties go to the lowest index.
std::size_t nearest_code(std::span<const double> v, const Codebook& codebook);

struct FineCode {
  std::size_t primary = 0;   // nearest entry to v
  std::size_t residual = 0;  // nearest entry to v - e(primary)
  std::vector<double> q;     // e(primary) + e(residual)
};

FineCode fine_quantize(std::span<const double> v, const Codebook& codebook);

/// Latent values on a d x h x w grid with `channels` values per cell,
/// channels-last.
struct LatentGrid {
  Extents extents{0, 0, 0};
  std::size_t channels = 0;
  std::vector<double> values;

  LatentGrid() = default;
  LatentGrid(Extents e, std::size_t c, double fill = 0.0)
      : extents(e), channels(c), values(e[0] * e[1] * e[2] * c, fill) {}

  std::size_t cells() const { return extents[0] * extents[1] * extents[2]; }
  friend bool operator==(const LatentGrid&, const LatentGrid&) = default;
};

/// A latent grid whose half-vectors are each a sum of two codebook entries.
struct QuantizedGrid {
  LatentGrid grid;
  friend bool operator==(const QuantizedGrid&, const QuantizedGrid&) = default;
};

/// [d,h,w,n_D] -> [2,d,h,w,n_D/2]; half 0 holds channels [0, n_D/2).
Tensor split_halves(const LatentGrid& z);
/// Inverse of split_halves.
LatentGrid stack_halves(const Tensor& halves);

struct CodecConfig {
  std::size_t codebook_size = 64;
  std::size_t latent_dim = 16;  // n_D
  std::size_t hidden_channels = 8;
  double beta = 0.25;
  double learning_rate = 2e-3;
  std::size_t iterations = 5000;
  double leak = 0.2;
  std::size_t restart_interval = 250;

  friend bool operator==(const CodecConfig&, const CodecConfig&) = default;
};

inline constexpr std::size_t kDownsample = 4;

struct CodecParams {
  CodecConfig config;
  Extents input_extents{32, 32, 32};
  Tensor enc1_w, enc1_b, enc2_w, enc2_b;
  Tensor dec1_w, dec1_b, dec2_w, dec2_b;
  Codebook codebook;

  static CodecParams initialize(const CodecConfig& config, Extents input_extents, std::uint64_t seed);

  Extents latent_extents() const;
  std::vector<Tensor*> weights();
  std::vector<const Tensor*> weights() const;

  friend bool operator==(const CodecParams&, const CodecParams&) = default;
};

LatentGrid encode(const Volume& x, const CodecParams& params);

struct Quantization {
  QuantizedGrid quantized;
  std::vector<std::size_t> primary;   // per half-vector, split_halves order
  std::vector<std::size_t> residual;
};

Quantization quantize(const LatentGrid& z, const Codebook& codebook);

/// Decoder output clamped to [0,1].
Volume decode(const QuantizedGrid& q, const CodecParams& params);

/// decode(quantize(encode(x)))
Volume reconstruct(const Volume& x, const CodecParams& params);

struct CodecTrainResult {
  CodecParams params;
  std::vector<double> loss_trace;   // total loss per iteration
  std::vector<double> recon_trace;  // reconstruction MSE per iteration
};

/// Adam on reconstruction MSE + codebook loss + beta * commitment loss with a
/// straight-through estimator across quantization. Batch size 1.
CodecTrainResult train_codec(std::span<const Volume> dataset, CodecParams params, std::uint64_t seed);

/// Fraction of codebook entries chosen as either index on `dataset`.
double codebook_usage(std::span<const Volume> dataset, const CodecParams& params);

}  // namespace voxsynth
