#pragma once

// Masked categorical diffusion over R-codes: forward masking, reverse
// unmasking with a learned denoiser, and subcode-by-subcode sampling.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "disentangle.hpp"
#include "optim.hpp"
#include "tensor.hpp"

namespace voxsynth {

class DiffusionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ScheduleKind { factorial, linear };

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view text);

struct MaskSchedule {
  ScheduleKind kind = ScheduleKind::linear;
  std::size_t steps = 16;  // T

  /// Expected fraction of entries still visible after t forward steps, t in [0, T].
  double visible_fraction(std::size_t t) const;
  /// Probability that an entry visible before step t survives it, t in [1, T].
  double keep_probability(std::size_t t) const;
  void validate() const;

  friend bool operator==(const MaskSchedule&, const MaskSchedule&) = default;
};

/// Contiguous depth ranges [begin, end) of the code grid, one per subcode.
struct SubcodePartition {
  std::vector<std::pair<std::size_t, std::size_t>> boundaries;

  /// `count` nearly equal blocks; earlier blocks take the remainder.
  static SubcodePartition even(std::size_t depth, std::size_t count);
  std::size_t count() const { return boundaries.size(); }
  /// Throws DiffusionError on overlap, gap or a range outside [0, depth).
  void validate(std::size_t depth) const;

  friend bool operator==(const SubcodePartition&, const SubcodePartition&) = default;
};

std::vector<RCode> partition(const RCode& code, const SubcodePartition& part);
/// Inverse of partition: joins subcodes along depth.
RCode concatenate(std::span<const RCode> subcodes);

std::size_t count_token(const RCode& code, std::uint32_t token);

/// Forward process: each entry passes t independent keep trials, masked
/// entries become `mask`. Deterministic given `seed`.
RCode fdp_mask(const RCode& subcode, std::size_t t, const MaskSchedule& schedule, std::uint64_t seed, std::uint32_t mask);

/// Named tensors describing a denoiser, used for persistence.
using DenoiserState = std::vector<std::pair<std::string, Tensor>>;

class Denoiser {
 public:
  explicit Denoiser(std::size_t categories) : categories_(categories) {}
  virtual ~Denoiser() = default;

  virtual std::string kind() const = 0;
  std::size_t categories() const { return categories_; }
  std::uint32_t mask_token() const { return static_cast<std::uint32_t>(categories_); }

  /// Row-major [tokens, categories] logits for every entry of `noisy`.
  virtual std::vector<double> logits(const RCode& noisy, const RCode* condition, std::size_t t,
                                     std::size_t subcode) const = 0;

  /// Sees the full partitioned training set once before any step.
  virtual void observe(std::span<const std::vector<RCode>> partitioned) { (void)partitioned; }

  /// Mean cross-entropy over masked entries for one example; trainable
  /// models also update their parameters.
  virtual double train_step(const RCode& noisy, const RCode* condition, std::size_t t, std::size_t subcode,
                            const RCode& target) = 0;

  virtual DenoiserState state() const = 0;

  /// Schedule the model was trained with; sampling refuses any other.
  MaskSchedule schedule;

 protected:
  std::size_t categories_;
};

/// Empirical per-position category counts. With a condition subcode of the
/// same shape, counts are taken over training examples sharing the condition
/// token at that position, falling back to the marginal when none do.
class TabularDenoiser final : public Denoiser {
 public:
  TabularDenoiser(std::size_t categories, double smoothing = 1.0);

  std::string kind() const override { return "tabular"; }
  double smoothing() const { return smoothing_; }

  std::vector<double> logits(const RCode& noisy, const RCode* condition, std::size_t t,
                             std::size_t subcode) const override;
  void observe(std::span<const std::vector<RCode>> partitioned) override;
  double train_step(const RCode& noisy, const RCode* condition, std::size_t t, std::size_t subcode,
                    const RCode& target) override;

  DenoiserState state() const override;
  static std::unique_ptr<TabularDenoiser> from_state(const DenoiserState& state);

 private:
  struct Slot {
    std::vector<std::uint32_t> marginal;                     // [categories]
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;  // sorted (condition, token)
  };
  std::vector<std::vector<Slot>> slots_;  // [subcode][position]
  std::vector<std::vector<RCode>> training_;
  double smoothing_;
};

/// One single-head self-attention block over [condition tokens, noisy
/// tokens] with token, position, segment and timestep embeddings, followed by
/// a position-wise two-layer network and a logit head.
class NeuralDenoiser final : public Denoiser {
 public:
  struct Options {
    std::size_t embed = 16;
    std::size_t hidden = 32;
    double learning_rate = 1e-2;
  };

  NeuralDenoiser(std::size_t categories, std::size_t max_sequence, std::size_t steps, Options opt, std::uint64_t seed);

  std::string kind() const override { return "neural"; }

  std::vector<double> logits(const RCode& noisy, const RCode* condition, std::size_t t,
                             std::size_t subcode) const override;
  double train_step(const RCode& noisy, const RCode* condition, std::size_t t, std::size_t subcode,
                    const RCode& target) override;

  DenoiserState state() const override;
  static std::unique_ptr<NeuralDenoiser> from_state(const DenoiserState& state);

  std::size_t parameter_count() const;
  std::vector<Tensor*> parameters();

  /// Masked-entry cross-entropy as a function of the parameter tensors bound
  /// on `tape`; exposed for gradient checks.
  Var loss(Tape& tape, const std::vector<Var>& params, const RCode& noisy, const RCode* condition, std::size_t t,
           const RCode& target) const;
  Var forward(Tape& tape, const std::vector<Var>& params, const RCode& noisy, const RCode* condition,
              std::size_t t) const;

 private:
  NeuralDenoiser(std::size_t categories, Options opt) : Denoiser(categories), opt_(opt) {}

  Options opt_;
  std::size_t max_sequence_ = 0;
  std::size_t steps_ = 0;
  // tok, pos, seg, time, wq, wk, wv, wo, w1, b1, w2, b2, wout, bout
  std::vector<Tensor> params_;
  std::unique_ptr<Adam> adam_;
};

std::unique_ptr<Denoiser> denoiser_from_state(const DenoiserState& state);

struct DenoiserTrainResult {
  std::vector<double> loss_trace;  // mean masked cross-entropy per epoch
};

/// Each epoch visits every training code in a shuffled order; every subcode
/// gets a uniform t in [1, T], is masked by the forward process and fed to
/// the model conditioned on the preceding subcode.
DenoiserTrainResult train_denoiser(std::span<const RCode> codes, const SubcodePartition& part,
                                   const MaskSchedule& schedule, Denoiser& model, std::size_t epochs,
                                   std::uint64_t seed);

/// One reverse step from level t to level t-1: unmasks a uniformly chosen set
/// of masked entries and fills them with samples from the model.
RCode rdp_step(const RCode& noisy, const RCode* condition, std::size_t t, std::size_t subcode,
               const MaskSchedule& schedule, const Denoiser& model, std::uint64_t seed);

/// Generates subcodes in order, each from an all-MASK start and conditioned
/// on the one before, and joins them. `grid` is the full code grid.
RCode sample_rcode(const std::array<std::size_t, 4>& grid, const SubcodePartition& part,
                   const MaskSchedule& schedule, const Denoiser& model, std::uint64_t seed);

}  // namespace voxsynth
