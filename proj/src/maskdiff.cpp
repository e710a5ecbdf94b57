#include "maskdiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rng.hpp"

namespace voxsynth {

std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::factorial ? "factorial" : "linear"; }

ScheduleKind parse_schedule_kind(std::string_view text) {
  if (text == "factorial") return ScheduleKind::factorial;
  if (text == "linear") return ScheduleKind::linear;
  throw DiffusionError("unknown schedule kind '" + std::string(text) + "'");
}

void MaskSchedule::validate() const {
  if (steps < 1) throw DiffusionError("schedule: steps must be >= 1");
}

double MaskSchedule::visible_fraction(std::size_t t) const {
  if (t > steps) throw DiffusionError("schedule: step " + std::to_string(t) + " outside [0," + std::to_string(steps) + "]");
  if (kind == ScheduleKind::linear) return 1.0 - static_cast<double>(t) / static_cast<double>(steps);
  double v = 1.0;
  for (std::size_t s = 2; s <= t; ++s) v /= static_cast<double>(s);
  return v;
}

double MaskSchedule::keep_probability(std::size_t t) const {
  if (t < 1 || t > steps)
    throw DiffusionError("schedule: step " + std::to_string(t) + " outside [1," + std::to_string(steps) + "]");
  if (kind == ScheduleKind::factorial) return 1.0 / static_cast<double>(t);
  const double before = visible_fraction(t - 1);
  return before > 0.0 ? visible_fraction(t) / before : 0.0;
}

SubcodePartition SubcodePartition::even(std::size_t depth, std::size_t count) {
  if (count < 1 || count > depth)
    throw DiffusionError("partition: cannot split depth " + std::to_string(depth) + " into " + std::to_string(count));
  SubcodePartition p;
  std::size_t begin = 0;
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t len = depth / count + (n < depth % count ? 1 : 0);
    p.boundaries.emplace_back(begin, begin + len);
    begin += len;
  }
  return p;
}

void SubcodePartition::validate(std::size_t depth) const {
  if (boundaries.empty()) throw DiffusionError("partition: no subcodes");
  std::size_t expect = 0;
  for (std::size_t n = 0; n < boundaries.size(); ++n) {
    const auto [b, e] = boundaries[n];
    if (b < expect) throw DiffusionError("partition: subcode " + std::to_string(n) + " overlaps its predecessor");
    if (b > expect) throw DiffusionError("partition: gap before subcode " + std::to_string(n));
    if (e <= b) throw DiffusionError("partition: subcode " + std::to_string(n) + " is empty");
    expect = e;
  }
  if (expect != depth)
    throw DiffusionError("partition: covers depth " + std::to_string(expect) + " of " + std::to_string(depth));
}

std::vector<RCode> partition(const RCode& code, const SubcodePartition& part) {
  part.validate(code.grid[1]);
  const std::size_t slab = code.grid[2] * code.grid[3] * 2;  // tokens per depth slice
  std::vector<RCode> out;
  for (const auto& [b, e] : part.boundaries) {
    RCode sub;
    sub.grid = {code.grid[0], e - b, code.grid[2], code.grid[3]};
    sub.tokens.reserve(sub.cells() * 2);
    for (std::size_t half = 0; half < code.grid[0]; ++half) {
      const auto first = code.tokens.begin() + static_cast<std::ptrdiff_t>((half * code.grid[1] + b) * slab);
      sub.tokens.insert(sub.tokens.end(), first, first + static_cast<std::ptrdiff_t>((e - b) * slab));
    }
    out.push_back(std::move(sub));
  }
  return out;
}

RCode concatenate(std::span<const RCode> subcodes) {
  if (subcodes.empty()) throw DiffusionError("concatenate: no subcodes");
  RCode out;
  out.grid = subcodes.front().grid;
  out.grid[1] = 0;
  for (const auto& s : subcodes) {
    if (s.grid[0] != out.grid[0] || s.grid[2] != out.grid[2] || s.grid[3] != out.grid[3])
      throw DiffusionError("concatenate: subcode grids disagree off the depth axis");
    out.grid[1] += s.grid[1];
  }
  const std::size_t slab = out.grid[2] * out.grid[3] * 2;
  out.tokens.reserve(out.cells() * 2);
  for (std::size_t half = 0; half < out.grid[0]; ++half)
    for (const auto& s : subcodes) {
      const auto first = s.tokens.begin() + static_cast<std::ptrdiff_t>(half * s.grid[1] * slab);
      out.tokens.insert(out.tokens.end(), first, first + static_cast<std::ptrdiff_t>(s.grid[1] * slab));
    }
  return out;
}

std::size_t count_token(const RCode& code, std::uint32_t token) {
  return static_cast<std::size_t>(std::count(code.tokens.begin(), code.tokens.end(), token));
}

RCode fdp_mask(const RCode& subcode, std::size_t t, const MaskSchedule& schedule, std::uint64_t seed,
               std::uint32_t mask) {
  schedule.validate();
  if (t < 1 || t > schedule.steps)
    throw DiffusionError("fdp_mask: step " + std::to_string(t) + " outside [1," + std::to_string(schedule.steps) + "]");
  RCode out = subcode;
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t s = 1; s <= t; ++s) {
    const double keep = schedule.keep_probability(s);
    if (keep >= 1.0) continue;
    for (auto& tok : out.tokens)
      if (tok != mask && u(rng) >= keep) tok = mask;
  }
  return out;
}

namespace {

double masked_cross_entropy(const std::vector<double>& logits, std::size_t categories, const RCode& noisy,
                            const RCode& target, std::uint32_t mask) {
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < noisy.tokens.size(); ++i) {
    if (noisy.tokens[i] != mask) continue;
    const double* row = logits.data() + i * categories;
    const double mx = *std::max_element(row, row + categories);
    double z = 0.0;
    for (std::size_t k = 0; k < categories; ++k) z += std::exp(row[k] - mx);
    total += std::log(z) + mx - row[target.tokens[i]];
    ++counted;
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

void check_pair(const RCode& noisy, const RCode& target) {
  if (noisy.grid != target.grid || noisy.tokens.size() != target.tokens.size())
    throw DiffusionError("denoiser: noisy and target subcodes differ in shape");
}

Tensor code_rows(std::span<const RCode> codes) {
  const std::size_t width = 4 + codes.front().tokens.size();
  Tensor t({codes.size(), width});
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i].tokens.size() + 4 != width) throw DiffusionError("denoiser state: ragged training codes");
    double* row = t.data.data() + i * width;
    for (int a = 0; a < 4; ++a) row[a] = static_cast<double>(codes[i].grid[a]);
    for (std::size_t k = 0; k < codes[i].tokens.size(); ++k) row[4 + k] = codes[i].tokens[k];
  }
  return t;
}

std::vector<RCode> rows_to_codes(const Tensor& t) {
  if (t.rank() != 2 || t.shape[1] < 4) throw DiffusionError("denoiser state: malformed code table");
  std::vector<RCode> out(t.shape[0]);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* row = t.data.data() + i * t.shape[1];
    for (int a = 0; a < 4; ++a) out[i].grid[a] = static_cast<std::size_t>(row[a]);
    out[i].tokens.resize(t.shape[1] - 4);
    for (std::size_t k = 0; k < out[i].tokens.size(); ++k) out[i].tokens[k] = static_cast<std::uint32_t>(row[4 + k]);
    if (out[i].cells() * 2 != out[i].tokens.size()) throw DiffusionError("denoiser state: code grid mismatch");
  }
  return out;
}

const Tensor& find_state(const DenoiserState& state, std::string_view name) {
  for (const auto& [n, t] : state)
    if (n == name) return t;
  throw DiffusionError("denoiser state: missing '" + std::string(name) + "'");
}

Tensor schedule_tensor(const MaskSchedule& s) {
  return Tensor({2}, {s.kind == ScheduleKind::factorial ? 0.0 : 1.0, static_cast<double>(s.steps)});
}

MaskSchedule schedule_from(const Tensor& t) {
  if (t.size() != 2) throw DiffusionError("denoiser state: malformed schedule");
  MaskSchedule s;
  s.kind = t[0] == 0.0 ? ScheduleKind::factorial : ScheduleKind::linear;
  s.steps = static_cast<std::size_t>(t[1]);
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tabular

TabularDenoiser::TabularDenoiser(std::size_t categories, double smoothing) : Denoiser(categories), smoothing_(smoothing) {
  if (categories < 1) throw DiffusionError("tabular: need at least one category");
  if (!(smoothing > 0.0) || !std::isfinite(smoothing)) throw DiffusionError("tabular: smoothing must be positive");
}

void TabularDenoiser::observe(std::span<const std::vector<RCode>> partitioned) {
  if (partitioned.empty()) throw DiffusionError("tabular: empty training set");
  const std::size_t parts = partitioned.front().size();
  training_.assign(parts, {});
  for (const auto& subs : partitioned) {
    if (subs.size() != parts) throw DiffusionError("tabular: training codes partitioned inconsistently");
    for (std::size_t n = 0; n < parts; ++n) training_[n].push_back(subs[n]);
  }
  slots_.assign(parts, {});
  for (std::size_t n = 0; n < parts; ++n) {
    const std::size_t len = training_[n].front().tokens.size();
    auto& slots = slots_[n];
    slots.assign(len, Slot{std::vector<std::uint32_t>(categories_, 0), {}});
    for (std::size_t i = 0; i < training_[n].size(); ++i) {
      const RCode& code = training_[n][i];
      if (code.tokens.size() != len) throw DiffusionError("tabular: subcode lengths differ across training codes");
      const RCode* cond = n > 0 ? &training_[n - 1][i] : nullptr;
      const bool aligned = cond && cond->tokens.size() == len;
      for (std::size_t p = 0; p < len; ++p) {
        const std::uint32_t tok = code.tokens[p];
        if (tok >= categories_) throw DiffusionError("tabular: training token out of range");
        ++slots[p].marginal[tok];
        if (aligned) slots[p].pairs.emplace_back(cond->tokens[p], tok);
      }
    }
    for (auto& s : slots) std::sort(s.pairs.begin(), s.pairs.end());
  }
}

std::vector<double> TabularDenoiser::logits(const RCode& noisy, const RCode* condition, std::size_t,
                                            std::size_t subcode) const {
  if (subcode >= slots_.size()) throw DiffusionError("tabular: model has no subcode " + std::to_string(subcode));
  const auto& slots = slots_[subcode];
  if (noisy.tokens.size() != slots.size()) throw DiffusionError("tabular: subcode length differs from training");
  const bool aligned = condition && subcode > 0 && condition->tokens.size() == slots.size();
  std::vector<double> out(slots.size() * categories_);
  std::vector<double> counts(categories_);
  for (std::size_t p = 0; p < slots.size(); ++p) {
    std::fill(counts.begin(), counts.end(), 0.0);
    double total = 0.0;
    if (aligned) {
      const std::uint32_t c = condition->tokens[p];
      auto lo = std::lower_bound(slots[p].pairs.begin(), slots[p].pairs.end(), std::make_pair(c, std::uint32_t{0}));
      for (; lo != slots[p].pairs.end() && lo->first == c; ++lo) {
        counts[lo->second] += 1.0;
        total += 1.0;
      }
    }
    if (total == 0.0)
      for (std::size_t k = 0; k < categories_; ++k) total += (counts[k] = slots[p].marginal[k]);
    const double denom = total + smoothing_ * static_cast<double>(categories_);
    for (std::size_t k = 0; k < categories_; ++k) out[p * categories_ + k] = std::log((counts[k] + smoothing_) / denom);
  }
  return out;
}

double TabularDenoiser::train_step(const RCode& noisy, const RCode* condition, std::size_t t, std::size_t subcode,
                                   const RCode& target) {
  check_pair(noisy, target);
  return masked_cross_entropy(logits(noisy, condition, t, subcode), categories_, noisy, target, mask_token());
}

DenoiserState TabularDenoiser::state() const {
  DenoiserState s;
  s.emplace_back("tabular.meta", Tensor({3}, {static_cast<double>(categories_), smoothing_,
                                              static_cast<double>(training_.size())}));
  s.emplace_back("schedule", schedule_tensor(schedule));
  for (std::size_t n = 0; n < training_.size(); ++n)
    s.emplace_back("tabular.codes." + std::to_string(n), code_rows(training_[n]));
  return s;
}

std::unique_ptr<TabularDenoiser> TabularDenoiser::from_state(const DenoiserState& state) {
  const Tensor& meta = find_state(state, "tabular.meta");
  if (meta.size() != 3) throw DiffusionError("denoiser state: malformed tabular.meta");
  auto model = std::make_unique<TabularDenoiser>(static_cast<std::size_t>(meta[0]), meta[1]);
  model->schedule = schedule_from(find_state(state, "schedule"));
  const auto parts = static_cast<std::size_t>(meta[2]);
  std::vector<std::vector<RCode>> per_part;
  for (std::size_t n = 0; n < parts; ++n) per_part.push_back(rows_to_codes(find_state(state, "tabular.codes." + std::to_string(n))));
  if (parts == 0) return model;
  std::vector<std::vector<RCode>> partitioned(per_part.front().size());
  for (std::size_t i = 0; i < partitioned.size(); ++i)
    for (std::size_t n = 0; n < parts; ++n) partitioned[i].push_back(per_part[n].at(i));
  model->observe(partitioned);
  return model;
}

// ---------------------------------------------------------------------------
// Neural

namespace {

enum Param : std::size_t { kTok, kPos, kSeg, kTime, kWq, kWk, kWv, kWo, kW1, kB1, kW2, kB2, kWout, kBout, kParamCount };

constexpr const char* kParamNames[kParamCount] = {"tok", "pos", "seg", "time", "wq", "wk", "wv",
                                                  "wo",  "w1",  "b1",  "w2",   "b2", "wout", "bout"};

}  // namespace

NeuralDenoiser::NeuralDenoiser(std::size_t categories, std::size_t max_sequence, std::size_t steps, Options opt,
                               std::uint64_t seed)
    : Denoiser(categories), opt_(opt), max_sequence_(max_sequence), steps_(steps) {
  if (categories < 1 || max_sequence < 1 || steps < 1 || opt.embed < 1 || opt.hidden < 1)
    throw DiffusionError("neural: sizes must be positive");
  const std::size_t E = opt.embed, H = opt.hidden, C = categories;
  const std::vector<Shape> shapes = {{C + 1, E}, {max_sequence, E}, {2, E}, {steps + 1, E}, {E, E}, {E, E}, {E, E},
                                     {E, E},     {E, H},            {H},    {H, E},          {E},    {E, C}, {C}};
  Rng rng(seed);
  for (std::size_t i = 0; i < kParamCount; ++i) {
    Tensor t(shapes[i]);
    const bool bias = t.rank() == 1;
    const bool table = i <= kTime;
    const double bound = table ? 0.1 : 1.0 / std::sqrt(static_cast<double>(shapes[i][0]));
    std::uniform_real_distribution<double> u(-bound, bound);
    if (!bias)
      for (auto& v : t.data) v = u(rng);
    params_.push_back(std::move(t));
  }
  adam_ = std::make_unique<Adam>(parameters(), Adam::Options{opt.learning_rate});
}

std::vector<Tensor*> NeuralDenoiser::parameters() {
  std::vector<Tensor*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::size_t NeuralDenoiser::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

Var NeuralDenoiser::forward(Tape& tape, const std::vector<Var>& p, const RCode& noisy, const RCode* condition,
                            std::size_t t) const {
  (void)tape;
  const std::size_t C = condition ? condition->tokens.size() : 0;
  const std::size_t L = noisy.tokens.size();
  const std::size_t n = C + L;
  if (n > max_sequence_)
    throw DiffusionError("neural: sequence of " + std::to_string(n) + " exceeds " + std::to_string(max_sequence_));
  if (t < 1 || t > steps_) throw DiffusionError("neural: step " + std::to_string(t) + " out of range");
  std::vector<std::size_t> ids(n), pos(n), seg(n), time(n, t);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t tok = i < C ? condition->tokens[i] : noisy.tokens[i - C];
    if (tok > categories_) throw DiffusionError("neural: token out of range");
    ids[i] = tok;
    pos[i] = i;
    seg[i] = i < C ? 0 : 1;
  }
  Var x = add(add(embedding(p[kTok], ids), embedding(p[kPos], pos)),
              add(embedding(p[kSeg], seg), embedding(p[kTime], time)));
  Var q = matmul(x, p[kWq]);
  Var k = matmul(x, p[kWk]);
  Var v = matmul(x, p[kWv]);
  Var att = softmax(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(opt_.embed))));
  Var h = add(x, matmul(matmul(att, v), p[kWo]));
  Var f = linear(leaky_relu(linear(h, p[kW1], p[kB1])), p[kW2], p[kB2]);
  Var h2 = add(h, f);
  Var out = C > 0 ? slice_rows(h2, C, n) : h2;
  return linear(out, p[kWout], p[kBout]);
}

Var NeuralDenoiser::loss(Tape& tape, const std::vector<Var>& p, const RCode& noisy, const RCode* condition,
                         std::size_t t, const RCode& target) const {
  check_pair(noisy, target);
  std::vector<std::size_t> targets(noisy.tokens.size(), kIgnore);
  for (std::size_t i = 0; i < targets.size(); ++i)
    if (noisy.tokens[i] == mask_token()) targets[i] = target.tokens[i];
  return cross_entropy(forward(tape, p, noisy, condition, t), targets);
}

std::vector<double> NeuralDenoiser::logits(const RCode& noisy, const RCode* condition, std::size_t t,
                                           std::size_t) const {
  Tape tape;
  std::vector<Var> p;
  for (const auto& t0 : params_) p.push_back(tape.constant(t0));
  return forward(tape, p, noisy, condition, t).value().data;
}

double NeuralDenoiser::train_step(const RCode& noisy, const RCode* condition, std::size_t t, std::size_t,
                                  const RCode& target) {
  if (count_token(noisy, mask_token()) == 0) return 0.0;
  Tape tape;
  std::vector<Var> p;
  for (const auto& t0 : params_) p.push_back(tape.leaf(t0, true));
  Var l = loss(tape, p, noisy, condition, t, target);
  tape.backward(l);
  std::vector<Tensor> grads;
  for (const auto& v : p) grads.push_back(tape.grad(v));
  adam_->step(grads);
  return l.value()[0];
}

DenoiserState NeuralDenoiser::state() const {
  DenoiserState s;
  s.emplace_back("neural.meta", Tensor({6}, {static_cast<double>(categories_), static_cast<double>(max_sequence_),
                                             static_cast<double>(steps_), static_cast<double>(opt_.embed),
                                             static_cast<double>(opt_.hidden), opt_.learning_rate}));
  s.emplace_back("schedule", schedule_tensor(schedule));
  for (std::size_t i = 0; i < kParamCount; ++i) s.emplace_back(std::string("neural.") + kParamNames[i], params_[i]);
  return s;
}

std::unique_ptr<NeuralDenoiser> NeuralDenoiser::from_state(const DenoiserState& state) {
  const Tensor& meta = find_state(state, "neural.meta");
  if (meta.size() != 6) throw DiffusionError("denoiser state: malformed neural.meta");
  Options opt{static_cast<std::size_t>(meta[3]), static_cast<std::size_t>(meta[4]), meta[5]};
  auto model = std::make_unique<NeuralDenoiser>(static_cast<std::size_t>(meta[0]), static_cast<std::size_t>(meta[1]),
                                                static_cast<std::size_t>(meta[2]), opt, 0);
  model->schedule = schedule_from(find_state(state, "schedule"));
  for (std::size_t i = 0; i < kParamCount; ++i) {
    const Tensor& t = find_state(state, std::string("neural.") + kParamNames[i]);
    if (t.shape != model->params_[i].shape) throw DiffusionError(std::string("denoiser state: bad shape for ") + kParamNames[i]);
    model->params_[i] = t;
  }
  return model;
}

std::unique_ptr<Denoiser> denoiser_from_state(const DenoiserState& state) {
  for (const auto& [name, t] : state) {
    if (name == "tabular.meta") return TabularDenoiser::from_state(state);
    if (name == "neural.meta") return NeuralDenoiser::from_state(state);
  }
  throw DiffusionError("denoiser state: unknown model kind");
}

// ---------------------------------------------------------------------------

DenoiserTrainResult train_denoiser(std::span<const RCode> codes, const SubcodePartition& part,
                                   const MaskSchedule& schedule, Denoiser& model, std::size_t epochs,
                                   std::uint64_t seed) {
  if (codes.empty()) throw DiffusionError("train_denoiser: no training codes");
  schedule.validate();
  std::vector<std::vector<RCode>> partitioned;
  for (const auto& c : codes) {
    if (c.grid != codes.front().grid) throw DiffusionError("train_denoiser: training codes differ in shape");
    if (std::any_of(c.tokens.begin(), c.tokens.end(), [&](std::uint32_t k) { return k >= model.categories(); }))
      throw DiffusionError("train_denoiser: token outside the model's categories");
    partitioned.push_back(partition(c, part));
  }
  model.schedule = schedule;
  model.observe(partitioned);

  DenoiserTrainResult result;
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> step(1, schedule.steps);
  std::vector<std::size_t> order(codes.size());
  for (std::size_t e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t i : order) {
      const auto& subs = partitioned[i];
      for (std::size_t n = 0; n < subs.size(); ++n) {
        const std::size_t t = step(rng);
        const RCode noisy = fdp_mask(subs[n], t, schedule, rng(), model.mask_token());
        if (count_token(noisy, model.mask_token()) == 0) continue;
        const double l = model.train_step(noisy, n > 0 ? &subs[n - 1] : nullptr, t, n, subs[n]);
        if (!std::isfinite(l)) throw DiffusionError("train_denoiser: non-finite loss in epoch " + std::to_string(e));
        total += l;
        ++counted;
      }
    }
    result.loss_trace.push_back(counted ? total / static_cast<double>(counted) : 0.0);
  }
  return result;
}

RCode rdp_step(const RCode& noisy, const RCode* condition, std::size_t t, std::size_t subcode,
               const MaskSchedule& schedule, const Denoiser& model, std::uint64_t seed) {
  if (t < 1 || t > schedule.steps) throw DiffusionError("rdp_step: step " + std::to_string(t) + " out of range");
  const std::uint32_t mask = model.mask_token();
  std::vector<std::size_t> masked;
  for (std::size_t i = 0; i < noisy.tokens.size(); ++i)
    if (noisy.tokens[i] == mask) masked.push_back(i);
  if (masked.empty()) return noisy;

  const double total = static_cast<double>(noisy.tokens.size());
  const auto target_masked = static_cast<std::size_t>(std::llround(total * (1.0 - schedule.visible_fraction(t - 1))));
  const std::size_t reveal = t == 1 ? masked.size() : masked.size() - std::min(masked.size(), target_masked);
  if (reveal == 0) return noisy;

  Rng rng(seed);
  std::shuffle(masked.begin(), masked.end(), rng);
  masked.resize(reveal);
  std::sort(masked.begin(), masked.end());

  const auto logits = model.logits(noisy, condition, t, subcode);
  const std::size_t C = model.categories();
  RCode out = noisy;
  std::vector<double> w(C);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i : masked) {
    const double* row = logits.data() + i * C;
    const double mx = *std::max_element(row, row + C);
    double z = 0.0;
    for (std::size_t k = 0; k < C; ++k) z += (w[k] = std::exp(row[k] - mx));
    double r = u(rng) * z;
    std::size_t k = 0;
    while (k + 1 < C && r >= w[k]) r -= w[k++];
    out.tokens[i] = static_cast<std::uint32_t>(k);
  }
  return out;
}

RCode sample_rcode(const std::array<std::size_t, 4>& grid, const SubcodePartition& part, const MaskSchedule& schedule,
                   const Denoiser& model, std::uint64_t seed) {
  if (!(schedule == model.schedule))
    throw DiffusionError("sample_rcode: model was trained with schedule " + to_string(model.schedule.kind) + "/" +
                         std::to_string(model.schedule.steps) + ", asked for " + to_string(schedule.kind) + "/" +
                         std::to_string(schedule.steps));
  part.validate(grid[1]);
  std::vector<RCode> subs;
  for (std::size_t n = 0; n < part.count(); ++n) {
    RCode sub;
    sub.grid = {grid[0], part.boundaries[n].second - part.boundaries[n].first, grid[2], grid[3]};
    sub.tokens.assign(sub.cells() * 2, model.mask_token());
    const RCode* cond = n > 0 ? &subs[n - 1] : nullptr;
    for (std::size_t t = schedule.steps; t >= 1; --t)
      sub = rdp_step(sub, cond, t, n, schedule, model, derive_seed(seed, n * (schedule.steps + 1) + t));
    subs.push_back(std::move(sub));
  }
  return concatenate(subs);
}

}  // namespace voxsynth
