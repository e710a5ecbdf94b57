#include <cmath>
#include <random>

#include "checks.hpp"
#include "disentangle.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace voxsynth;

namespace {

using check::random_metadata;

QuantizedGrid as_quantized(const std::vector<double>& flat, Extents e, std::size_t channels) {
  QuantizedGrid q;
  q.grid = LatentGrid(e, channels);
  q.grid.values = flat;
  return q;
}

using check::random_codebook;

}  // namespace

TEST_SUITE("disentangle") {
  TEST_CASE("fit_glm matches the elimination pseudo-inverse and residuals are orthogonal to M") {
    const auto g = check::glm_against_oracle(20, 31);
    MESSAGE("coefficient error " << g.coef_error << ", max |M^T r| " << g.orthogonality);
    CHECK(g.coef_error < 1e-8);
    CHECK(g.orthogonality < 1e-8);
  }

  TEST_CASE("noiseless linear encodings recover P exactly") {
    std::mt19937_64 rng(32);
    const std::size_t L = 24;
    const auto P0 = oracle::random_tensor({L, 3}, rng, -2, 2).data;
    const auto meta = random_metadata(12, rng);
    std::vector<std::vector<double>> Q;
    for (const auto& m : meta) {
      std::vector<double> q(L, 0.0);
      const auto v = m.vector();
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t a = 0; a < 3; ++a) q[l] += P0[l * 3 + a] * v[a];
      Q.push_back(q);
    }
    const auto glm = fit_glm(Q, meta);
    for (std::size_t i = 0; i < P0.size(); ++i) CHECK(std::abs(glm.P[i] - P0[i]) < 1e-8);
    CHECK(glm.age_min_years == 13.0);
    CHECK(glm.age_max_years == 91.0);
  }

  TEST_CASE("rank-deficient designs name the column") {
    std::mt19937_64 rng(33);
    std::vector<std::vector<double>> Q(5, std::vector<double>(4, 1.0));
    auto meta = random_metadata(5, rng);
    for (auto& m : meta) m.sex = 1.0;
    try {
      fit_glm(Q, meta);
      FAIL("expected a rank failure");
    } catch (const GlmError& e) {
      CHECK(std::string(e.what()).find("sex") != std::string::npos);
    }
    auto same = meta;
    for (auto& m : same) m = meta[0];
    CHECK_THROWS_AS(fit_glm(Q, same), GlmError);
    CHECK_THROWS_AS(fit_glm(std::span(Q).first(2), std::span(meta).first(2)), GlmError);
  }

  TEST_CASE("a constant shift moves only the bias column and leaves residuals unchanged") {
    std::mt19937_64 rng(34);
    const std::size_t L = 10;
    const auto meta = random_metadata(15, rng);
    std::vector<std::vector<double>> Q, Qc;
    const auto c = oracle::random_tensor({L}, rng, -5, 5).data;
    for (std::size_t i = 0; i < meta.size(); ++i) {
      Q.push_back(oracle::random_tensor({L}, rng).data);
      Qc.push_back(Q.back());
      for (std::size_t l = 0; l < L; ++l) Qc.back()[l] += c[l];
    }
    const auto a = fit_glm(Q, meta);
    const auto b = fit_glm(Qc, meta);
    for (std::size_t l = 0; l < L; ++l) {
      CHECK(b.P[l * 3] - a.P[l * 3] == doctest::Approx(c[l]).epsilon(1e-10));
      CHECK(std::abs(b.P[l * 3 + 1] - a.P[l * 3 + 1]) < 1e-10);
      CHECK(std::abs(b.P[l * 3 + 2] - a.P[l * 3 + 2]) < 1e-10);
    }
    for (std::size_t i = 0; i < meta.size(); ++i) {
      const auto ra = split(as_quantized(Q[i], {1, 1, 1}, L), meta[i], a);
      const auto rb = split(as_quantized(Qc[i], {1, 1, 1}, L), meta[i], b);
      for (std::size_t l = 0; l < L; ++l) CHECK(std::abs(ra.values[l] - rb.values[l]) < 1e-10);
    }
  }

  TEST_CASE("split reproduces q as closely as doubles allow and depends on metadata") {
    std::mt19937_64 rng(35);
    const auto meta = random_metadata(8, rng);
    std::vector<std::vector<double>> Q;
    for (std::size_t i = 0; i < 8; ++i) Q.push_back(oracle::random_tensor({16}, rng).data);
    const auto glm = fit_glm(Q, meta);
    for (std::size_t i = 0; i < 8; ++i) {
      const auto q = as_quantized(Q[i], {1, 1, 1}, 16);
      const auto r = split(q, meta[i], glm);
      const auto pm = glm.project(meta[i].vector());
      for (std::size_t l = 0; l < 16; ++l) {
        const double t = q.grid.values[l];
        const double sum = pm[l] + r.values[l];
        CHECK(std::abs(sum - t) <= 0x1p-52 * std::max(std::abs(t), std::abs(pm[l])));
        if (sum == t) continue;
        // no double within 8 ulps of r reproduces q either
        double lo = r.values[l], hi = r.values[l];
        for (int s = 0; s < 8; ++s) {
          lo = std::nextafter(lo, -HUGE_VAL);
          hi = std::nextafter(hi, HUGE_VAL);
          CHECK(pm[l] + lo != t);
          CHECK(pm[l] + hi != t);
        }
      }
    }
    const auto q = as_quantized(Q[0], {1, 1, 1}, 16);
    CHECK(split(q, std::array<double, 3>{0, 0, 0}, glm).values == q.grid.values);
    CHECK(split(q, meta[0], glm) != split(q, meta[1], glm));
  }

  TEST_CASE("rcodes round-trip residuals built from codebook sums") {
    std::mt19937_64 rng(36);
    const auto cb = random_codebook(16, 4, rng);
    const Extents e{2, 3, 2};
    const std::size_t halves = 2 * 12;
    std::uniform_int_distribution<std::size_t> pick(1, 15);
    std::vector<std::size_t> k1(halves), k2(halves);
    Tensor h({2, 2, 3, 2, 4});
    for (std::size_t i = 0; i < halves; ++i) {
      k1[i] = pick(rng);
      k2[i] = 0;
      for (std::size_t j = 0; j < 4; ++j) h.data[i * 4 + j] = cb.entry(k1[i])[j];
    }
    const auto r = stack_halves(h);
    const auto code = residual_to_rcode(r, cb);
    CHECK(code.grid == std::array<std::size_t, 4>{2, 2, 3, 2});
    for (std::size_t i = 0; i < halves; ++i) {
      CHECK(code.tokens[2 * i] == k1[i]);
      CHECK(code.tokens[2 * i + 1] == k2[i]);
    }
    CHECK(dequantize(code, cb) == r);

    const auto zero = residual_to_rcode(LatentGrid(e, 8), cb);
    for (auto t : zero.tokens) CHECK(t == 0);

    const auto big = residual_to_rcode(LatentGrid({8, 8, 8}, 16), Codebook(16, 8));
    CHECK(big.grid == std::array<std::size_t, 4>{2, 8, 8, 8});
  }

  TEST_CASE("recombine adds P m to the dequantized code") {
    std::mt19937_64 rng(37);
    const auto cb = random_codebook(8, 2, rng);
    const auto meta = random_metadata(6, rng);
    std::vector<std::vector<double>> Q;
    for (std::size_t i = 0; i < 6; ++i) Q.push_back(oracle::random_tensor({8}, rng).data);
    const auto glm = fit_glm(Q, meta);

    const auto q = as_quantized(Q[2], {1, 1, 2}, 4);
    const auto r = split(q, meta[2], glm);
    const auto code = residual_to_rcode(r, cb);
    const auto back = recombine(code, meta[2], glm, cb);
    const auto deq = dequantize(code, cb);
    const auto pm = glm.project(meta[2].vector());
    for (std::size_t l = 0; l < 8; ++l) CHECK(back.grid.values[l] == doctest::Approx(pm[l] + deq.values[l]).epsilon(1e-15));

    // the round trip moves q by exactly the fine-quantization error of r
    const auto hr = split_halves(r);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto f = fine_quantize(std::span<const double>(hr.data.data() + 2 * i, 2), cb);
      const auto hb = split_halves(back.grid);
      const auto hq = split_halves(q.grid);
      for (std::size_t j = 0; j < 2; ++j)
        CHECK(hq.data[2 * i + j] - hb.data[2 * i + j] == doctest::Approx(hr.data[2 * i + j] - f.q[j]).epsilon(1e-12));
    }

    RCode zero = code;
    std::fill(zero.tokens.begin(), zero.tokens.end(), 0u);
    CHECK(recombine(zero, meta[0], glm, cb).grid.values == glm.project(meta[0].vector()));

    RCode masked = code;
    masked.tokens[3] = static_cast<std::uint32_t>(cb.size());
    CHECK(masked.contains(static_cast<std::uint32_t>(cb.size())));
    CHECK_THROWS_AS(recombine(masked, meta[0], glm, cb), GlmError);
  }
}
