#include "disentangle.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

namespace voxsynth {

namespace {

constexpr const char* kColumnNames[kMetadataLength] = {"bias", "age_norm", "sex"};

void check_rank(const Eigen::MatrixXd& M) {
  // Modified Gram-Schmidt; a column whose remainder collapses is dependent on
  // the ones before it.
  Eigen::MatrixXd Q = M;
  for (Eigen::Index j = 0; j < Q.cols(); ++j) {
    const double original = M.col(j).norm();
    for (Eigen::Index i = 0; i < j; ++i) Q.col(j) -= Q.col(i).dot(Q.col(j)) * Q.col(i);
    const double rest = Q.col(j).norm();
    if (!(rest > 1e-10 * std::max(1.0, original)))
      throw GlmError(std::string("fit_glm: design matrix is rank deficient in column '") + kColumnNames[j] + "'");
    Q.col(j) /= rest;
  }
}

void check_model(const QuantizedGrid& q, const GLMModel& glm) {
  if (q.grid.values.size() != glm.latent_size)
    throw GlmError("glm: latent size " + std::to_string(q.grid.values.size()) + " vs model " +
                   std::to_string(glm.latent_size));
}

}  // namespace

std::vector<double> GLMModel::project(const std::array<double, 3>& m) const {
  std::vector<double> out(latent_size);
  for (std::size_t i = 0; i < latent_size; ++i) {
    const double* row = P.data() + i * kMetadataLength;
    out[i] = row[0] * m[0] + row[1] * m[1] + row[2] * m[2];
  }
  return out;
}

GLMModel fit_glm(std::span<const std::vector<double>> encodings, std::span<const Metadata> metadata) {
  if (encodings.size() != metadata.size())
    throw GlmError("fit_glm: " + std::to_string(encodings.size()) + " encodings vs " +
                   std::to_string(metadata.size()) + " metadata rows");
  if (encodings.size() < kMetadataLength) throw GlmError("fit_glm: need at least 3 samples");
  const auto n = static_cast<Eigen::Index>(encodings.size());
  const std::size_t L = encodings.front().size();
  if (L == 0) throw GlmError("fit_glm: empty encodings");

  Eigen::MatrixXd M(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto m = metadata[i].vector();
    M.row(i) << m[0], m[1], m[2];
  }
  check_rank(M);

  Eigen::MatrixXd Q(n, static_cast<Eigen::Index>(L));
  for (Eigen::Index i = 0; i < n; ++i) {
    if (encodings[i].size() != L) throw GlmError("fit_glm: encoding " + std::to_string(i) + " has a different size");
    Q.row(i) = Eigen::Map<const Eigen::RowVectorXd>(encodings[i].data(), static_cast<Eigen::Index>(L));
  }
  const Eigen::Matrix3d gram = M.transpose() * M;
  const Eigen::MatrixXd cross = M.transpose() * Q;  // 3 x L
  const Eigen::MatrixXd Pt = gram.ldlt().solve(cross);

  GLMModel glm;
  glm.latent_size = L;
  glm.P.resize(L * kMetadataLength);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < kMetadataLength; ++j) {
      const double v = Pt(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
      if (!std::isfinite(v)) throw GlmError("fit_glm: non-finite coefficient");
      glm.P[i * kMetadataLength + j] = v;
    }
  return glm;
}

LatentGrid split(const QuantizedGrid& q, const std::array<double, 3>& m, const GLMModel& glm) {
  check_model(q, glm);
  const auto pm = glm.project(m);
  LatentGrid r(q.grid.extents, q.grid.channels);
  for (std::size_t i = 0; i < pm.size(); ++i) {
    const double target = q.grid.values[i];
    // Among r = fl(q - pm) and its neighbours, keep the one whose sum with pm
    // lands closest to q. The sum is exact whenever some double allows it.
    const double r0 = target - pm[i];
    double best = r0;
    for (double ri : {r0, std::nextafter(r0, -HUGE_VAL), std::nextafter(r0, HUGE_VAL)})
      if (std::abs(pm[i] + ri - target) < std::abs(pm[i] + best - target)) best = ri;
    r.values[i] = best;
  }
  return r;
}

LatentGrid split(const QuantizedGrid& q, const Metadata& m, const GLMModel& glm) { return split(q, m.vector(), glm); }

bool RCode::contains(std::uint32_t token) const {
  return std::find(tokens.begin(), tokens.end(), token) != tokens.end();
}

RCode residual_to_rcode(const LatentGrid& r, const Codebook& codebook) {
  const Tensor halves = split_halves(r);
  const std::size_t dim = halves.shape[4];
  if (dim != codebook.dim())
    throw CodecError("residual_to_rcode: half-vector dim " + std::to_string(dim) + " vs codebook dim " +
                     std::to_string(codebook.dim()));
  RCode code;
  code.grid = {2, r.extents[0], r.extents[1], r.extents[2]};
  const std::size_t cells = code.cells();
  code.tokens.resize(cells * 2);
  for (std::size_t c = 0; c < cells; ++c) {
    const auto fc = fine_quantize(std::span<const double>(halves.data.data() + c * dim, dim), codebook);
    code.tokens[2 * c] = static_cast<std::uint32_t>(fc.primary);
    code.tokens[2 * c + 1] = static_cast<std::uint32_t>(fc.residual);
  }
  return code;
}

LatentGrid dequantize(const RCode& code, const Codebook& codebook) {
  if (code.grid[0] != 2) throw CodecError("dequantize: leading code axis must be 2");
  const std::size_t cells = code.cells();
  if (code.tokens.size() != cells * 2) throw CodecError("dequantize: token count does not match the grid");
  const std::size_t dim = codebook.dim();
  Tensor halves({2, code.grid[1], code.grid[2], code.grid[3], dim});
  for (std::size_t c = 0; c < cells; ++c) {
    const std::uint32_t k1 = code.tokens[2 * c], k2 = code.tokens[2 * c + 1];
    if (k1 >= codebook.size() || k2 >= codebook.size())
      throw GlmError("dequantize: code cell " + std::to_string(c) + " is masked or out of range");
    const auto e1 = codebook.entry(k1), e2 = codebook.entry(k2);
    for (std::size_t i = 0; i < dim; ++i) halves.data[c * dim + i] = e1[i] + e2[i];
  }
  return stack_halves(halves);
}

QuantizedGrid recombine(const RCode& code, const Metadata& m, const GLMModel& glm, const Codebook& codebook) {
  QuantizedGrid q;
  q.grid = dequantize(code, codebook);
  check_model(q, glm);
  const auto pm = glm.project(m.vector());
  for (std::size_t i = 0; i < pm.size(); ++i) q.grid.values[i] = pm[i] + q.grid.values[i];
  return q;
}

}  // namespace voxsynth
