#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "tensor.hpp"

namespace voxsynth {

/// Adam over a fixed list of parameter tensors.
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam(std::vector<Tensor*> params, Options opt) : params_(std::move(params)), opt_(opt) {
    for (auto* p : params_) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  /// Applies one update; `grads[i]` matches `params[i]`.
  void step(const std::vector<Tensor>& grads, double lr_scale = 1.0) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const double lr = opt_.learning_rate * lr_scale;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i]->data;
      const auto& g = grads[i].data;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g[j];
        v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g[j] * g[j];
        p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + opt_.epsilon);
      }
    }
  }

  /// Clears moment estimates for one parameter row block.
  void reset_moments(std::size_t param, std::size_t begin, std::size_t count) {
    for (std::size_t j = begin; j < begin + count; ++j) m_[param][j] = v_[param][j] = 0.0;
  }

 private:
  std::vector<Tensor*> params_;
  Options opt_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace voxsynth
