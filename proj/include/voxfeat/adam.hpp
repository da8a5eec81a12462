#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace voxfeat {

struct AdamConfig {
  double learningRate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class Real>
class Adam {
 public:
  Adam(std::size_t paramCount, AdamConfig cfg) : cfg_(cfg), m_(paramCount, Real(0)), v_(paramCount, Real(0)) {}

  void step(std::span<Real> params, std::span<const Real> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    const Real b1 = Real(cfg_.beta1), b2 = Real(cfg_.beta2);
    const Real a1 = Real(1.0 - cfg_.beta1), a2 = Real(1.0 - cfg_.beta2);
    const Real lr = Real(cfg_.learningRate);
    const Real inv1 = Real(1.0 / c1), inv2 = Real(1.0 / c2), eps = Real(cfg_.epsilon);
    Real* __restrict p = params.data();
    const Real* __restrict g = grad.data();
    Real* __restrict m = m_.data();
    Real* __restrict v = v_.data();
    const std::size_t n = params.size();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + a1 * g[i];
      v[i] = b2 * v[i] + a2 * g[i] * g[i];
      p[i] -= lr * (m[i] * inv1) / (std::sqrt(v[i] * inv2) + eps);
    }
  }

  std::int64_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Real> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace voxfeat
