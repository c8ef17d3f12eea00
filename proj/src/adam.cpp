#include "limn/adam.hpp"

#include <cmath>

#include "limn/error.hpp"

namespace limn {

Adam::Adam(AdamConfig config) { state_.config = config; }

void Adam::step(ParamStore& params) {
  for (const auto& [name, t] : params.entries()) {
    for (double gv : t.grad())
      if (!std::isfinite(gv)) throw TrainingError("non-finite gradient in parameter " + name);
  }
  ++state_.step;
  const auto& c = state_.config;
  const double t = static_cast<double>(state_.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (auto& [name, p] : params.mutable_entries()) {
    auto& m = state_.first_moment[name];
    auto& v = state_.second_moment[name];
    if (m.size() != p.size()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    if (!p.has_grad()) {
      // zero gradient: the moments still decay
      for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] *= c.beta1;
        v[i] *= c.beta2;
      }
    }
    auto grad = p.grad();
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (p.has_grad()) {
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
      }
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      data[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

}  // namespace limn
