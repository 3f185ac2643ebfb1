#include "gpmotion/adam.hpp"

#include <cmath>

#include "gpmotion/errors.hpp"

namespace gpmotion {

void adam_step(std::span<Parameter> params, const AdamSettings& s) {
  if (!(s.learning_rate > 0.0)) throw ConfigError("adam: learning rate must be positive");
  for (Parameter& p : params) {
    ++p.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(p.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(p.step));
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i] + s.weight_decay * p.value[i];
      p.moment1[i] = s.beta1 * p.moment1[i] + (1.0 - s.beta1) * g;
      p.moment2[i] = s.beta2 * p.moment2[i] + (1.0 - s.beta2) * g * g;
      const double m_hat = p.moment1[i] / c1;
      const double v_hat = p.moment2[i] / c2;
      p.value[i] -= s.learning_rate * m_hat / (std::sqrt(v_hat) + s.epsilon);
    }
  }
}

}  // namespace gpmotion
