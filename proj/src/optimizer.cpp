#include "degmon/optimizer.hpp"

#include <cmath>

#include "degmon/error.hpp"

namespace degmon {

void AdamConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("Adam eps must be positive");
}

template <typename T>
Adam<T>::Adam(std::vector<Parameter<T>*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (const auto* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  if (cfg_.learning_rate == 0.0) return;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto* p = params_[k];
    if (!p->trainable) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double g = p->grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double update = cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      p->value[i] = static_cast<T>(p->value[i] - update);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace degmon
