#pragma once

#include <vector>

#include "degmon/tensor.hpp"

namespace degmon {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// Adam over the trainable subset of `params`.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, AdamConfig cfg);

  void zero_grad();
  void step();
  long steps() const { return t_; }

 private:
  std::vector<Parameter<T>*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long t_ = 0;
};

}  // namespace degmon
