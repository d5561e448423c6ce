#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "degmon/tensor.hpp"

namespace degmon {

enum class Activation { kSilu, kRelu, kTanh, kIdentity };

std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view name);

template <typename T>
T activate(Activation a, T x);

/// Derivative of the activation evaluated at the pre-activation value.
template <typename T>
T activate_grad(Activation a, T x);

/// 2x2 average pooling with stride 2; spatial sizes must be even.
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x);

/// Spreads each output gradient evenly over its 2x2 window.
template <typename T>
Tensor<T> avg_pool2_backward(const Tensor<T>& dy);

/// k x k convolution with stride and zero padding, lowered to im2col + GEMM.
template <typename T>
class Conv2d {
 public:
  struct Cache {
    int n = 0;
    int in_h = 0;
    int in_w = 0;
    int out_h = 0;
    int out_w = 0;
    AlignedVector<T> cols;  // (in*k*k) x (n*out_h*out_w)
  };

  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int pad);

  int out_size(int in) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }
  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }

  /// `cache` may be null for inference.
  Tensor<T> forward(const Tensor<T>& x, Cache* cache) const;

  /// Accumulates weight/bias gradients; returns dL/dx when `input_grad`.
  Tensor<T> backward(const Tensor<T>& dy, const Cache& cache, bool input_grad);

  Parameter<T> weight;  // out x (in*k*k)
  Parameter<T> bias;    // out

 private:
  // `ld` is the row stride of the column matrix.
  void im2col(const T* x, int in_h, int in_w, int out_h, int out_w, T* col, std::size_t ld) const;
  void col2im(const T* col, int in_h, int in_w, int out_h, int out_w, T* dx, std::size_t ld) const;

  int in_channels_ = 0;
  int out_channels_ = 0;
  int kernel_ = 1;
  int stride_ = 1;
  int pad_ = 0;
};

}  // namespace degmon
