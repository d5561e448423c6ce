#include "degmon/layers.hpp"

#include <cmath>

#include "degmon/error.hpp"

namespace degmon {

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::kSilu: return "silu";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kIdentity: return "identity";
  }
  return "unknown";
}

Activation parse_activation(std::string_view name) {
  for (auto a : {Activation::kSilu, Activation::kRelu, Activation::kTanh, Activation::kIdentity}) {
    if (activation_name(a) == name) return a;
  }
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

template <typename T>
T activate(Activation a, T x) {
  switch (a) {
    case Activation::kSilu: return x / (T(1) + std::exp(-x));
    case Activation::kRelu: return x > T(0) ? x : T(0);
    case Activation::kTanh: return std::tanh(x);
    case Activation::kIdentity: return x;
  }
  return x;
}

template <typename T>
T activate_grad(Activation a, T x) {
  switch (a) {
    case Activation::kSilu: {
      const T s = T(1) / (T(1) + std::exp(-x));
      return s * (T(1) + x * (T(1) - s));
    }
    case Activation::kRelu: return x > T(0) ? T(1) : T(0);
    case Activation::kTanh: {
      const T t = std::tanh(x);
      return T(1) - t * t;
    }
    case Activation::kIdentity: return T(1);
  }
  return T(1);
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  if (x.h % 2 != 0 || x.w % 2 != 0) throw ValidationError("avg_pool2 needs even spatial sizes");
  Tensor<T> out(x.n, x.c, x.h / 2, x.w / 2);
  for (int i = 0; i < x.n; ++i) {
    for (int c = 0; c < x.c; ++c) {
      for (int y = 0; y < out.h; ++y) {
        for (int xx = 0; xx < out.w; ++xx) {
          out.at(i, c, y, xx) = T(0.25) * (x.at(i, c, 2 * y, 2 * xx) + x.at(i, c, 2 * y, 2 * xx + 1) +
                                           x.at(i, c, 2 * y + 1, 2 * xx) + x.at(i, c, 2 * y + 1, 2 * xx + 1));
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> avg_pool2_backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.n, dy.c, dy.h * 2, dy.w * 2);
  for (int i = 0; i < dy.n; ++i) {
    for (int c = 0; c < dy.c; ++c) {
      for (int y = 0; y < dx.h; ++y) {
        for (int xx = 0; xx < dx.w; ++xx) dx.at(i, c, y, xx) = T(0.25) * dy.at(i, c, y / 2, xx / 2);
      }
    }
  }
  return dx;
}

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int pad)
    : weight(name + ".weight", {out_channels, static_cast<std::int64_t>(in_channels) * kernel * kernel}),
      bias(name + ".bias", {out_channels}),
      in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad) {}

template <typename T>
void Conv2d<T>::im2col(const T* x, int in_h, int in_w, int out_h, int out_w, T* col, std::size_t ld) const {
  for (int ci = 0; ci < in_channels_; ++ci) {
    const T* plane = x + static_cast<std::size_t>(ci) * in_h * in_w;
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        T* row = col + static_cast<std::size_t>((ci * kernel_ + ky) * kernel_ + kx) * ld;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          T* dst = row + oy * out_w;
          if (iy < 0 || iy >= in_h) {
            for (int ox = 0; ox < out_w; ++ox) dst[ox] = T(0);
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * in_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            dst[ox] = (ix >= 0 && ix < in_w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void Conv2d<T>::col2im(const T* col, int in_h, int in_w, int out_h, int out_w, T* dx, std::size_t ld) const {
  for (int ci = 0; ci < in_channels_; ++ci) {
    T* plane = dx + static_cast<std::size_t>(ci) * in_h * in_w;
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        const T* row = col + static_cast<std::size_t>((ci * kernel_ + ky) * kernel_ + kx) * ld;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= in_h) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * in_w;
          const T* src = row + oy * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix >= 0 && ix < in_w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Columns of all samples sit side by side: cols is K x (N * P), sample i
// occupying columns [i * P, (i + 1) * P).
template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Cache* cache) const {
  if (x.c != in_channels_) {
    throw ValidationError("conv expects " + std::to_string(in_channels_) + " channels, got " + std::to_string(x.c));
  }
  const int oh = out_size(x.h);
  const int ow = out_size(x.w);
  const int k = in_channels_ * kernel_ * kernel_;
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
  const std::size_t ld = p * static_cast<std::size_t>(x.n);
  AlignedVector<T> scratch;
  AlignedVector<T>& cols = cache ? cache->cols : scratch;
  cols.resize(static_cast<std::size_t>(k) * ld);
  if (cache) {
    cache->n = x.n;
    cache->in_h = x.h;
    cache->in_w = x.w;
    cache->out_h = oh;
    cache->out_w = ow;
  }
  for (int i = 0; i < x.n; ++i) im2col(x.sample(i), x.h, x.w, oh, ow, cols.data() + i * p, ld);
  Eigen::Map<const RowMatrix<T>> wmat(weight.value.data(), out_channels_, k);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bvec(bias.value.data(), out_channels_);
  Eigen::Map<const RowMatrix<T>> cmat(cols.data(), k, static_cast<Eigen::Index>(ld));
  RowMatrix<T> out = wmat * cmat;
  out.colwise() += bvec;
  Tensor<T> y(x.n, out_channels_, oh, ow);
  for (int i = 0; i < x.n; ++i) {
    Eigen::Map<RowMatrix<T>> ymat(y.sample(i), out_channels_, static_cast<Eigen::Index>(p));
    ymat = out.middleCols(static_cast<Eigen::Index>(i * p), static_cast<Eigen::Index>(p));
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, const Cache& cache, bool input_grad) {
  const int k = in_channels_ * kernel_ * kernel_;
  const std::size_t p = static_cast<std::size_t>(cache.out_h) * cache.out_w;
  const std::size_t ld = p * static_cast<std::size_t>(cache.n);
  RowMatrix<T> dymat(out_channels_, static_cast<Eigen::Index>(ld));
  for (int i = 0; i < cache.n; ++i) {
    dymat.middleCols(static_cast<Eigen::Index>(i * p), static_cast<Eigen::Index>(p)) =
        Eigen::Map<const RowMatrix<T>>(dy.sample(i), out_channels_, static_cast<Eigen::Index>(p));
  }
  Eigen::Map<const RowMatrix<T>> wmat(weight.value.data(), out_channels_, k);
  Eigen::Map<const RowMatrix<T>> cmat(cache.cols.data(), k, static_cast<Eigen::Index>(ld));
  if (weight.trainable) {
    Eigen::Map<RowMatrix<T>> dw(weight.grad.data(), out_channels_, k);
    dw.noalias() += dymat * cmat.transpose();
  }
  if (bias.trainable) {
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(bias.grad.data(), out_channels_);
    db += dymat.rowwise().sum();
  }
  Tensor<T> dx;
  if (input_grad) {
    dx = Tensor<T>(cache.n, in_channels_, cache.in_h, cache.in_w);
    const RowMatrix<T> dcol = wmat.transpose() * dymat;
    for (int i = 0; i < cache.n; ++i) {
      col2im(dcol.data() + i * p, cache.in_h, cache.in_w, cache.out_h, cache.out_w, dx.sample(i), ld);
    }
  }
  return dx;
}

template float activate<float>(Activation, float);
template double activate<double>(Activation, double);
template float activate_grad<float>(Activation, float);
template double activate_grad<double>(Activation, double);
template Tensor<float> avg_pool2(const Tensor<float>&);
template Tensor<double> avg_pool2(const Tensor<double>&);
template Tensor<float> avg_pool2_backward(const Tensor<float>&);
template Tensor<double> avg_pool2_backward(const Tensor<double>&);
template class Conv2d<float>;
template class Conv2d<double>;

}  // namespace degmon
