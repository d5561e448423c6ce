#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "degmon/image.hpp"

namespace degmon {

/// Heap storage aligned like Eigen's own matrices. Vectorised reductions over
/// mapped buffers peel a scalar head that depends on the start address, so
/// a fixed alignment is what makes repeated runs bit-identical.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense NCHW tensor.
template <typename T>
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  AlignedVector<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * plane(); }
  T* sample(int i) { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
  const T* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
  T& at(int i, int ch, int y, int x) { return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x]; }
  T at(int i, int ch, int y, int x) const { return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x]; }

  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

/// Trainable array with its gradient accumulator.
template <typename T>
struct Parameter {
  std::string name;
  std::vector<std::int64_t> shape;
  AlignedVector<T> value;
  AlignedVector<T> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string name_, std::vector<std::int64_t> shape_);

  std::size_t size() const { return value.size(); }
  void zero_grad();
};

/// Packs images (all of equal size) into an N x 3 x H x W tensor.
template <typename T>
Tensor<T> images_to_tensor(std::span<const ImageBuffer> images);

}  // namespace degmon
