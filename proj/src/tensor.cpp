#include "degmon/tensor.hpp"

#include <algorithm>

#include "degmon/error.hpp"

namespace degmon {

template <typename T>
Parameter<T>::Parameter(std::string name_, std::vector<std::int64_t> shape_)
    : name(std::move(name_)), shape(std::move(shape_)) {
  std::int64_t count = 1;
  for (auto d : shape) count *= d;
  value.assign(static_cast<std::size_t>(count), T(0));
  grad.assign(static_cast<std::size_t>(count), T(0));
}

template <typename T>
void Parameter<T>::zero_grad() {
  std::fill(grad.begin(), grad.end(), T(0));
}

template <typename T>
Tensor<T> images_to_tensor(std::span<const ImageBuffer> images) {
  if (images.empty()) throw ValidationError("no images to pack");
  const int h = images.front().height();
  const int w = images.front().width();
  Tensor<T> out(static_cast<int>(images.size()), 3, h, w);
  for (int i = 0; i < out.n; ++i) {
    const auto& img = images[static_cast<std::size_t>(i)];
    if (img.height() != h || img.width() != w) throw ValidationError("images in a batch must share one size");
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int ch = 0; ch < 3; ++ch) out.at(i, ch, y, x) = static_cast<T>(img.at(y, x, ch));
      }
    }
  }
  return out;
}

template struct Parameter<float>;
template struct Parameter<double>;
template Tensor<float> images_to_tensor<float>(std::span<const ImageBuffer>);
template Tensor<double> images_to_tensor<double>(std::span<const ImageBuffer>);

}  // namespace degmon
