#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace nlden {

/// Channel-major 4D activation (C x D x H x W), x (W) fastest.
template <typename T>
struct Tensor {
  std::size_t c = 0;
  std::size_t d = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::size_t channels, std::size_t depth, std::size_t height, std::size_t width, T fill = T(0))
      : c(channels), d(depth), h(height), w(width), data(channels * depth * height * width, fill) {}

  std::size_t voxels() const noexcept { return d * h * w; }
  T* channel(std::size_t ch) noexcept { return data.data() + ch * voxels(); }
  const T* channel(std::size_t ch) const noexcept { return data.data() + ch * voxels(); }
  void reshape(std::size_t channels, std::size_t depth, std::size_t height, std::size_t width) {
    c = channels;
    d = depth;
    h = height;
    w = width;
    data.assign(channels * depth * height * width, T(0));
  }
  bool same_shape(const Tensor& o) const noexcept { return c == o.c && d == o.d && h == o.h && w == o.w; }
};

/// Reusable zero-padded buffers for conv3d; one per worker thread.
template <typename T>
struct ConvScratch {
  std::vector<T> padded_in;
  std::vector<T> padded_grad;
  std::vector<T> accum;
  std::vector<T> flipped;
};

/// "Same" 3D cross-correlation with odd cubic kernel `k` (zero padding
/// (k-1)/2, stride 1). Weight layout [c_out][c_in][kz][ky][kx].
template <typename T>
void conv3d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                    std::size_t c_out, std::size_t k, Tensor<T>& out, ConvScratch<T>& scratch);

/// Accumulates weight and bias gradients; writes the input gradient into
/// `din` when non-null.
template <typename T>
void conv3d_backward(const Tensor<T>& in, std::span<const T> weight, std::size_t k,
                     const Tensor<T>& dout, Tensor<T>* din, std::span<T> dweight,
                     std::span<T> dbias, ConvScratch<T>& scratch);

/// Dense y = W x + b with W row-major [out][in].
template <typename T>
void dense_forward(std::span<const T> x, std::span<const T> weight, std::span<const T> bias,
                   std::span<T> y);

/// Accumulates dW, db and (when dx is non-empty) writes dx = W^T dy.
template <typename T>
void dense_backward(std::span<const T> x, std::span<const T> weight, std::span<const T> dy,
                    std::span<T> dx, std::span<T> dweight, std::span<T> dbias);

/// Per-channel maximum over all spatial positions. `argmax` receives the
/// first (x-fastest order) maximizing voxel per channel.
template <typename T>
void global_max_pool(const Tensor<T>& in, std::span<T> pooled, std::span<std::size_t> argmax);

/// out = pooled * scale + shift, elementwise.
template <typename T>
void modulate(std::span<const T> pooled, std::span<const T> scale, std::span<const T> shift,
              std::span<T> out);

}  // namespace nlden
