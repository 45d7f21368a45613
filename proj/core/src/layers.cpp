#include "nlden/layers.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <string>

#include "nlden/error.hpp"

namespace nlden {
namespace {

struct PaddedGeometry {
  std::size_t radius = 0;
  std::size_t wp = 0;
  std::size_t plane = 0;
  std::size_t total = 0;
  std::size_t start = 0;
  std::size_t length = 0;
  std::vector<std::ptrdiff_t> offsets;

  PaddedGeometry(std::size_t d, std::size_t h, std::size_t w, std::size_t k) : radius((k - 1) / 2) {
    wp = w + 2 * radius;
    plane = (h + 2 * radius) * wp;
    total = (d + 2 * radius) * plane;
    start = at(0, 0, 0);
    length = at(d - 1, h - 1, w - 1) + 1 - start;
    const auto r = static_cast<std::ptrdiff_t>(radius);
    const auto kk = static_cast<std::ptrdiff_t>(k);
    for (std::ptrdiff_t kz = 0; kz < kk; ++kz) {
      for (std::ptrdiff_t ky = 0; ky < kk; ++ky) {
        for (std::ptrdiff_t kx = 0; kx < kk; ++kx) {
          offsets.push_back((kz - r) * static_cast<std::ptrdiff_t>(plane) +
                            (ky - r) * static_cast<std::ptrdiff_t>(wp) + (kx - r));
        }
      }
    }
  }

  std::size_t at(std::size_t z, std::size_t y, std::size_t x) const noexcept {
    return (z + radius) * plane + (y + radius) * wp + (x + radius);
  }
};

template <typename T>
void pad_channels(const Tensor<T>& t, const PaddedGeometry& g, std::vector<T>& out) {
  out.assign(t.c * g.total, T(0));
  for (std::size_t c = 0; c < t.c; ++c) {
    const T* src = t.channel(c);
    T* dst = out.data() + c * g.total;
    for (std::size_t z = 0; z < t.d; ++z) {
      for (std::size_t y = 0; y < t.h; ++y) {
        std::copy_n(src + t.w * (y + t.h * z), t.w, dst + g.at(z, y, 0));
      }
    }
  }
}

template <typename T>
void unpad_channel(const T* padded, const PaddedGeometry& g, Tensor<T>& t, std::size_t c) {
  T* dst = t.channel(c);
  for (std::size_t z = 0; z < t.d; ++z) {
    for (std::size_t y = 0; y < t.h; ++y) {
      std::copy_n(padded + g.at(z, y, 0), t.w, dst + t.w * (y + t.h * z));
    }
  }
}

/// acc[i] += sum_t w[t] * src[i + off[t]] for i in [0, n).
template <typename T, std::size_t Taps>
void accumulate_taps_fixed(T* __restrict acc, const T* __restrict src, const T* weights,
                           const std::ptrdiff_t* offsets, std::size_t n) {
  std::array<T, Taps> w;
  std::array<std::ptrdiff_t, Taps> off;
  std::copy_n(weights, Taps, w.begin());
  std::copy_n(offsets, Taps, off.begin());
  for (std::size_t i = 0; i < n; ++i) {
    T s = acc[i];
#pragma GCC unroll 27
    for (std::size_t t = 0; t < Taps; ++t) s += w[t] * src[static_cast<std::ptrdiff_t>(i) + off[t]];
    acc[i] = s;
  }
}

template <typename T>
void accumulate_taps(T* __restrict acc, const T* __restrict src, const T* weights,
                     const std::vector<std::ptrdiff_t>& offsets, std::size_t n) {
  if (offsets.size() == 27) {
    accumulate_taps_fixed<T, 27>(acc, src, weights, offsets.data(), n);
  } else if (offsets.size() == 1) {
    accumulate_taps_fixed<T, 1>(acc, src, weights, offsets.data(), n);
  } else {
    for (std::size_t t = 0; t < offsets.size(); ++t) {
      const T w = weights[t];
      const T* s = src + offsets[t];
      for (std::size_t i = 0; i < n; ++i) acc[i] += w * s[i];
    }
  }
}

/// out[t] += sum_i g[i] * src[i + off[t]] for a group of kGroup taps, using
/// explicit vector accumulators (lane order is fixed, so results are
/// deterministic).
constexpr std::size_t kGroup = 9;

template <typename T>
void dot_group(const T* __restrict g, const T* __restrict src, const std::ptrdiff_t* off,
               std::size_t count, std::size_t n, T* out) {
  typedef T Vec __attribute__((vector_size(32)));
  constexpr std::size_t kLanes = 32 / sizeof(T);
  Vec acc[kGroup] = {};
  std::size_t i = 0;
  if (count == kGroup) {
    for (; i + kLanes <= n; i += kLanes) {
      Vec gv;
      std::memcpy(&gv, g + i, sizeof(Vec));
#pragma GCC unroll 9
      for (std::size_t t = 0; t < kGroup; ++t) {
        Vec sv;
        std::memcpy(&sv, src + static_cast<std::ptrdiff_t>(i) + off[t], sizeof(Vec));
        acc[t] += gv * sv;
      }
    }
  }
  for (std::size_t t = 0; t < count; ++t) {
    T s = T(0);
    for (std::size_t j = 0; j < kLanes; ++j) s += acc[t][j];
    for (std::size_t k = i; k < n; ++k) s += g[k] * src[static_cast<std::ptrdiff_t>(k) + off[t]];
    out[t] += s;
  }
}

void check_kernel(std::size_t k) {
  if (k == 0 || k % 2 == 0) throw Error(ErrorKind::Shape, "conv kernel size must be odd");
}

}  // namespace

template <typename T>
void conv3d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                    std::size_t c_out, std::size_t k, Tensor<T>& out, ConvScratch<T>& scratch) {
  check_kernel(k);
  const std::size_t taps = k * k * k;
  if (in.data.size() != in.c * in.voxels() || in.voxels() == 0) {
    throw Error(ErrorKind::Shape, "conv3d input tensor is malformed");
  }
  if (weight.size() != c_out * in.c * taps || bias.size() != c_out) {
    throw Error(ErrorKind::Shape, "conv3d weight expects " + std::to_string(c_out * in.c * taps) +
                                      " values for " + std::to_string(in.c) + "->" +
                                      std::to_string(c_out) + " channels, got " +
                                      std::to_string(weight.size()));
  }
  const PaddedGeometry g(in.d, in.h, in.w, k);
  pad_channels(in, g, scratch.padded_in);
  out.reshape(c_out, in.d, in.h, in.w);
  scratch.accum.resize(g.total);
  T* acc = scratch.accum.data();
  for (std::size_t co = 0; co < c_out; ++co) {
    std::fill(acc + g.start, acc + g.start + g.length, bias[co]);
    for (std::size_t ci = 0; ci < in.c; ++ci) {
      accumulate_taps(acc + g.start, scratch.padded_in.data() + ci * g.total + g.start,
                      weight.data() + (co * in.c + ci) * taps, g.offsets, g.length);
    }
    unpad_channel(acc, g, out, co);
  }
}

template <typename T>
void conv3d_backward(const Tensor<T>& in, std::span<const T> weight, std::size_t k,
                     const Tensor<T>& dout, Tensor<T>* din, std::span<T> dweight,
                     std::span<T> dbias, ConvScratch<T>& scratch) {
  check_kernel(k);
  const std::size_t taps = k * k * k;
  const std::size_t c_out = dout.c;
  if (dout.d != in.d || dout.h != in.h || dout.w != in.w || weight.size() != c_out * in.c * taps ||
      dweight.size() != weight.size() || dbias.size() != c_out) {
    throw Error(ErrorKind::Shape, "conv3d backward shape mismatch");
  }
  const PaddedGeometry g(in.d, in.h, in.w, k);
  pad_channels(in, g, scratch.padded_in);
  pad_channels(dout, g, scratch.padded_grad);

  for (std::size_t co = 0; co < c_out; ++co) {
    const T* gco = scratch.padded_grad.data() + co * g.total + g.start;
    T bsum = T(0);
    for (std::size_t i = 0; i < g.length; ++i) bsum += gco[i];
    dbias[co] += bsum;
    for (std::size_t ci = 0; ci < in.c; ++ci) {
      const T* src = scratch.padded_in.data() + ci * g.total + g.start;
      T* dw = dweight.data() + (co * in.c + ci) * taps;
      for (std::size_t t0 = 0; t0 < taps; t0 += kGroup) {
        const std::size_t count = std::min(kGroup, taps - t0);
        dot_group(gco, src, g.offsets.data() + t0, count, g.length, dw + t0);
      }
    }
  }

  if (din == nullptr) return;
  // Input gradient is a forward pass of the spatially flipped, channel-transposed kernel.
  scratch.flipped.resize(weight.size());
  for (std::size_t co = 0; co < c_out; ++co) {
    for (std::size_t ci = 0; ci < in.c; ++ci) {
      const T* w = weight.data() + (co * in.c + ci) * taps;
      T* f = scratch.flipped.data() + (ci * c_out + co) * taps;
      for (std::size_t t = 0; t < taps; ++t) f[t] = w[taps - 1 - t];
    }
  }
  din->reshape(in.c, in.d, in.h, in.w);
  scratch.accum.resize(g.total);
  T* acc = scratch.accum.data();
  for (std::size_t ci = 0; ci < in.c; ++ci) {
    std::fill(acc + g.start, acc + g.start + g.length, T(0));
    for (std::size_t co = 0; co < c_out; ++co) {
      accumulate_taps(acc + g.start, scratch.padded_grad.data() + co * g.total + g.start,
                      scratch.flipped.data() + (ci * c_out + co) * taps, g.offsets, g.length);
    }
    unpad_channel(acc, g, *din, ci);
  }
}

template <typename T>
void dense_forward(std::span<const T> x, std::span<const T> weight, std::span<const T> bias,
                   std::span<T> y) {
  if (weight.size() != x.size() * y.size() || bias.size() != y.size()) {
    throw Error(ErrorKind::Shape, "dense layer shape mismatch");
  }
  for (std::size_t o = 0; o < y.size(); ++o) {
    T s = bias[o];
    for (std::size_t i = 0; i < x.size(); ++i) s += weight[o * x.size() + i] * x[i];
    y[o] = s;
  }
}

template <typename T>
void dense_backward(std::span<const T> x, std::span<const T> weight, std::span<const T> dy,
                    std::span<T> dx, std::span<T> dweight, std::span<T> dbias) {
  if (weight.size() != x.size() * dy.size() || dweight.size() != weight.size() ||
      dbias.size() != dy.size() || (!dx.empty() && dx.size() != x.size())) {
    throw Error(ErrorKind::Shape, "dense backward shape mismatch");
  }
  for (std::size_t o = 0; o < dy.size(); ++o) {
    dbias[o] += dy[o];
    for (std::size_t i = 0; i < x.size(); ++i) dweight[o * x.size() + i] += dy[o] * x[i];
  }
  if (dx.empty()) return;
  for (std::size_t i = 0; i < x.size(); ++i) {
    T s = T(0);
    for (std::size_t o = 0; o < dy.size(); ++o) s += weight[o * x.size() + i] * dy[o];
    dx[i] = s;
  }
}

template <typename T>
void global_max_pool(const Tensor<T>& in, std::span<T> pooled, std::span<std::size_t> argmax) {
  if (in.voxels() == 0 || pooled.size() != in.c || argmax.size() != in.c) {
    throw Error(ErrorKind::Shape, "global max pool shape mismatch");
  }
  for (std::size_t c = 0; c < in.c; ++c) {
    const T* v = in.channel(c);
    std::size_t best = 0;
    for (std::size_t i = 1; i < in.voxels(); ++i) {
      if (v[i] > v[best]) best = i;
    }
    pooled[c] = v[best];
    argmax[c] = best;
  }
}

template <typename T>
void modulate(std::span<const T> pooled, std::span<const T> scale, std::span<const T> shift,
              std::span<T> out) {
  if (scale.size() != pooled.size() || shift.size() != pooled.size() || out.size() != pooled.size()) {
    throw Error(ErrorKind::Shape, "modulate: length mismatch (" + std::to_string(pooled.size()) +
                                      " pooled vs " + std::to_string(scale.size()) + "/" +
                                      std::to_string(shift.size()) + ")");
  }
  for (std::size_t c = 0; c < pooled.size(); ++c) out[c] = pooled[c] * scale[c] + shift[c];
}

#define NLDEN_INSTANTIATE_LAYERS(T)                                                             \
  template void conv3d_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>,      \
                                  std::size_t, std::size_t, Tensor<T>&, ConvScratch<T>&);        \
  template void conv3d_backward<T>(const Tensor<T>&, std::span<const T>, std::size_t,            \
                                   const Tensor<T>&, Tensor<T>*, std::span<T>, std::span<T>,     \
                                   ConvScratch<T>&);                                             \
  template void dense_forward<T>(std::span<const T>, std::span<const T>, std::span<const T>,     \
                                 std::span<T>);                                                  \
  template void dense_backward<T>(std::span<const T>, std::span<const T>, std::span<const T>,    \
                                  std::span<T>, std::span<T>, std::span<T>);                     \
  template void global_max_pool<T>(const Tensor<T>&, std::span<T>, std::span<std::size_t>);      \
  template void modulate<T>(std::span<const T>, std::span<const T>, std::span<const T>,          \
                            std::span<T>);

NLDEN_INSTANTIATE_LAYERS(float)
NLDEN_INSTANTIATE_LAYERS(double)

#undef NLDEN_INSTANTIATE_LAYERS

}  // namespace nlden
