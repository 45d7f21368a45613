#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nlden/layers.hpp"

namespace nlden {

struct ModelConfig {
  std::size_t channels = 16;
  std::size_t n_orb = 2;
  std::size_t n_cab = 2;
  std::size_t reduction = 4;
  std::size_t nle_hidden = 32;

  std::size_t reduced_channels() const noexcept { return channels / reduction; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<T> values;
};

/// Ordered collection of named parameter tensors. The order is the
/// canonical serialization order used by checkpoints.
template <typename T>
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(std::vector<NamedTensor<T>> tensors) : tensors_(std::move(tensors)) {}

  std::size_t size() const noexcept { return tensors_.size(); }
  std::size_t scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.values.size();
    return n;
  }
  NamedTensor<T>& operator[](std::size_t i) { return tensors_[i]; }
  const NamedTensor<T>& operator[](std::size_t i) const { return tensors_[i]; }
  auto begin() noexcept { return tensors_.begin(); }
  auto end() noexcept { return tensors_.end(); }
  auto begin() const noexcept { return tensors_.begin(); }
  auto end() const noexcept { return tensors_.end(); }

  /// Index of `name`; throws a Shape error when absent.
  std::size_t index_of(const std::string& name) const;
  NamedTensor<T>& at(const std::string& name) { return tensors_[index_of(name)]; }
  const NamedTensor<T>& at(const std::string& name) const { return tensors_[index_of(name)]; }

  ParamSet zeros_like() const {
    ParamSet out = *this;
    for (auto& t : out.tensors_) std::fill(t.values.begin(), t.values.end(), T(0));
    return out;
  }
  void set_zero() {
    for (auto& t : tensors_) std::fill(t.values.begin(), t.values.end(), T(0));
  }

  template <typename U>
  ParamSet<U> cast() const {
    std::vector<NamedTensor<U>> out;
    out.reserve(tensors_.size());
    for (const auto& t : tensors_) {
      out.push_back({t.name, t.shape, std::vector<U>(t.values.begin(), t.values.end())});
    }
    return ParamSet<U>(std::move(out));
  }

 private:
  std::vector<NamedTensor<T>> tensors_;
};

struct TensorLayout {
  std::string name;
  std::vector<std::size_t> shape;
};

/// Canonical parameter names and shapes for `config`.
std::vector<TensorLayout> param_layout(const ModelConfig& config);

/// Fan-in scaled normal weights (variance 2 / fan_in), zero biases, and an
/// NLE output layer initialised to scale = 1, shift = 0 for every input.
ParamSet<float> init_params(const ModelConfig& config, std::uint64_t seed);

/// Checks names, order and shapes against `config` and that values are finite.
template <typename T>
void validate_params(const ParamSet<T>& params, const ModelConfig& config);

/// Sets the NLE output layer to the identity modulation (weights 0,
/// bias [1...1 | 0...0]).
template <typename T>
void force_identity_nle(ParamSet<T>& params, const ModelConfig& config);

template <typename T>
struct NleVector {
  std::vector<T> scale;
  std::vector<T> shift;
};

template <typename T>
NleVector<T> identity_nle(std::size_t channels) {
  return {std::vector<T>(channels, T(1)), std::vector<T>(channels, T(0))};
}

/// Downsampling-free residual denoiser: head conv, original-resolution
/// blocks of noise-modulated channel attention blocks, tail conv, global
/// residual. Holds a reference to the parameters; evaluation is const and
/// all per-call state lives in Cache so one Network can serve many threads.
template <typename T>
class Network {
 public:
  struct CabCache {
    Tensor<T> x_in;
    Tensor<T> r1;  // relu(conv1(x_in))
    Tensor<T> u;   // conv2(r1)
    std::vector<T> pooled;
    std::vector<std::size_t> argmax;
    std::vector<T> modulated;
    std::vector<T> hidden;  // relu(attn_reduce(modulated))
    std::vector<T> gate;    // sigmoid(attn_expand(hidden))
  };

  struct OrbCache {
    Tensor<T> in;
    std::vector<CabCache> cabs;
    Tensor<T> cab_out;
  };

  struct Cache {
    Tensor<T> input;
    T scalar = T(0);
    bool use_nle = true;
    std::vector<T> nle_hidden;
    NleVector<T> nle;
    std::vector<OrbCache> orbs;
    Tensor<T> features;  // input to the tail conv
    bool recorded = false;
    ConvScratch<T> scratch;
  };

  Network(const ModelConfig& config, const ParamSet<T>& params);

  const ModelConfig& config() const noexcept { return config_; }

  NleVector<T> nle_forward(T scalar) const;

  /// `patch` is a 1 x p x p x p tensor; returns the same shape.
  Tensor<T> forward(const Tensor<T>& patch, T scalar, bool use_nle, Cache& cache) const;

  /// Accumulates parameter gradients into `grads` (same layout as the
  /// parameters) for the pass recorded in `cache`; returns d loss / d scalar.
  T backward(Cache& cache, const Tensor<T>& grad_output, ParamSet<T>& grads) const;

  /// Evaluates one CAB on its own.
  Tensor<T> cab_forward(std::size_t orb, std::size_t cab, const Tensor<T>& x,
                        const NleVector<T>& nle, CabCache& cache, ConvScratch<T>& scratch) const;

 private:
  struct ConvIds {
    std::size_t weight = 0;
    std::size_t bias = 0;
  };
  struct CabIds {
    ConvIds conv1, conv2, reduce, expand;
  };
  struct OrbIds {
    std::vector<CabIds> cabs;
    ConvIds tail;
  };

  ConvIds conv_ids(const std::string& prefix) const;
  std::span<const T> values(std::size_t id) const { return (*params_)[id].values; }
  void cab_backward(std::size_t orb, std::size_t cab, CabCache& cc, const NleVector<T>& nle,
                    Tensor<T>& grad, std::vector<T>& d_scale, std::vector<T>& d_shift,
                    ParamSet<T>& grads, ConvScratch<T>& scratch) const;

  ModelConfig config_;
  const ParamSet<T>* params_;
  ConvIds head_;
  std::vector<OrbIds> orbs_;
  ConvIds tail_;
  ConvIds nle1_;
  ConvIds nle2_;
};

/// Patch tensor helpers.
template <typename T>
Tensor<T> patch_tensor(std::span<const float> cube, std::size_t p);

}  // namespace nlden
