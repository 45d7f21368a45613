#include "nlden/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nlden/error.hpp"
#include "nlden/rng.hpp"

namespace nlden {
namespace {

constexpr std::size_t kKernel = 3;
constexpr std::size_t kTaps = kKernel * kKernel * kKernel;

std::string orb_prefix(std::size_t orb) { return "orb" + std::to_string(orb); }
std::string cab_prefix(std::size_t orb, std::size_t cab) {
  return orb_prefix(orb) + ".cab" + std::to_string(cab);
}

template <typename T>
T sigmoid(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

template <typename T>
void relu_in_place(std::vector<T>& v) {
  for (T& x : v) x = x > T(0) ? x : T(0);
}

}  // namespace

void ModelConfig::validate() const {
  if (channels < 1 || n_orb < 1 || n_cab < 1 || reduction < 1 || nle_hidden < 1) {
    throw Error(ErrorKind::Config, "model: all block counts and widths must be >= 1");
  }
  if (channels < reduction || channels % reduction != 0) {
    throw Error(ErrorKind::Config, "model: channels (" + std::to_string(channels) +
                                       ") must be a positive multiple of reduction (" +
                                       std::to_string(reduction) + ")");
  }
}

template <typename T>
std::size_t ParamSet<T>::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name == name) return i;
  }
  throw Error(ErrorKind::Shape, "no parameter named '" + name + "'");
}

std::vector<TensorLayout> param_layout(const ModelConfig& config) {
  config.validate();
  const std::size_t c = config.channels;
  const std::size_t cr = config.reduced_channels();
  std::vector<TensorLayout> layout;
  auto conv = [&](const std::string& prefix, std::size_t out, std::size_t in, std::size_t k) {
    layout.push_back({prefix + ".weight", {out, in, k, k, k}});
    layout.push_back({prefix + ".bias", {out}});
  };
  conv("head", c, 1, kKernel);
  for (std::size_t o = 0; o < config.n_orb; ++o) {
    for (std::size_t b = 0; b < config.n_cab; ++b) {
      const std::string p = cab_prefix(o, b);
      conv(p + ".conv1", c, c, kKernel);
      conv(p + ".conv2", c, c, kKernel);
      conv(p + ".attn_reduce", cr, c, 1);
      conv(p + ".attn_expand", c, cr, 1);
    }
    conv(orb_prefix(o) + ".tail", c, c, kKernel);
  }
  conv("tail", 1, c, kKernel);
  layout.push_back({"nle.affine1.weight", {config.nle_hidden, 1}});
  layout.push_back({"nle.affine1.bias", {config.nle_hidden}});
  layout.push_back({"nle.affine2.weight", {2 * c, config.nle_hidden}});
  layout.push_back({"nle.affine2.bias", {2 * c}});
  return layout;
}

ParamSet<float> init_params(const ModelConfig& config, std::uint64_t seed) {
  const auto layout = param_layout(config);
  std::vector<NamedTensor<float>> tensors;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const TensorLayout& tl = layout[i];
    std::size_t n = 1;
    for (std::size_t s : tl.shape) n *= s;
    NamedTensor<float> t{tl.name, tl.shape, std::vector<float>(n, 0.0f)};
    const bool is_weight = tl.name.ends_with(".weight");
    if (tl.name == "nle.affine2.bias") {
      std::fill_n(t.values.begin(), config.channels, 1.0f);
    } else if (is_weight && tl.name != "nle.affine2.weight" && tl.name != "tail.weight") {
      std::size_t fan_in = 1;
      for (std::size_t d = 1; d < tl.shape.size(); ++d) fan_in *= tl.shape[d];
      SplitMix64 rng(derive_seed(seed, {0x696e6974ULL, i}));
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (float& v : t.values) v = static_cast<float>(normal(rng));
    }
    tensors.push_back(std::move(t));
  }
  return ParamSet<float>(std::move(tensors));
}

template <typename T>
void validate_params(const ParamSet<T>& params, const ModelConfig& config) {
  const auto layout = param_layout(config);
  if (params.size() != layout.size()) {
    throw Error(ErrorKind::Shape, "expected " + std::to_string(layout.size()) + " tensors, got " +
                                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& t = params[i];
    std::size_t n = 1;
    for (std::size_t s : layout[i].shape) n *= s;
    if (t.name != layout[i].name || t.shape != layout[i].shape || t.values.size() != n) {
      throw Error(ErrorKind::Shape, "tensor " + std::to_string(i) + " ('" + t.name +
                                        "') does not match expected '" + layout[i].name + "'");
    }
    for (T v : t.values) {
      if (!std::isfinite(v)) throw Error(ErrorKind::Domain, "non-finite value in '" + t.name + "'");
    }
  }
}

template <typename T>
void force_identity_nle(ParamSet<T>& params, const ModelConfig& config) {
  auto& w = params.at("nle.affine2.weight").values;
  auto& b = params.at("nle.affine2.bias").values;
  std::fill(w.begin(), w.end(), T(0));
  std::fill(b.begin(), b.end(), T(0));
  std::fill_n(b.begin(), config.channels, T(1));
}

template <typename T>
Tensor<T> patch_tensor(std::span<const float> cube, std::size_t p) {
  if (cube.size() != p * p * p) throw Error(ErrorKind::Shape, "patch buffer is not p^3");
  Tensor<T> t(1, p, p, p);
  std::copy(cube.begin(), cube.end(), t.data.begin());
  return t;
}

template <typename T>
Network<T>::Network(const ModelConfig& config, const ParamSet<T>& params)
    : config_(config), params_(&params) {
  validate_params(params, config);
  head_ = conv_ids("head");
  for (std::size_t o = 0; o < config.n_orb; ++o) {
    OrbIds ids;
    for (std::size_t b = 0; b < config.n_cab; ++b) {
      const std::string p = cab_prefix(o, b);
      ids.cabs.push_back({conv_ids(p + ".conv1"), conv_ids(p + ".conv2"),
                          conv_ids(p + ".attn_reduce"), conv_ids(p + ".attn_expand")});
    }
    ids.tail = conv_ids(orb_prefix(o) + ".tail");
    orbs_.push_back(std::move(ids));
  }
  tail_ = conv_ids("tail");
  nle1_ = conv_ids("nle.affine1");
  nle2_ = conv_ids("nle.affine2");
}

template <typename T>
typename Network<T>::ConvIds Network<T>::conv_ids(const std::string& prefix) const {
  return {params_->index_of(prefix + ".weight"), params_->index_of(prefix + ".bias")};
}

template <typename T>
NleVector<T> Network<T>::nle_forward(T scalar) const {
  if (!std::isfinite(scalar)) throw Error(ErrorKind::Domain, "embedding scalar is not finite");
  const std::size_t c = config_.channels;
  std::vector<T> hidden(config_.nle_hidden);
  const T in[1] = {scalar};
  dense_forward<T>(in, values(nle1_.weight), values(nle1_.bias), hidden);
  relu_in_place(hidden);
  std::vector<T> out(2 * c);
  dense_forward<T>(hidden, values(nle2_.weight), values(nle2_.bias), out);
  return {std::vector<T>(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(c)),
          std::vector<T>(out.begin() + static_cast<std::ptrdiff_t>(c), out.end())};
}

template <typename T>
Tensor<T> Network<T>::cab_forward(std::size_t orb, std::size_t cab, const Tensor<T>& x,
                                  const NleVector<T>& nle, CabCache& cc,
                                  ConvScratch<T>& scratch) const {
  const CabIds& ids = orbs_.at(orb).cabs.at(cab);
  const std::size_t c = config_.channels;
  if (x.c != c) throw Error(ErrorKind::Shape, "CAB input must have " + std::to_string(c) + " channels");
  cc.x_in = x;
  conv3d_forward<T>(x, values(ids.conv1.weight), values(ids.conv1.bias), c, kKernel, cc.r1, scratch);
  relu_in_place(cc.r1.data);
  conv3d_forward<T>(cc.r1, values(ids.conv2.weight), values(ids.conv2.bias), c, kKernel, cc.u, scratch);
  cc.pooled.resize(c);
  cc.argmax.resize(c);
  global_max_pool<T>(cc.u, cc.pooled, cc.argmax);
  cc.modulated.resize(c);
  modulate<T>(cc.pooled, nle.scale, nle.shift, cc.modulated);
  cc.hidden.resize(config_.reduced_channels());
  dense_forward<T>(cc.modulated, values(ids.reduce.weight), values(ids.reduce.bias), cc.hidden);
  relu_in_place(cc.hidden);
  cc.gate.resize(c);
  dense_forward<T>(cc.hidden, values(ids.expand.weight), values(ids.expand.bias), cc.gate);
  for (T& g : cc.gate) g = sigmoid(g);

  Tensor<T> out = x;
  const std::size_t n = x.voxels();
  for (std::size_t ch = 0; ch < c; ++ch) {
    T* o = out.channel(ch);
    const T* u = cc.u.channel(ch);
    const T g = cc.gate[ch];
    for (std::size_t i = 0; i < n; ++i) o[i] += u[i] * g;
  }
  return out;
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& patch, T scalar, bool use_nle, Cache& cache) const {
  if (patch.c != 1 || patch.d < 3 || patch.h < 3 || patch.w < 3) {
    throw Error(ErrorKind::Shape, "network input must be 1 x D x H x W with every side >= 3");
  }
  const std::size_t c = config_.channels;
  cache.recorded = false;
  cache.input = patch;
  cache.scalar = scalar;
  cache.use_nle = use_nle;
  if (use_nle) {
    if (!std::isfinite(scalar)) throw Error(ErrorKind::Domain, "embedding scalar is not finite");
    cache.nle_hidden.assign(config_.nle_hidden, T(0));
    const T in[1] = {scalar};
    dense_forward<T>(in, values(nle1_.weight), values(nle1_.bias), cache.nle_hidden);
    relu_in_place(cache.nle_hidden);
    std::vector<T> out(2 * c);
    dense_forward<T>(cache.nle_hidden, values(nle2_.weight), values(nle2_.bias), out);
    cache.nle.scale.assign(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(c));
    cache.nle.shift.assign(out.begin() + static_cast<std::ptrdiff_t>(c), out.end());
  } else {
    cache.nle = identity_nle<T>(c);
  }

  Tensor<T> f;
  conv3d_forward<T>(patch, values(head_.weight), values(head_.bias), c, kKernel, f, cache.scratch);
  cache.orbs.resize(config_.n_orb);
  for (std::size_t o = 0; o < config_.n_orb; ++o) {
    OrbCache& oc = cache.orbs[o];
    oc.in = f;
    oc.cabs.resize(config_.n_cab);
    Tensor<T> x = f;
    for (std::size_t b = 0; b < config_.n_cab; ++b) {
      x = cab_forward(o, b, x, cache.nle, oc.cabs[b], cache.scratch);
    }
    oc.cab_out = std::move(x);
    conv3d_forward<T>(oc.cab_out, values(orbs_[o].tail.weight), values(orbs_[o].tail.bias), c,
                      kKernel, f, cache.scratch);
    for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] += oc.in.data[i];
  }
  cache.features = std::move(f);
  Tensor<T> out;
  conv3d_forward<T>(cache.features, values(tail_.weight), values(tail_.bias), 1, kKernel, out,
                    cache.scratch);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += patch.data[i];
  cache.recorded = true;
  return out;
}

template <typename T>
void Network<T>::cab_backward(std::size_t orb, std::size_t cab, CabCache& cc,
                              const NleVector<T>& nle, Tensor<T>& grad, std::vector<T>& d_scale,
                              std::vector<T>& d_shift, ParamSet<T>& grads,
                              ConvScratch<T>& scratch) const {
  const CabIds& ids = orbs_[orb].cabs[cab];
  const std::size_t c = config_.channels;
  const std::size_t n = grad.voxels();

  // out = x + u * gate
  Tensor<T> du(c, grad.d, grad.h, grad.w);
  std::vector<T> d_gate(c, T(0));
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* g = grad.channel(ch);
    const T* u = cc.u.channel(ch);
    T* d = du.channel(ch);
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      d[i] = g[i] * cc.gate[ch];
      acc += g[i] * u[i];
    }
    d_gate[ch] = acc;
  }
  std::vector<T> d_z2(c);
  for (std::size_t ch = 0; ch < c; ++ch) d_z2[ch] = d_gate[ch] * cc.gate[ch] * (T(1) - cc.gate[ch]);

  std::vector<T> d_hidden(cc.hidden.size());
  dense_backward<T>(cc.hidden, values(ids.expand.weight), d_z2, d_hidden,
                    grads[ids.expand.weight].values, grads[ids.expand.bias].values);
  for (std::size_t j = 0; j < d_hidden.size(); ++j) {
    if (!(cc.hidden[j] > T(0))) d_hidden[j] = T(0);
  }
  std::vector<T> d_mod(c);
  dense_backward<T>(cc.modulated, values(ids.reduce.weight), d_hidden, d_mod,
                    grads[ids.reduce.weight].values, grads[ids.reduce.bias].values);
  for (std::size_t ch = 0; ch < c; ++ch) {
    d_scale[ch] += d_mod[ch] * cc.pooled[ch];
    d_shift[ch] += d_mod[ch];
    du.channel(ch)[cc.argmax[ch]] += d_mod[ch] * nle.scale[ch];
  }

  Tensor<T> d_r1;
  conv3d_backward<T>(cc.r1, values(ids.conv2.weight), kKernel, du, &d_r1,
                     grads[ids.conv2.weight].values, grads[ids.conv2.bias].values, scratch);
  for (std::size_t i = 0; i < d_r1.data.size(); ++i) {
    if (!(cc.r1.data[i] > T(0))) d_r1.data[i] = T(0);
  }
  Tensor<T> dx;
  conv3d_backward<T>(cc.x_in, values(ids.conv1.weight), kKernel, d_r1, &dx,
                     grads[ids.conv1.weight].values, grads[ids.conv1.bias].values, scratch);
  for (std::size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += dx.data[i];
}

template <typename T>
T Network<T>::backward(Cache& cache, const Tensor<T>& grad_output, ParamSet<T>& grads) const {
  if (!cache.recorded) throw Error(ErrorKind::State, "backward called without a recorded forward pass");
  if (!grad_output.same_shape(cache.input)) {
    throw Error(ErrorKind::Shape, "output gradient shape differs from the recorded output");
  }
  if (grads.size() != params_->size()) throw Error(ErrorKind::Shape, "gradient set layout mismatch");
  const std::size_t c = config_.channels;

  Tensor<T> df;
  conv3d_backward<T>(cache.features, values(tail_.weight), kKernel, grad_output, &df,
                     grads[tail_.weight].values, grads[tail_.bias].values, cache.scratch);

  std::vector<T> d_scale(c, T(0));
  std::vector<T> d_shift(c, T(0));
  for (std::size_t o = config_.n_orb; o-- > 0;) {
    OrbCache& oc = cache.orbs[o];
    Tensor<T> dx;
    conv3d_backward<T>(oc.cab_out, values(orbs_[o].tail.weight), kKernel, df, &dx,
                       grads[orbs_[o].tail.weight].values, grads[orbs_[o].tail.bias].values,
                       cache.scratch);
    for (std::size_t b = config_.n_cab; b-- > 0;) {
      cab_backward(o, b, oc.cabs[b], cache.nle, dx, d_scale, d_shift, grads, cache.scratch);
    }
    for (std::size_t i = 0; i < df.data.size(); ++i) df.data[i] += dx.data[i];
  }
  conv3d_backward<T>(cache.input, values(head_.weight), kKernel, df, nullptr,
                     grads[head_.weight].values, grads[head_.bias].values, cache.scratch);

  if (!cache.use_nle) return T(0);
  std::vector<T> d_out(2 * c);
  std::copy(d_scale.begin(), d_scale.end(), d_out.begin());
  std::copy(d_shift.begin(), d_shift.end(), d_out.begin() + static_cast<std::ptrdiff_t>(c));
  std::vector<T> d_hidden(config_.nle_hidden);
  dense_backward<T>(cache.nle_hidden, values(nle2_.weight), d_out, d_hidden,
                    grads[nle2_.weight].values, grads[nle2_.bias].values);
  for (std::size_t j = 0; j < d_hidden.size(); ++j) {
    if (!(cache.nle_hidden[j] > T(0))) d_hidden[j] = T(0);
  }
  const T in[1] = {cache.scalar};
  T d_scalar[1] = {T(0)};
  dense_backward<T>(in, values(nle1_.weight), d_hidden, d_scalar, grads[nle1_.weight].values,
                    grads[nle1_.bias].values);
  return d_scalar[0];
}

template class ParamSet<float>;
template class ParamSet<double>;
template class Network<float>;
template class Network<double>;
template void validate_params<float>(const ParamSet<float>&, const ModelConfig&);
template void validate_params<double>(const ParamSet<double>&, const ModelConfig&);
template void force_identity_nle<float>(ParamSet<float>&, const ModelConfig&);
template void force_identity_nle<double>(ParamSet<double>&, const ModelConfig&);
template Tensor<float> patch_tensor<float>(std::span<const float>, std::size_t);
template Tensor<double> patch_tensor<double>(std::span<const float>, std::size_t);

}  // namespace nlden
