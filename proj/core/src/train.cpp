#include "nlden/train.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "nlden/error.hpp"
#include "nlden/parallel.hpp"
#include "nlden/rng.hpp"
#include "nlden/volume.hpp"

namespace nlden {

std::string_view to_string(LossKind kind) noexcept {
  return kind == LossKind::MSE ? "mse" : "charbonnier";
}

LossKind loss_kind_from_string(std::string_view name) {
  if (name == "mse") return LossKind::MSE;
  if (name == "charbonnier") return LossKind::Charbonnier;
  throw Error(ErrorKind::Config, "train.loss: unknown loss '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (patch < 3) throw Error(ErrorKind::Config, "train.patch must be >= 3");
  if (batch < 1) throw Error(ErrorKind::Config, "train.batch must be >= 1");
  if (total_steps < 1) throw Error(ErrorKind::Config, "train.total_steps must be >= 1");
  if (!(lr_min > 0.0) || !(lr0 >= lr_min)) {
    throw Error(ErrorKind::Config, "train: need lr0 >= lr_min > 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
    throw Error(ErrorKind::Config, "train: adam betas must lie in [0, 1) and eps > 0");
  }
}

template <typename T>
LossResult<T> compute_loss(std::span<const T> pred, std::span<const T> target, LossKind kind) {
  if (pred.size() != target.size() || pred.empty()) {
    throw Error(ErrorKind::Shape, "loss: prediction and target sizes differ");
  }
  const double n = static_cast<double>(pred.size());
  LossResult<T> r;
  r.grad.resize(pred.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    if (kind == LossKind::MSE) {
      sum += d * d;
      r.grad[i] = static_cast<T>(2.0 * d / n);
    } else {
      const double root = std::sqrt(d * d + kCharbonnierEps * kCharbonnierEps);
      sum += root;
      r.grad[i] = static_cast<T>(d / root / n);
    }
  }
  r.value = sum / n;
  return r;
}

double cosine_lr(std::size_t step, std::size_t total, double lr0, double lr_min) {
  if (total == 0) throw Error(ErrorKind::Parameter, "cosine_lr: total steps must be >= 1");
  if (step > total) {
    throw Error(ErrorKind::Parameter, "cosine_lr: step " + std::to_string(step) + " exceeds total " +
                                          std::to_string(total));
  }
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(phase));
}

template <typename T>
AdamState<T> AdamState<T>::zeros_like(const ParamSet<T>& params) {
  AdamState s;
  for (const auto& t : params) {
    s.m.emplace_back(t.values.size(), T(0));
    s.v.emplace_back(t.values.size(), T(0));
  }
  return s;
}

template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state, double lr,
               const AdamHyper& hyper) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw Error(ErrorKind::Shape, "adam: parameter, gradient and state layouts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].values.size() != params[k].values.size() ||
        state.m[k].size() != params[k].values.size() || state.v[k].size() != params[k].values.size()) {
      throw Error(ErrorKind::Shape, "adam: size mismatch for '" + params[k].name + "'");
    }
    for (std::size_t i = 0; i < grads[k].values.size(); ++i) {
      if (!std::isfinite(grads[k].values[i])) {
        throw Error(ErrorKind::Training, "non-finite gradient in '" + params[k].name + "' element " +
                                             std::to_string(i) + " at adam step " +
                                             std::to_string(state.step + 1));
      }
    }
  }
  const std::uint64_t t = state.step + 1;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& theta = params[k].values;
    const auto& g = grads[k].values;
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g[i];
      const double mi = hyper.beta1 * static_cast<double>(m[i]) + (1.0 - hyper.beta1) * gi;
      const double vi = hyper.beta2 * static_cast<double>(v[i]) + (1.0 - hyper.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / c1;
      const double v_hat = vi / c2;
      theta[i] = static_cast<T>(static_cast<double>(theta[i]) - lr * m_hat / (std::sqrt(v_hat) + hyper.eps));
    }
  }
  state.step = t;
}

std::vector<std::size_t> sample_batch(std::span<const NoiseBin> bins, std::size_t batch,
                                      bool stratified, std::uint64_t key) {
  if (bins.empty()) throw Error(ErrorKind::Sampling, "patch store is empty");
  SplitMix64 rng(key);
  std::vector<std::size_t> out;
  out.reserve(batch);
  if (!stratified) {
    std::uniform_int_distribution<std::size_t> pick(0, bins.size() - 1);
    for (std::size_t i = 0; i < batch; ++i) out.push_back(pick(rng));
    return out;
  }
  std::array<std::vector<std::size_t>, kNoiseBinCount> members;
  for (std::size_t i = 0; i < bins.size(); ++i) members[static_cast<std::size_t>(bins[i])].push_back(i);
  for (std::size_t b = 0; b < kNoiseBinCount; ++b) {
    if (members[b].empty()) {
      throw Error(ErrorKind::Sampling, "stratified sampling: bin " +
                                           std::string(to_string(static_cast<NoiseBin>(b))) +
                                           " has no patches");
    }
  }
  for (std::size_t b = 0; b < kNoiseBinCount; ++b) {
    const std::size_t take = batch / kNoiseBinCount + (b < batch % kNoiseBinCount ? 1 : 0);
    std::uniform_int_distribution<std::size_t> pick(0, members[b].size() - 1);
    for (std::size_t j = 0; j < take; ++j) out.push_back(members[b][pick(rng)]);
  }
  return out;
}

TrainState initial_train_state(const ModelConfig& model, const TrainConfig& config) {
  TrainState s;
  s.params = init_params(model, config.seed);
  s.adam = AdamState<float>::zeros_like(s.params);
  return s;
}

namespace {

void check_store(std::span<const TrainingPair> store, std::size_t p) {
  if (store.empty()) throw Error(ErrorKind::Sampling, "training store is empty");
  for (const TrainingPair& pair : store) {
    if (pair.size != p || pair.input.size() != p * p * p || pair.target.size() != p * p * p) {
      throw Error(ErrorKind::Shape, "training pair does not match patch size " + std::to_string(p));
    }
  }
}

std::string batch_manifest(std::span<const std::size_t> batch) {
  std::string s = "[";
  for (std::size_t i = 0; i < batch.size(); ++i) s += (i ? "," : "") + std::to_string(batch[i]);
  return s + "]";
}

}  // namespace

void train_loop(std::span<const TrainingPair> store, const ModelConfig& model,
                const TrainConfig& config, TrainState& state, const TrainHooks& hooks) {
  config.validate();
  check_store(store, config.patch);
  const std::size_t stop = std::min(hooks.stop_at.value_or(config.total_steps), config.total_steps);
  const Network<float> net(model, state.params);
  const std::size_t batch = config.batch;
  const std::size_t workers = std::max<std::size_t>(1, std::min(config.threads, batch));
  std::vector<Network<float>::Cache> caches(workers);
  std::vector<ParamSet<float>> item_grads(batch, state.params.zeros_like());
  std::vector<double> item_loss(batch, 0.0);
  ParamSet<float> grads = state.params.zeros_like();
  std::vector<NoiseBin> bins;
  bins.reserve(store.size());
  for (const TrainingPair& pair : store) bins.push_back(pair.bin);
  const AdamHyper hyper{config.beta1, config.beta2, config.eps};
  const std::size_t p = config.patch;

  for (std::size_t step = state.next_step; step < stop; ++step) {
    const auto indices =
        sample_batch(bins, batch, config.stratified, derive_seed(config.seed, {0x62617463ULL, step}));
    parallel_for(batch, workers, [&](std::size_t i, std::size_t w) {
      const TrainingPair& pair = store[indices[i]];
      const FlipDecision flips = draw_flips(derive_seed(config.seed, {0x61756721ULL, step, i}));
      Tensor<float> in = patch_tensor<float>(pair.input, p);
      std::vector<float> target = pair.target;
      flip_in_place(in.data, p, flips);
      flip_in_place(target, p, flips);
      const Tensor<float> out = net.forward(in, pair.embed_scalar, config.use_nle, caches[w]);
      LossResult<float> loss = compute_loss<float>(out.data, target, config.loss);
      item_loss[i] = loss.value;
      Tensor<float> g(1, p, p, p);
      g.data = std::move(loss.grad);
      item_grads[i].set_zero();
      net.backward(caches[w], g, item_grads[i]);
    });

    double loss_sum = 0.0;
    for (double l : item_loss) loss_sum += l;
    const double loss = loss_sum / static_cast<double>(batch);
    if (!std::isfinite(loss)) {
      throw Error(ErrorKind::Training, "non-finite loss at step " + std::to_string(step) +
                                           ", batch " + batch_manifest(indices));
    }
    const float inv = 1.0f / static_cast<float>(batch);
    for (std::size_t k = 0; k < grads.size(); ++k) {
      auto& dst = grads[k].values;
      for (std::size_t j = 0; j < dst.size(); ++j) {
        float s = 0.0f;
        for (std::size_t i = 0; i < batch; ++i) s += item_grads[i][k].values[j];
        dst[j] = s * inv;
      }
    }
    const double lr = cosine_lr(step, config.total_steps, config.lr0, config.lr_min);
    try {
      adam_step(state.params, grads, state.adam, lr, hyper);
    } catch (const Error& e) {
      throw Error(ErrorKind::Training, std::string(e.what()) + " (step " + std::to_string(step) +
                                           ", batch " + batch_manifest(indices) + ")");
    }
    const LossRecord rec{step, lr, loss};
    state.trace.push_back(rec);
    state.next_step = step + 1;
    if (hooks.on_step) hooks.on_step(rec);
  }
}

double evaluate_batch_loss(std::span<const TrainingPair> store, std::span<const std::size_t> batch,
                           const ModelConfig& model, const ParamSet<float>& params,
                           const TrainConfig& config, ParamSet<float>* grads) {
  check_store(store, config.patch);
  const Network<float> net(model, params);
  Network<float>::Cache cache;
  const std::size_t p = config.patch;
  double sum = 0.0;
  if (grads != nullptr) *grads = params.zeros_like();
  for (std::size_t idx : batch) {
    if (idx >= store.size()) throw Error(ErrorKind::Parameter, "batch index out of range");
    const TrainingPair& pair = store[idx];
    const Tensor<float> in = patch_tensor<float>(pair.input, p);
    const Tensor<float> out = net.forward(in, pair.embed_scalar, config.use_nle, cache);
    LossResult<float> loss = compute_loss<float>(out.data, pair.target, config.loss);
    sum += loss.value;
    if (grads != nullptr) {
      Tensor<float> g(1, p, p, p);
      g.data = std::move(loss.grad);
      net.backward(cache, g, *grads);
    }
  }
  if (grads != nullptr) {
    for (auto& t : *grads) {
      for (float& v : t.values) v /= static_cast<float>(batch.size());
    }
  }
  return sum / static_cast<double>(batch.size());
}

template LossResult<float> compute_loss<float>(std::span<const float>, std::span<const float>, LossKind);
template LossResult<double> compute_loss<double>(std::span<const double>, std::span<const double>, LossKind);
template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(ParamSet<float>&, const ParamSet<float>&, AdamState<float>&, double, const AdamHyper&);
template void adam_step<double>(ParamSet<double>&, const ParamSet<double>&, AdamState<double>&, double, const AdamHyper&);

}  // namespace nlden
