#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nlden/model.hpp"
#include "nlden/noise.hpp"

namespace nlden {

enum class LossKind { MSE, Charbonnier };

std::string_view to_string(LossKind kind) noexcept;
LossKind loss_kind_from_string(std::string_view name);

inline constexpr double kCharbonnierEps = 1e-3;

struct TrainConfig {
  std::size_t patch = 32;
  std::size_t batch = 16;
  std::size_t total_steps = 2000;
  double lr0 = 1e-5;
  double lr_min = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LossKind loss = LossKind::MSE;
  bool stratified = false;
  std::uint64_t seed = 0;
  bool use_nle = true;
  std::size_t threads = 1;

  void validate() const;
};

template <typename T>
struct LossResult {
  double value = 0.0;
  std::vector<T> grad;
};

template <typename T>
LossResult<T> compute_loss(std::span<const T> pred, std::span<const T> target, LossKind kind);

/// lr_min + (lr0 - lr_min) * (1 + cos(pi * step / total)) / 2.
double cosine_lr(std::size_t step, std::size_t total, double lr0, double lr_min);

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParamSet<T>& params);
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update in place. Throws a Training error (leaving
/// everything untouched) if any gradient is non-finite.
template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state, double lr,
               const AdamHyper& hyper = {});

/// One paired training example: low-count input and full-count target, both
/// SUV normalised, with the input patch's noise descriptor.
struct TrainingPair {
  std::size_t size = 0;
  std::vector<float> input;
  std::vector<float> target;
  float embed_scalar = 0.0f;
  NoiseBin bin = NoiseBin::HighNoiseClean;
};

/// Batch of indices into the store. Stratified mode takes floor(B/4) from
/// each bin plus the remainder round-robin in bin order; uniform mode draws
/// i.i.d. indices.
std::vector<std::size_t> sample_batch(std::span<const NoiseBin> bins, std::size_t batch,
                                      bool stratified, std::uint64_t key);

struct LossRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainState {
  ParamSet<float> params;
  AdamState<float> adam;
  std::size_t next_step = 0;
  std::vector<LossRecord> trace;
};

struct TrainHooks {
  /// Stop after this step index (exclusive) instead of total_steps.
  std::optional<std::size_t> stop_at;
  std::function<void(const LossRecord&)> on_step;
};

/// Fresh state: init_params(model, seed) and zero Adam moments.
TrainState initial_train_state(const ModelConfig& model, const TrainConfig& config);

/// Runs steps [state.next_step, stop) of: sample, flip-augment, forward with
/// each patch's embedding scalar, loss, backward, batch-mean gradient in
/// fixed order, Adam with the cosine schedule.
void train_loop(std::span<const TrainingPair> store, const ModelConfig& model,
                const TrainConfig& config, TrainState& state, const TrainHooks& hooks = {});

/// Mean loss of one batch without updating anything (used for parity checks).
double evaluate_batch_loss(std::span<const TrainingPair> store, std::span<const std::size_t> batch,
                           const ModelConfig& model, const ParamSet<float>& params,
                           const TrainConfig& config, ParamSet<float>* grads = nullptr);

}  // namespace nlden
