#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nlden/model.hpp"
#include "nlden/noise.hpp"
#include "nlden/phantom.hpp"
#include "nlden/train.hpp"

namespace nlden::cli {

/// Links SUV values to expected counts: counts_per_suv = sensitivity * aa / weight.
/// Without a fixed administered activity, each phantom gets the activity
/// that puts its background at `background_suv`, so count level (and noise)
/// varies between phantoms while SUV images stay comparable.
struct Calibration {
  std::optional<double> administered_activity_mbq;
  double background_suv = 1.0;
  double weight_kg = 74.0;
  double sensitivity = 12.0;

  SuvCalibration for_phantom(const PhantomSpec& spec) const;
};

struct PatchOptions {
  std::size_t stride = 16;
  /// Count fraction used as the network input (the target is always full).
  double input_fraction = 0.125;
  /// Phantoms [0, train_count) form the training split, the rest the test split.
  std::size_t train_count = 16;
};

struct EvalOptions {
  std::size_t stride = 16;
  std::optional<double> psnr_peak;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out;
  std::size_t threads = 1;
  PhantomSetConfig phantoms;
  /// Explicit phantoms; when non-empty they replace the generated set.
  std::vector<PhantomSpec> phantom_specs;
  CountSimConfig simulation;
  Calibration calibration;
  BinningConfig binning;
  PatchOptions patches;
  ModelConfig model;
  TrainConfig train;
  EvalOptions eval;

  /// Throws a Config error naming the offending field.
  void validate() const;
};

/// Parses a JSON document. Missing keys keep their defaults; unknown keys
/// and type mismatches are Config errors naming the field.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_json(const ExperimentConfig& config);

/// Seeds for each stage, all derived from the global seed. The training
/// seed also drives parameter initialisation.
std::uint64_t phantom_seed(const ExperimentConfig& config);
std::uint64_t simulation_seed(const ExperimentConfig& config);
std::uint64_t training_seed(const ExperimentConfig& config);

}  // namespace nlden::cli
