#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nlden/error.hpp"
#include "nlden/report.hpp"
#include "nlden/train.hpp"
#include "nlden/volume.hpp"
#include "nlden_cli/config.hpp"

namespace nlden::cli {

namespace fs = std::filesystem;

/// Maps an error to the process exit code: 2 configuration or validation,
/// 3 I/O or unreadable files, 4 numerical failure during training.
int exit_code_for(ErrorKind kind) noexcept;

/// Writes `<out>/phantom_<id>/{ref,full,f0125,f025}.nvol` + manifest.json per
/// phantom and `<out>/dataset.json` listing phantoms and the split.
void cmd_simulate(const ExperimentConfig& config, const fs::path& out);

struct ExcludedPatch {
  std::string volume_id;
  Index3 origin{0, 0, 0};
  std::string reason;
};

struct PatchStoreSummary {
  std::size_t patch_count = 0;
  std::array<std::size_t, kNoiseBinCount> bin_counts{};
  std::vector<ExcludedPatch> excluded;
  EmbedStats embed_stats;
  double embed_median = 0.0;
};

/// Extracts training-split patches from the input-fraction volumes, computes
/// descriptors in counts, fits the embedding statistics and writes
/// `<out>/store.json` + `<out>/descriptors.ndjson`.
PatchStoreSummary cmd_patches(const fs::path& dataset, const ExperimentConfig& config,
                              const fs::path& out);

struct TrainOptions {
  bool use_nle = true;
  /// Continue from the checkpoint already in the output directory.
  bool resume = false;
  /// Stop (and checkpoint) after this many steps instead of total_steps.
  std::optional<std::size_t> stop_at;
  std::optional<std::size_t> total_steps;
};

struct TrainSummary {
  std::size_t steps_run = 0;
  std::size_t iteration = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
};

/// Trains on a patch store and writes a checkpoint plus `loss_trace.csv`
/// (`step,lr,loss`) into `out`.
TrainSummary cmd_train(const fs::path& store, const ExperimentConfig& config,
                       const TrainOptions& options, const fs::path& out);

std::string loss_trace_csv(std::span<const LossRecord> trace);
std::vector<LossRecord> parse_loss_trace(std::string_view text);

struct DenoiseOptions {
  std::size_t patch_size = 32;
  std::size_t stride = 16;
  /// When set, a Counts-domain input is first SUV normalised as a scan at
  /// this fraction of the administered activity.
  std::optional<double> fraction;
  std::size_t threads = 1;
};

/// Sliding-window inference with a checkpoint. Returns the denoised volume
/// after writing it to `out`.
Volume cmd_denoise(const fs::path& input, const fs::path& checkpoint, const ExperimentConfig& config,
                   const DenoiseOptions& options, const fs::path& out);

/// Brings a volume into SUV: SUV volumes pass through, Counts volumes are
/// normalised with the calibration scaled by `fraction`.
Volume to_suv(const Volume& volume, const Calibration& calibration, double fraction);

/// Evaluates the images listed in a pairing manifest:
/// {"images": [{"id", "reference", "input", "a", "b"}]} where each path is
/// a string or {"path", "fraction"} and relative paths resolve against the
/// manifest directory. Writes metrics.csv, report.json and box.json to `out`.
EvaluationReport cmd_eval(const fs::path& pairing, const ExperimentConfig& config, const fs::path& out);

/// Same outputs from an existing metrics CSV.
EvaluationReport cmd_eval_csv(const fs::path& csv, const fs::path& out);

}  // namespace nlden::cli
