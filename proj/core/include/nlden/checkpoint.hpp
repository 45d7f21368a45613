#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "nlden/model.hpp"
#include "nlden/noise.hpp"
#include "nlden/train.hpp"

namespace nlden {

/// On disk: manifest.json (config, tensor name -> shape/offset, embedding
/// statistics, seed, iteration) + params.bin (little-endian f32 in manifest
/// order) + optional adam.bin (first moments then second moments, same order).
struct Checkpoint {
  ModelConfig model;
  ParamSet<float> params;
  EmbedStats embed_stats;
  double embed_median = 0.0;
  std::uint64_t seed = 0;
  std::size_t iteration = 0;
  bool use_nle = true;
  std::optional<AdamState<float>> adam;
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Writes `bytes` to `path` via a temporary sibling and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace nlden
