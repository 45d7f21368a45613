#include "nlden/infer.hpp"

#include <algorithm>

#include "nlden/error.hpp"
#include "nlden/parallel.hpp"

namespace nlden {

Volume infer_volume(const Volume& volume, const ModelConfig& config, const ParamSet<float>& params,
                    const InferenceOptions& options, const NoisePipeline& noise,
                    InferenceReport* report) {
  const Network<float> net(config, params);
  std::vector<Patch> patches = extract_covering_patches(volume, options.patch_size, options.stride);
  const double to_counts = volume.domain() == Domain::SUV ? volume.counts_per_suv() : 1.0;
  const std::size_t workers = std::max<std::size_t>(1, options.threads);
  std::vector<Network<float>::Cache> caches(workers);
  std::vector<std::uint8_t> fell_back(patches.size(), 0);

  parallel_for(patches.size(), workers, [&](std::size_t i, std::size_t w) {
    Patch& patch = patches[i];
    double scalar = noise.fallback_scalar;
    if (options.use_nle) {
      std::vector<float> counts(patch.values.size());
      std::transform(patch.values.begin(), patch.values.end(), counts.begin(),
                     [&](float v) { return static_cast<float>(std::max(0.0, v * to_counts)); });
      try {
        patch.descriptor = describe_patch(counts, noise.binning, noise.stats);
        scalar = patch.descriptor->embed_scalar;
      } catch (const Error&) {
        fell_back[i] = 1;
      }
    }
    const Tensor<float> in = patch_tensor<float>(patch.values, patch.size);
    const Tensor<float> out = net.forward(in, static_cast<float>(scalar), options.use_nle, caches[w]);
    patch.values.assign(out.data.begin(), out.data.end());
    if (volume.domain() == Domain::Counts) {
      for (float& v : patch.values) v = std::max(v, 0.0f);
    }
  });

  if (report != nullptr) {
    report->patches = patches.size();
    report->fallbacks = static_cast<std::size_t>(std::count(fell_back.begin(), fell_back.end(), 1));
  }
  return reassemble(patches, volume.header());
}

}  // namespace nlden
