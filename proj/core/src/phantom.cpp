#include "nlden/phantom.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "nlden/error.hpp"
#include "nlden/rng.hpp"

namespace nlden {
namespace {

constexpr double kFwhmToSigma = 2.3548;

/// Half-sample symmetric reflection of an index into [0, n).
std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto period = static_cast<std::ptrdiff_t>(2 * n);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<std::ptrdiff_t>(n)) m = period - 1 - m;
  return static_cast<std::size_t>(m);
}

void blur_axis(std::vector<double>& data, const Dims& d, std::size_t axis,
               const std::vector<double>& taps) {
  if (taps.size() <= 1) return;
  const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
  const std::size_t n = d[axis];
  const std::size_t step = axis == 0 ? 1 : (axis == 1 ? d.nx : d.nx * d.ny);
  std::vector<double> line(n);
  std::vector<double> out(n);
  const std::size_t lines = d.count() / n;
  for (std::size_t l = 0; l < lines; ++l) {
    std::size_t base = 0;
    if (axis == 0) {
      base = l * d.nx;
    } else if (axis == 1) {
      base = (l % d.nx) + (l / d.nx) * d.nx * d.ny;
    } else {
      base = l;
    }
    for (std::size_t i = 0; i < n; ++i) line[i] = data[base + i * step];
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        acc += taps[static_cast<std::size_t>(k + radius)] *
               line[reflect(static_cast<std::ptrdiff_t>(i) + k, n)];
      }
      out[i] = acc;
    }
    for (std::size_t i = 0; i < n; ++i) data[base + i * step] = out[i];
  }
}

nlohmann::ordered_json spec_json(const PhantomSpec& spec) {
  nlohmann::ordered_json j;
  j["dims"] = {spec.dims.nx, spec.dims.ny, spec.dims.nz};
  j["voxel_size_mm"] = {spec.voxel_size.sx, spec.voxel_size.sy, spec.voxel_size.sz};
  j["background_rate"] = spec.background_rate;
  auto spheres = nlohmann::ordered_json::array();
  for (const Sphere& s : spec.spheres) {
    spheres.push_back({{"center", s.center}, {"radius", s.radius}, {"contrast", s.contrast}});
  }
  j["spheres"] = spheres;
  j["lumpy_blobs"] = {{"count", spec.blobs.count},
                      {"amplitude", spec.blobs.amplitude},
                      {"width", spec.blobs.width}};
  j["seed"] = spec.seed;
  return j;
}

}  // namespace

void PhantomSpec::validate() const {
  if (dims.nx < 1 || dims.ny < 1 || dims.nz < 1) throw Error(ErrorKind::Spec, "dims must be >= 1");
  if (!(voxel_size.sx > 0 && voxel_size.sy > 0 && voxel_size.sz > 0)) {
    throw Error(ErrorKind::Spec, "voxel size must be positive");
  }
  if (!(background_rate > 0.0) || !std::isfinite(background_rate)) {
    throw Error(ErrorKind::Spec, "background_rate must be positive");
  }
  for (const Sphere& s : spheres) {
    if (!(s.radius > 0.0) || !(s.contrast > 0.0)) {
      throw Error(ErrorKind::Spec, "sphere radius and contrast must be positive");
    }
    for (std::size_t a = 0; a < 3; ++a) {
      if (s.center[a] - s.radius < 0.0 || s.center[a] + s.radius > static_cast<double>(dims[a] - 1)) {
        throw Error(ErrorKind::Spec, "sphere extends outside the volume");
      }
    }
  }
  if (blobs.amplitude < 0.0 || !(blobs.width > 0.0)) {
    throw Error(ErrorKind::Spec, "blob amplitude must be >= 0 and width > 0");
  }
}

void CountSimConfig::validate() const {
  if (fractions.empty()) throw Error(ErrorKind::Config, "fractions: at least one fraction required");
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) {
      throw Error(ErrorKind::Config, "fractions: value " + std::to_string(f) + " outside (0, 1]");
    }
  }
  if (!(psf_fwhm_mm >= 0.0) || !std::isfinite(psf_fwhm_mm)) {
    throw Error(ErrorKind::Config, "psf_fwhm_mm must be >= 0");
  }
}

Volume generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const Dims& d = spec.dims;
  std::vector<double> rate(d.count(), spec.background_rate);
  for (std::size_t z = 0; z < d.nz; ++z) {
    for (std::size_t y = 0; y < d.ny; ++y) {
      for (std::size_t x = 0; x < d.nx; ++x) {
        double mult = 1.0;
        for (const Sphere& s : spec.spheres) {
          const double dx = static_cast<double>(x) - s.center[0];
          const double dy = static_cast<double>(y) - s.center[1];
          const double dz = static_cast<double>(z) - s.center[2];
          if (dx * dx + dy * dy + dz * dz <= s.radius * s.radius) mult *= s.contrast;
        }
        rate[x + d.nx * (y + d.ny * z)] *= mult;
      }
    }
  }

  if (spec.blobs.count > 0 && spec.blobs.amplitude > 0.0) {
    const double w = spec.blobs.width;
    const auto reach = static_cast<std::ptrdiff_t>(std::ceil(4.0 * w));
    for (std::size_t b = 0; b < spec.blobs.count; ++b) {
      SplitMix64 rng(derive_seed(spec.seed, {0x626c6f62ULL, b}));
      const double c[3] = {rng.uniform() * static_cast<double>(d.nx - 1),
                           rng.uniform() * static_cast<double>(d.ny - 1),
                           rng.uniform() * static_cast<double>(d.nz - 1)};
      std::ptrdiff_t lo[3];
      std::ptrdiff_t hi[3];
      for (std::size_t a = 0; a < 3; ++a) {
        lo[a] = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(c[a])) - reach);
        hi[a] = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(d[a]) - 1,
                                         static_cast<std::ptrdiff_t>(std::ceil(c[a])) + reach);
      }
      for (std::ptrdiff_t z = lo[2]; z <= hi[2]; ++z) {
        for (std::ptrdiff_t y = lo[1]; y <= hi[1]; ++y) {
          for (std::ptrdiff_t x = lo[0]; x <= hi[0]; ++x) {
            const double r2 = (x - c[0]) * (x - c[0]) + (y - c[1]) * (y - c[1]) + (z - c[2]) * (z - c[2]);
            rate[static_cast<std::size_t>(x) + d.nx * (static_cast<std::size_t>(y) + d.ny * static_cast<std::size_t>(z))] +=
                spec.blobs.amplitude * std::exp(-r2 / (2.0 * w * w));
          }
        }
      }
    }
  }

  std::vector<float> values(rate.size());
  for (std::size_t i = 0; i < rate.size(); ++i) {
    if (!(rate[i] >= 0.0) || !std::isfinite(rate[i])) {
      throw Error(ErrorKind::Spec, "composed rate is negative or non-finite at voxel " + std::to_string(i));
    }
    values[i] = static_cast<float>(rate[i]);
  }
  return Volume({d, spec.voxel_size, Domain::Counts, 1.0f}, std::move(values));
}

Volume sample_counts(const Volume& lambda, std::uint64_t seed) {
  const auto src = lambda.values();
  std::vector<float> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double rate = src[i];
    if (rate < 0.0) throw Error(ErrorKind::Domain, "negative rate at voxel " + std::to_string(i));
    if (rate == 0.0) {
      out[i] = 0.0f;
      continue;
    }
    SplitMix64 rng(derive_seed(seed, {i}));
    std::poisson_distribution<long long> poisson(rate);
    out[i] = static_cast<float>(poisson(rng));
  }
  VolumeHeader h = lambda.header();
  h.domain = Domain::Counts;
  h.counts_per_suv = 1.0f;
  return Volume(h, std::move(out));
}

Volume thin_counts(const Volume& counts, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw Error(ErrorKind::Parameter, "thinning fraction " + std::to_string(fraction) + " outside [0, 1]");
  }
  const auto src = counts.values();
  std::vector<float> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    const float n = src[i];
    if (n < 0.0f || n != std::floor(n)) {
      throw Error(ErrorKind::Domain, "thin_counts needs non-negative integer counts (voxel " +
                                         std::to_string(i) + ")");
    }
    if (fraction == 1.0 || n == 0.0f) {
      out[i] = n;
    } else if (fraction == 0.0) {
      out[i] = 0.0f;
    } else {
      SplitMix64 rng(derive_seed(seed, {i}));
      std::binomial_distribution<long long> binomial(static_cast<long long>(n), fraction);
      out[i] = static_cast<float>(binomial(rng));
    }
  }
  return Volume(counts.header(), std::move(out));
}

std::vector<double> gaussian_taps(double sigma_voxels) {
  if (!(sigma_voxels > 0.0)) return {1.0};
  const auto radius = static_cast<std::ptrdiff_t>(std::floor(3.0 * sigma_voxels));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
    const double w = std::exp(-static_cast<double>(k * k) / (2.0 * sigma_voxels * sigma_voxels));
    taps[static_cast<std::size_t>(k + radius)] = w;
    sum += w;
  }
  for (double& w : taps) w /= sum;
  return taps;
}

Volume recon_surrogate(const Volume& counts, double psf_fwhm_mm) {
  if (!(psf_fwhm_mm >= 0.0) || !std::isfinite(psf_fwhm_mm)) {
    throw Error(ErrorKind::Parameter, "psf_fwhm_mm must be >= 0");
  }
  if (psf_fwhm_mm == 0.0) return counts;
  const auto src = counts.values();
  std::vector<double> data(src.begin(), src.end());
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const double sigma = psf_fwhm_mm / kFwhmToSigma / counts.voxel_size()[axis];
    blur_axis(data, counts.dims(), axis, gaussian_taps(sigma));
  }
  std::vector<float> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = static_cast<float>(std::max(0.0, data[i]));
  return Volume(counts.header(), std::move(out));
}

const FractionVolume& PairedDataset::at_fraction(double fraction) const {
  for (const FractionVolume& fv : fractions) {
    if (fv.fraction == fraction) return fv;
  }
  throw Error(ErrorKind::Parameter, "dataset has no fraction " + std::to_string(fraction));
}

PairedDataset make_paired_dataset(const PhantomSpec& spec, const CountSimConfig& sim) {
  sim.validate();
  PairedDataset data;
  data.lambda = generate_phantom(spec);
  data.reference = recon_surrogate(data.lambda, sim.psf_fwhm_mm);
  data.full_raw = sample_counts(data.lambda, derive_seed(sim.seed, {0x66756c6cULL, spec.seed}));
  for (double f : sim.fractions) {
    FractionVolume fv;
    fv.fraction = f;
    fv.raw = f == 1.0 ? data.full_raw
                      : thin_counts(data.full_raw, f,
                                    derive_seed(sim.seed, {0x7468696eULL, spec.seed,
                                                           std::bit_cast<std::uint64_t>(f)}));
    fv.recon = recon_surrogate(fv.raw, sim.psf_fwhm_mm);
    data.fractions.push_back(std::move(fv));
  }
  return data;
}

std::string fraction_tag(double fraction) {
  if (fraction == 1.0) return "full";
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << fraction;
  std::string s = os.str();
  while (!s.empty() && s.back() == '0') s.pop_back();
  s.erase(std::remove(s.begin(), s.end(), '.'), s.end());
  return "f" + s;
}

void write_paired_dataset(const std::filesystem::path& dir, const std::string& id,
                          const PairedDataset& data, const PhantomSpec& spec,
                          const CountSimConfig& sim, const std::optional<SuvCalibration>& suv) {
  auto stored = [&](const Volume& v, double fraction) {
    if (!suv) return v;
    return suv_normalize(v, suv->administered_activity_mbq * fraction, suv->weight_kg, suv->sensitivity);
  };
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  save_volume(stored(data.reference, 1.0), dir / "ref.nvol");
  nlohmann::ordered_json files = nlohmann::ordered_json::object();
  files["ref"] = "ref.nvol";
  for (const FractionVolume& fv : data.fractions) {
    const std::string name = fraction_tag(fv.fraction) + ".nvol";
    save_volume(stored(fv.recon, fv.fraction), dir / name);
    files[fraction_tag(fv.fraction)] = name;
  }
  nlohmann::ordered_json m;
  m["id"] = id;
  m["phantom"] = spec_json(spec);
  m["simulation"] = {{"fractions", sim.fractions}, {"psf_fwhm_mm", sim.psf_fwhm_mm}, {"seed", sim.seed}};
  m["files"] = files;
  m["domain"] = suv ? "SUV" : "Counts";
  if (suv) {
    m["calibration"] = {{"administered_activity_mbq", suv->administered_activity_mbq},
                        {"weight_kg", suv->weight_kg},
                        {"sensitivity", suv->sensitivity}};
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + (dir / "manifest.json").string());
  out << m.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed for manifest.json");
}

void PhantomSetConfig::validate() const {
  if (count == 0) throw Error(ErrorKind::Config, "phantoms.count must be >= 1");
  if (background_tiers.empty()) throw Error(ErrorKind::Config, "phantoms.background_tiers is empty");
  for (double t : background_tiers) {
    if (!(t > 0.0)) throw Error(ErrorKind::Config, "phantoms.background_tiers must be positive");
  }
  if (min_spheres > max_spheres) throw Error(ErrorKind::Config, "phantoms: min_spheres > max_spheres");
  if (!(min_radius > 0.0) || min_radius > max_radius) throw Error(ErrorKind::Config, "phantoms: bad radius range");
  if (!(min_contrast > 0.0) || min_contrast > max_contrast) throw Error(ErrorKind::Config, "phantoms: bad contrast range");
  for (std::size_t a = 0; a < 3; ++a) {
    if (static_cast<double>(dims[a]) < 2.0 * max_radius + 3.0) {
      throw Error(ErrorKind::Config, "phantoms: dims too small for max_radius");
    }
  }
  if (blob_relative_amplitude < 0.0 || !(blob_width > 0.0)) throw Error(ErrorKind::Config, "phantoms: bad blob settings");
}

std::vector<PhantomSpec> make_phantom_set(const PhantomSetConfig& config, std::uint64_t seed) {
  config.validate();
  std::vector<PhantomSpec> specs;
  const std::size_t tiers = config.background_tiers.size();
  for (std::size_t i = 0; i < config.count; ++i) {
    SplitMix64 rng(derive_seed(seed, {0x7068616eULL, i}));
    PhantomSpec spec;
    spec.dims = config.dims;
    spec.voxel_size = config.voxel_size;
    spec.background_rate = config.background_tiers[i % tiers];
    spec.seed = derive_seed(seed, {0x73706563ULL, i});
    const std::size_t n_spheres =
        config.min_spheres +
        static_cast<std::size_t>(rng.uniform() * static_cast<double>(config.max_spheres - config.min_spheres + 1));
    for (std::size_t s = 0; s < std::min(n_spheres, config.max_spheres); ++s) {
      Sphere sphere;
      sphere.radius = config.min_radius + rng.uniform() * (config.max_radius - config.min_radius);
      sphere.contrast = config.min_contrast + rng.uniform() * (config.max_contrast - config.min_contrast);
      for (std::size_t a = 0; a < 3; ++a) {
        const double lo = sphere.radius;
        const double hi = static_cast<double>(config.dims[a] - 1) - sphere.radius;
        sphere.center[a] = lo + rng.uniform() * (hi - lo);
      }
      spec.spheres.push_back(sphere);
    }
    if ((i / tiers) % 2 == 1) {
      spec.blobs.count = config.blob_count;
      spec.blobs.amplitude = config.blob_relative_amplitude * spec.background_rate;
      spec.blobs.width = config.blob_width;
    }
    specs.push_back(std::move(spec));
  }
  return specs;
}

}  // namespace nlden
