#include "nlden_cli/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "nlden/error.hpp"
#include "nlden/rng.hpp"

namespace nlden::cli {
namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

[[noreturn]] void bad(const std::string& field, const std::string& what) {
  throw Error(ErrorKind::Config, field + ": " + what);
}

/// Reads one JSON object, remembering which keys were consumed so that
/// typos surface as errors instead of silently keeping defaults.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) bad(path_.empty() ? "config" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_.contains(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    out = convert<T>(node_.at(key), field(key));
  }

  template <typename T>
  void get_optional(const std::string& key, std::optional<T>& out) {
    if (!has(key)) return;
    if (node_.at(key).is_null()) {
      out.reset();
      return;
    }
    out = convert<T>(node_.at(key), field(key));
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    return Section(node_.at(key), field(key));
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return node_.at(key);
  }

  void finish() const {
    for (const auto& item : node_.items()) {
      if (!seen_.count(item.key())) bad(field(item.key()), "unknown key");
    }
  }

  template <typename T>
  static T convert(const json& v, const std::string& name) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) bad(name, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned()) bad(name, "expected a non-negative integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) bad(name, "expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) bad(name, "expected a string");
      return v.get<std::string>();
    } else {
      static_assert(std::is_same_v<T, std::vector<double>>);
      if (!v.is_array()) bad(name, "expected an array of numbers");
      std::vector<double> out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<double>(v[i], name + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

Dims read_dims(const json& v, const std::string& name) {
  if (!v.is_array() || v.size() != 3) bad(name, "expected [nx, ny, nz]");
  return {Section::convert<std::size_t>(v[0], name + "[0]"), Section::convert<std::size_t>(v[1], name + "[1]"),
          Section::convert<std::size_t>(v[2], name + "[2]")};
}

Spacing read_spacing(const json& v, const std::string& name) {
  if (!v.is_array() || v.size() != 3) bad(name, "expected [sx, sy, sz]");
  return {static_cast<float>(Section::convert<double>(v[0], name + "[0]")),
          static_cast<float>(Section::convert<double>(v[1], name + "[1]")),
          static_cast<float>(Section::convert<double>(v[2], name + "[2]"))};
}

void read_phantom_set(Section s, PhantomSetConfig& p) {
  s.get("count", p.count);
  if (s.has("dims")) p.dims = read_dims(s.raw("dims"), s.field("dims"));
  if (s.has("voxel_size_mm")) p.voxel_size = read_spacing(s.raw("voxel_size_mm"), s.field("voxel_size_mm"));
  s.get("background_tiers", p.background_tiers);
  s.get("min_spheres", p.min_spheres);
  s.get("max_spheres", p.max_spheres);
  s.get("min_radius", p.min_radius);
  s.get("max_radius", p.max_radius);
  s.get("min_contrast", p.min_contrast);
  s.get("max_contrast", p.max_contrast);
  s.get("blob_count", p.blob_count);
  s.get("blob_relative_amplitude", p.blob_relative_amplitude);
  s.get("blob_width", p.blob_width);
  s.finish();
}

PhantomSpec read_phantom_spec(Section s) {
  PhantomSpec spec;
  if (s.has("dims")) spec.dims = read_dims(s.raw("dims"), s.field("dims"));
  if (s.has("voxel_size_mm")) spec.voxel_size = read_spacing(s.raw("voxel_size_mm"), s.field("voxel_size_mm"));
  s.get("background_rate", spec.background_rate);
  s.get("seed", spec.seed);
  if (s.has("spheres")) {
    const json& arr = s.raw("spheres");
    if (!arr.is_array()) bad(s.field("spheres"), "expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Section ss(arr[i], s.field("spheres[" + std::to_string(i) + "]"));
      Sphere sphere;
      if (ss.has("center")) {
        const auto c = Section::convert<std::vector<double>>(ss.raw("center"), ss.field("center"));
        if (c.size() != 3) bad(ss.field("center"), "expected [x, y, z]");
        sphere.center = {c[0], c[1], c[2]};
      }
      ss.get("radius", sphere.radius);
      ss.get("contrast", sphere.contrast);
      ss.finish();
      spec.spheres.push_back(sphere);
    }
  }
  if (s.has("lumpy_blobs")) {
    Section b = s.sub("lumpy_blobs");
    b.get("count", spec.blobs.count);
    b.get("amplitude", spec.blobs.amplitude);
    b.get("width", spec.blobs.width);
    b.finish();
  }
  s.finish();
  return spec;
}

/// Re-throws a module validation error with the config section prefixed.
template <typename F>
void validate_section(const std::string& section, F&& check) {
  try {
    check();
  } catch (const Error& e) {
    std::string msg = e.what();
    const auto colon = msg.find(": ");
    if (colon != std::string::npos) msg = msg.substr(colon + 2);
    if (msg.rfind(section, 0) != 0) msg = section + "." + msg;
    throw Error(ErrorKind::Config, msg);
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (threads < 1) bad("threads", "must be >= 1");
  validate_section("phantoms", [&] { phantoms.validate(); });
  for (std::size_t i = 0; i < phantom_specs.size(); ++i) {
    validate_section("phantom_specs[" + std::to_string(i) + "]", [&] { phantom_specs[i].validate(); });
  }
  validate_section("simulation", [&] { simulation.validate(); });
  if (calibration.administered_activity_mbq && !(*calibration.administered_activity_mbq > 0.0)) {
    bad("calibration.administered_activity_mbq", "must be > 0");
  }
  if (!(calibration.background_suv > 0.0)) bad("calibration.background_suv", "must be > 0");
  if (!(calibration.weight_kg > 0.0)) bad("calibration.weight_kg", "must be > 0");
  if (!(calibration.sensitivity > 0.0)) bad("calibration.sensitivity", "must be > 0");
  validate_section("binning", [&] { binning.validate(); });
  if (patches.stride < 1) bad("patches.stride", "must be >= 1");
  if (!(patches.input_fraction > 0.0 && patches.input_fraction < 1.0)) {
    bad("patches.input_fraction", "must lie in (0, 1)");
  }
  bool listed = false;
  for (double f : simulation.fractions) listed = listed || f == patches.input_fraction;
  if (!listed) bad("patches.input_fraction", "not among simulation.fractions");
  bool has_full = false;
  for (double f : simulation.fractions) has_full = has_full || f == 1.0;
  if (!has_full) bad("simulation.fractions", "must include 1 (the training target)");
  const std::size_t n_phantoms = phantom_specs.empty() ? phantoms.count : phantom_specs.size();
  if (patches.train_count < 1 || patches.train_count > n_phantoms) {
    bad("patches.train_count", "must lie in [1, number of phantoms]");
  }
  validate_section("model", [&] { model.validate(); });
  validate_section("train", [&] { train.validate(); });
  if (eval.stride < 1) bad("eval.stride", "must be >= 1");
  if (eval.psnr_peak && !(*eval.psnr_peak > 0.0)) bad("eval.psnr_peak", "must be > 0");
}

ExperimentConfig parse_config(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Section root(doc, "");
  root.get("seed", c.seed);
  root.get("threads", c.threads);
  if (root.has("out")) c.out = root.convert<std::string>(root.raw("out"), "out");
  if (root.has("phantoms")) read_phantom_set(root.sub("phantoms"), c.phantoms);
  if (root.has("phantom_specs")) {
    const json& arr = root.raw("phantom_specs");
    if (!arr.is_array()) bad("phantom_specs", "expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      c.phantom_specs.push_back(read_phantom_spec(Section(arr[i], "phantom_specs[" + std::to_string(i) + "]")));
    }
  }
  if (root.has("simulation")) {
    Section s = root.sub("simulation");
    s.get("fractions", c.simulation.fractions);
    s.get("psf_fwhm_mm", c.simulation.psf_fwhm_mm);
    s.finish();
  }
  if (root.has("calibration")) {
    Section s = root.sub("calibration");
    s.get_optional("administered_activity_mbq", c.calibration.administered_activity_mbq);
    s.get("background_suv", c.calibration.background_suv);
    s.get("weight_kg", c.calibration.weight_kg);
    s.get("sensitivity", c.calibration.sensitivity);
    s.finish();
  }
  if (root.has("binning")) {
    Section s = root.sub("binning");
    s.get("cov_split", c.binning.cov_split);
    s.get("lump_split", c.binning.lump_split);
    s.get("histogram_bins", c.binning.histogram_bins);
    s.finish();
  }
  if (root.has("patches")) {
    Section s = root.sub("patches");
    s.get("stride", c.patches.stride);
    s.get("input_fraction", c.patches.input_fraction);
    s.get("train_count", c.patches.train_count);
    s.finish();
  }
  if (root.has("model")) {
    Section s = root.sub("model");
    s.get("channels", c.model.channels);
    s.get("n_orb", c.model.n_orb);
    s.get("n_cab", c.model.n_cab);
    s.get("reduction", c.model.reduction);
    s.get("nle_hidden", c.model.nle_hidden);
    s.finish();
  }
  if (root.has("train")) {
    Section s = root.sub("train");
    s.get("patch", c.train.patch);
    s.get("batch", c.train.batch);
    s.get("total_steps", c.train.total_steps);
    s.get("lr0", c.train.lr0);
    s.get("lr_min", c.train.lr_min);
    s.get("beta1", c.train.beta1);
    s.get("beta2", c.train.beta2);
    s.get("eps", c.train.eps);
    if (s.has("loss")) {
      const std::string name = s.convert<std::string>(s.raw("loss"), s.field("loss"));
      try {
        c.train.loss = loss_kind_from_string(name);
      } catch (const Error&) {
        bad(s.field("loss"), "unknown loss '" + name + "'");
      }
    }
    s.get("stratified", c.train.stratified);
    s.get("use_nle", c.train.use_nle);
    s.finish();
  }
  if (root.has("eval")) {
    Section s = root.sub("eval");
    s.get("stride", c.eval.stride);
    s.get_optional("psnr_peak", c.eval.psnr_peak);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string config_json(const ExperimentConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  const PhantomSetConfig& p = c.phantoms;
  j["phantoms"] = {{"count", p.count},
                   {"dims", {p.dims.nx, p.dims.ny, p.dims.nz}},
                   {"voxel_size_mm", {p.voxel_size.sx, p.voxel_size.sy, p.voxel_size.sz}},
                   {"background_tiers", p.background_tiers},
                   {"min_spheres", p.min_spheres},
                   {"max_spheres", p.max_spheres},
                   {"min_radius", p.min_radius},
                   {"max_radius", p.max_radius},
                   {"min_contrast", p.min_contrast},
                   {"max_contrast", p.max_contrast},
                   {"blob_count", p.blob_count},
                   {"blob_relative_amplitude", p.blob_relative_amplitude},
                   {"blob_width", p.blob_width}};
  if (!c.phantom_specs.empty()) {
    ojson specs = ojson::array();
    for (const PhantomSpec& s : c.phantom_specs) {
      ojson spheres = ojson::array();
      for (const Sphere& sp : s.spheres) {
        spheres.push_back({{"center", sp.center}, {"radius", sp.radius}, {"contrast", sp.contrast}});
      }
      specs.push_back({{"dims", {s.dims.nx, s.dims.ny, s.dims.nz}},
                       {"voxel_size_mm", {s.voxel_size.sx, s.voxel_size.sy, s.voxel_size.sz}},
                       {"background_rate", s.background_rate},
                       {"spheres", spheres},
                       {"lumpy_blobs", {{"count", s.blobs.count}, {"amplitude", s.blobs.amplitude}, {"width", s.blobs.width}}},
                       {"seed", s.seed}});
    }
    j["phantom_specs"] = specs;
  }
  j["simulation"] = {{"fractions", c.simulation.fractions}, {"psf_fwhm_mm", c.simulation.psf_fwhm_mm}};
  j["calibration"] = {{"administered_activity_mbq", c.calibration.administered_activity_mbq
                                                         ? ojson(*c.calibration.administered_activity_mbq)
                                                         : ojson(nullptr)},
                      {"background_suv", c.calibration.background_suv},
                      {"weight_kg", c.calibration.weight_kg},
                      {"sensitivity", c.calibration.sensitivity}};
  j["binning"] = {{"cov_split", c.binning.cov_split},
                  {"lump_split", c.binning.lump_split},
                  {"histogram_bins", c.binning.histogram_bins}};
  j["patches"] = {{"stride", c.patches.stride},
                  {"input_fraction", c.patches.input_fraction},
                  {"train_count", c.patches.train_count}};
  j["model"] = {{"channels", c.model.channels},
                {"n_orb", c.model.n_orb},
                {"n_cab", c.model.n_cab},
                {"reduction", c.model.reduction},
                {"nle_hidden", c.model.nle_hidden}};
  j["train"] = {{"patch", c.train.patch},
                {"batch", c.train.batch},
                {"total_steps", c.train.total_steps},
                {"lr0", c.train.lr0},
                {"lr_min", c.train.lr_min},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"eps", c.train.eps},
                {"loss", std::string(to_string(c.train.loss))},
                {"stratified", c.train.stratified},
                {"use_nle", c.train.use_nle}};
  j["eval"] = {{"stride", c.eval.stride}};
  j["eval"]["psnr_peak"] = c.eval.psnr_peak ? ojson(*c.eval.psnr_peak) : ojson(nullptr);
  return j.dump(2);
}

SuvCalibration Calibration::for_phantom(const PhantomSpec& spec) const {
  const double aa = administered_activity_mbq
                        ? *administered_activity_mbq
                        : spec.background_rate * weight_kg / (sensitivity * background_suv);
  return {aa, weight_kg, sensitivity};
}

std::uint64_t phantom_seed(const ExperimentConfig& config) {
  return derive_seed(config.seed, {0x70686e74ULL});
}

std::uint64_t simulation_seed(const ExperimentConfig& config) {
  return derive_seed(config.seed, {0x73696d75ULL});
}

std::uint64_t training_seed(const ExperimentConfig& config) {
  return derive_seed(config.seed, {0x74726169ULL});
}

}  // namespace nlden::cli
