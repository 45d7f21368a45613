#include "nlden_cli/commands.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "nlden/checkpoint.hpp"
#include "nlden/error.hpp"
#include "nlden/infer.hpp"
#include "nlden/metrics.hpp"
#include "nlden/noise.hpp"
#include "nlden/parallel.hpp"
#include "nlden/phantom.hpp"

namespace nlden::cli {
namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

json read_json(const fs::path& path, ErrorKind kind) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(kind, path.string() + ": " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
}

std::string number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string phantom_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03zu", i);
  return buf;
}

struct DatasetEntry {
  std::string id;
  fs::path dir;
  bool train = false;
};

struct DatasetInfo {
  std::vector<DatasetEntry> phantoms;
  std::vector<double> fractions;
};

DatasetInfo load_dataset(const fs::path& dataset) {
  const json j = read_json(dataset / "dataset.json", ErrorKind::Format);
  DatasetInfo info;
  try {
    if (j.at("format") != "nlden-dataset") throw Error(ErrorKind::Format, "not a dataset manifest");
    info.fractions = j.at("fractions").get<std::vector<double>>();
    for (const json& p : j.at("phantoms")) {
      info.phantoms.push_back({p.at("id").get<std::string>(), dataset / p.at("dir").get<std::string>(),
                               p.at("split").get<std::string>() == "train"});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, (dataset / "dataset.json").string() + ": " + e.what());
  }
  return info;
}

struct StoreRecord {
  std::string volume_id;
  Index3 origin{0, 0, 0};
  float embed_scalar = 0.0f;
  NoiseBin bin = NoiseBin::HighNoiseClean;
};

struct StoreInfo {
  fs::path dataset;
  std::size_t patch_size = 0;
  double input_fraction = 0.0;
  EmbedStats embed_stats;
  double embed_median = 0.0;
  std::vector<StoreRecord> records;
};

StoreInfo load_store(const fs::path& store) {
  const json j = read_json(store / "store.json", ErrorKind::Format);
  StoreInfo info;
  try {
    if (j.at("format") != "nlden-patch-store") throw Error(ErrorKind::Format, "not a patch store manifest");
    info.dataset = store / j.at("dataset").get<std::string>();
    info.patch_size = j.at("patch_size").get<std::size_t>();
    info.input_fraction = j.at("input_fraction").get<double>();
    info.embed_stats.mu_logcov = j.at("embed_stats").at("mu_logcov").get<double>();
    info.embed_stats.sigma_logcov = j.at("embed_stats").at("sigma_logcov").get<double>();
    info.embed_median = j.at("median_embed_scalar").get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, (store / "store.json").string() + ": " + e.what());
  }
  std::istringstream lines(read_text(store / "descriptors.ndjson"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const json r = json::parse(line);
      StoreRecord rec;
      rec.volume_id = r.at("volume_id").get<std::string>();
      const auto o = r.at("origin").get<std::vector<std::size_t>>();
      if (o.size() != 3) throw Error(ErrorKind::Format, "origin needs 3 entries");
      rec.origin = {o[0], o[1], o[2]};
      rec.embed_scalar = static_cast<float>(r.at("embed_scalar").get<double>());
      rec.bin = noise_bin_from_string(r.at("bin").get<std::string>());
      info.records.push_back(rec);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Format, "descriptors.ndjson line " + std::to_string(n) + ": " + e.what());
    }
  }
  return info;
}

TrainConfig effective_train_config(const ExperimentConfig& config, const TrainOptions& options,
                                   std::size_t patch_size) {
  TrainConfig t = config.train;
  t.seed = training_seed(config);
  t.use_nle = options.use_nle;
  t.patch = patch_size;
  t.threads = config.threads;
  if (options.total_steps) t.total_steps = *options.total_steps;
  t.validate();
  return t;
}

void write_report_files(const EvaluationReport& report, const fs::path& out) {
  ensure_dir(out);
  write_file_atomic(out / "metrics.csv", metrics_csv(report.rows));
  write_file_atomic(out / "report.json", report_json(report));
  write_file_atomic(out / "box.json", box_json(report));
}

struct VolumeRef {
  fs::path path;
  double fraction = 1.0;
};

VolumeRef read_volume_ref(const json& entry, const std::string& key, const fs::path& base,
                          const std::string& where) {
  if (!entry.contains(key)) throw Error(ErrorKind::Config, where + ": missing '" + key + "'");
  const json& v = entry.at(key);
  VolumeRef ref;
  if (v.is_string()) {
    ref.path = v.get<std::string>();
  } else if (v.is_object() && v.contains("path") && v.at("path").is_string()) {
    ref.path = v.at("path").get<std::string>();
    if (v.contains("fraction")) {
      if (!v.at("fraction").is_number()) throw Error(ErrorKind::Config, where + "." + key + ".fraction: expected a number");
      ref.fraction = v.at("fraction").get<double>();
      if (!(ref.fraction > 0.0 && ref.fraction <= 1.0)) {
        throw Error(ErrorKind::Config, where + "." + key + ".fraction: outside (0, 1]");
      }
    }
  } else {
    throw Error(ErrorKind::Config, where + "." + key + ": expected a path or {path, fraction}");
  }
  if (ref.path.is_relative()) ref.path = base / ref.path;
  if (!fs::exists(ref.path)) {
    throw Error(ErrorKind::Config, where + "." + key + ": " + ref.path.string() + " does not exist");
  }
  return ref;
}

}  // namespace

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Io:
    case ErrorKind::Format:
    case ErrorKind::Checkpoint:
      return 3;
    case ErrorKind::Training:
      return 4;
    default:
      return 2;
  }
}

void cmd_simulate(const ExperimentConfig& config, const fs::path& out) {
  config.validate();
  const std::vector<PhantomSpec> specs = config.phantom_specs.empty()
                                             ? make_phantom_set(config.phantoms, phantom_seed(config))
                                             : config.phantom_specs;
  CountSimConfig sim = config.simulation;
  sim.seed = simulation_seed(config);
  ensure_dir(out);
  parallel_for(specs.size(), config.threads, [&](std::size_t i, std::size_t) {
    const std::string id = phantom_id(i);
    const PairedDataset data = make_paired_dataset(specs[i], sim);
    write_paired_dataset(out / ("phantom_" + id), id, data, specs[i], sim,
                         config.calibration.for_phantom(specs[i]));
  });
  ojson j;
  j["format"] = "nlden-dataset";
  j["version"] = 1;
  j["seed"] = config.seed;
  j["fractions"] = sim.fractions;
  j["train_count"] = config.patches.train_count;
  ojson list = ojson::array();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    list.push_back({{"id", phantom_id(i)},
                    {"dir", "phantom_" + phantom_id(i)},
                    {"split", i < config.patches.train_count ? "train" : "test"}});
  }
  j["phantoms"] = list;
  j["config"] = ojson::parse(config_json(config));
  write_file_atomic(out / "dataset.json", j.dump(2) + "\n");
}

PatchStoreSummary cmd_patches(const fs::path& dataset, const ExperimentConfig& config,
                              const fs::path& out) {
  config.validate();
  const DatasetInfo info = load_dataset(dataset);
  const double f = config.patches.input_fraction;
  bool listed = false;
  for (double x : info.fractions) listed = listed || x == f;
  if (!listed) throw Error(ErrorKind::Config, "patches.input_fraction: dataset has no fraction " + number(f));
  const std::string tag = fraction_tag(f);
  const std::size_t p = config.train.patch;

  struct Entry {
    std::string id;
    Patch patch;
  };
  std::vector<Entry> kept;
  PatchStoreSummary summary;
  for (const DatasetEntry& ph : info.phantoms) {
    if (!ph.train) continue;
    const Volume vol = load_volume(ph.dir / (tag + ".nvol"));
    const double cps = vol.domain() == Domain::SUV ? vol.counts_per_suv() : 1.0;
    for (Patch& patch : extract_patches(vol, p, config.patches.stride)) {
      std::vector<float> counts(patch.values.size());
      for (std::size_t k = 0; k < counts.size(); ++k) {
        counts[k] = static_cast<float>(patch.values[k] * cps);
      }
      try {
        patch.descriptor = describe_patch(counts, config.binning, EmbedStats{});
      } catch (const Error& e) {
        const ErrorKind k = e.kind();
        if (k != ErrorKind::ConstantInput && k != ErrorKind::EmptyMask && k != ErrorKind::EmptyBackground) throw;
        summary.excluded.push_back({ph.id, patch.origin, std::string(to_string(k))});
        continue;
      }
      patch.values.clear();
      kept.push_back({ph.id, std::move(patch)});
    }
  }
  if (kept.size() < 2) throw Error(ErrorKind::Config, "patches: fewer than two usable training patches");

  std::vector<double> covs;
  for (const Entry& e : kept) covs.push_back(e.patch.descriptor->cov);
  summary.embed_stats = fit_embed_stats(covs);
  std::vector<double> scalars;
  std::string ndjson;
  for (Entry& e : kept) {
    NoiseDescriptor& d = *e.patch.descriptor;
    d.embed_scalar = embed_scalar(d.cov, summary.embed_stats);
    scalars.push_back(d.embed_scalar);
    ++summary.bin_counts[static_cast<std::size_t>(d.bin)];
    ndjson += descriptor_record(e.id, e.patch) + "\n";
  }
  std::sort(scalars.begin(), scalars.end());
  summary.embed_median = sorted_quantile(scalars, 0.5);
  summary.patch_count = kept.size();

  ensure_dir(out);
  ojson j;
  j["format"] = "nlden-patch-store";
  j["version"] = 1;
  j["dataset"] = fs::relative(fs::absolute(dataset), fs::absolute(out)).generic_string();
  j["input_fraction"] = f;
  j["input_file"] = tag + ".nvol";
  j["patch_size"] = p;
  j["stride"] = config.patches.stride;
  j["binning"] = {{"cov_split", config.binning.cov_split},
                  {"lump_split", config.binning.lump_split},
                  {"histogram_bins", config.binning.histogram_bins}};
  j["embed_stats"] = {{"mu_logcov", summary.embed_stats.mu_logcov},
                      {"sigma_logcov", summary.embed_stats.sigma_logcov}};
  j["median_embed_scalar"] = summary.embed_median;
  j["patch_count"] = summary.patch_count;
  ojson bins = ojson::object();
  for (std::size_t b = 0; b < kNoiseBinCount; ++b) {
    bins[std::string(to_string(static_cast<NoiseBin>(b)))] = summary.bin_counts[b];
  }
  j["bin_counts"] = bins;
  ojson excluded = ojson::array();
  for (const ExcludedPatch& x : summary.excluded) {
    excluded.push_back({{"volume_id", x.volume_id},
                        {"origin", {x.origin[0], x.origin[1], x.origin[2]}},
                        {"reason", x.reason}});
  }
  j["excluded"] = excluded;
  write_file_atomic(out / "descriptors.ndjson", ndjson);
  write_file_atomic(out / "store.json", j.dump(2) + "\n");
  return summary;
}

std::string loss_trace_csv(std::span<const LossRecord> trace) {
  std::string s = "step,lr,loss\n";
  for (const LossRecord& r : trace) {
    s += std::to_string(r.step) + "," + number(r.lr) + "," + number(r.loss) + "\n";
  }
  return s;
}

std::vector<LossRecord> parse_loss_trace(std::string_view text) {
  std::vector<LossRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != "step,lr,loss") {
    throw Error(ErrorKind::Format, "loss trace: missing 'step,lr,loss' header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossRecord r;
    const char* p = line.data();
    const char* end = p + line.size();
    auto a = std::from_chars(p, end, r.step);
    if (a.ec != std::errc() || a.ptr == end || *a.ptr != ',') throw Error(ErrorKind::Format, "loss trace: bad line '" + line + "'");
    auto b = std::from_chars(a.ptr + 1, end, r.lr);
    if (b.ec != std::errc() || b.ptr == end || *b.ptr != ',') throw Error(ErrorKind::Format, "loss trace: bad line '" + line + "'");
    auto c = std::from_chars(b.ptr + 1, end, r.loss);
    if (c.ec != std::errc() || c.ptr != end) throw Error(ErrorKind::Format, "loss trace: bad line '" + line + "'");
    out.push_back(r);
  }
  return out;
}

TrainSummary cmd_train(const fs::path& store, const ExperimentConfig& config,
                       const TrainOptions& options, const fs::path& out) {
  config.validate();
  const StoreInfo info = load_store(store);
  const TrainConfig tc = effective_train_config(config, options, info.patch_size);
  const DatasetInfo ds = load_dataset(info.dataset);
  const std::string tag = fraction_tag(info.input_fraction);

  std::map<std::string, const DatasetEntry*> by_id;
  for (const DatasetEntry& e : ds.phantoms) by_id[e.id] = &e;
  std::map<std::string, std::pair<Volume, Volume>> volumes;
  std::vector<TrainingPair> pairs;
  pairs.reserve(info.records.size());
  for (const StoreRecord& rec : info.records) {
    auto it = volumes.find(rec.volume_id);
    if (it == volumes.end()) {
      const auto found = by_id.find(rec.volume_id);
      if (found == by_id.end()) throw Error(ErrorKind::Format, "store references unknown volume " + rec.volume_id);
      const fs::path dir = found->second->dir;
      Volume input = to_suv(load_volume(dir / (tag + ".nvol")), config.calibration, info.input_fraction);
      Volume target = to_suv(load_volume(dir / "full.nvol"), config.calibration, 1.0);
      it = volumes.emplace(rec.volume_id, std::make_pair(std::move(input), std::move(target))).first;
    }
    TrainingPair pair;
    pair.size = info.patch_size;
    pair.input = extract_patch(it->second.first, rec.origin, info.patch_size).values;
    pair.target = extract_patch(it->second.second, rec.origin, info.patch_size).values;
    pair.embed_scalar = rec.embed_scalar;
    pair.bin = rec.bin;
    pairs.push_back(std::move(pair));
  }

  TrainState state;
  if (options.resume && fs::exists(out / "manifest.json")) {
    Checkpoint ck = load_checkpoint(out);
    if (!(ck.model == config.model)) throw Error(ErrorKind::Config, "resume: model config differs from checkpoint");
    if (ck.seed != tc.seed) throw Error(ErrorKind::Config, "resume: seed differs from checkpoint");
    if (ck.use_nle != tc.use_nle) throw Error(ErrorKind::Config, "resume: use_nle differs from checkpoint");
    if (!ck.adam) throw Error(ErrorKind::Checkpoint, "resume: checkpoint has no optimizer state");
    if (ck.iteration > tc.total_steps) throw Error(ErrorKind::Config, "resume: checkpoint is past total_steps");
    state.params = std::move(ck.params);
    state.adam = std::move(*ck.adam);
    state.next_step = ck.iteration;
    for (const LossRecord& r : parse_loss_trace(read_text(out / "loss_trace.csv"))) {
      if (r.step < ck.iteration) state.trace.push_back(r);
    }
    if (state.trace.size() != ck.iteration) throw Error(ErrorKind::Format, "resume: loss trace does not match checkpoint");
  } else {
    state = initial_train_state(config.model, tc);
  }

  TrainSummary summary;
  const std::size_t start = state.next_step;
  TrainHooks hooks;
  hooks.stop_at = options.stop_at;
  train_loop(pairs, config.model, tc, state, hooks);
  summary.steps_run = state.next_step - start;
  summary.iteration = state.next_step;
  if (!state.trace.empty()) {
    summary.first_loss = state.trace.front().loss;
    summary.last_loss = state.trace.back().loss;
  }

  Checkpoint ck;
  ck.model = config.model;
  ck.params = state.params;
  ck.embed_stats = info.embed_stats;
  ck.embed_median = info.embed_median;
  ck.seed = tc.seed;
  ck.iteration = state.next_step;
  ck.use_nle = tc.use_nle;
  ck.adam = state.adam;
  save_checkpoint(out, ck);
  write_file_atomic(out / "loss_trace.csv", loss_trace_csv(state.trace));
  return summary;
}

Volume to_suv(const Volume& volume, const Calibration& calibration, double fraction) {
  if (volume.domain() == Domain::SUV) return volume;
  if (!calibration.administered_activity_mbq) {
    throw Error(ErrorKind::Config, "calibration.administered_activity_mbq is required to SUV-normalise a counts volume");
  }
  return suv_normalize(volume, *calibration.administered_activity_mbq * fraction, calibration.weight_kg,
                       calibration.sensitivity);
}

Volume cmd_denoise(const fs::path& input, const fs::path& checkpoint, const ExperimentConfig& config,
                   const DenoiseOptions& options, const fs::path& out) {
  Volume vol = load_volume(input);
  if (options.fraction) {
    if (!(*options.fraction > 0.0 && *options.fraction <= 1.0)) {
      throw Error(ErrorKind::Config, "fraction: outside (0, 1]");
    }
    vol = to_suv(vol, config.calibration, *options.fraction);
  }
  const Checkpoint ck = load_checkpoint(checkpoint);
  NoisePipeline noise{config.binning, ck.embed_stats, ck.embed_median};
  InferenceOptions io;
  const Dims& d = vol.dims();
  io.patch_size = std::min({options.patch_size, d.nx, d.ny, d.nz});
  io.stride = options.stride;
  io.use_nle = ck.use_nle;
  io.threads = options.threads;
  Volume result = infer_volume(vol, ck.model, ck.params, io, noise);
  if (!out.parent_path().empty()) ensure_dir(out.parent_path());
  save_volume(result, out);
  return result;
}

EvaluationReport cmd_eval(const fs::path& pairing, const ExperimentConfig& config, const fs::path& out) {
  const json doc = read_json(pairing, ErrorKind::Config);
  if (!doc.is_object() || !doc.contains("images") || !doc.at("images").is_array() || doc.at("images").empty()) {
    throw Error(ErrorKind::Config, "pairing manifest: expected a non-empty 'images' array");
  }
  const fs::path base = pairing.parent_path();
  SsimOptions ssim_opts;
  std::set<std::string> ids;
  std::vector<MetricsRow> rows;
  std::size_t index = 0;
  for (const json& entry : doc.at("images")) {
    const std::string where = "images[" + std::to_string(index++) + "]";
    if (!entry.is_object() || !entry.contains("id") || !entry.at("id").is_string()) {
      throw Error(ErrorKind::Config, where + ": missing string 'id'");
    }
    const std::string id = entry.at("id").get<std::string>();
    if (!ids.insert(id).second) throw Error(ErrorKind::Config, where + ": duplicate id '" + id + "'");
    const VolumeRef refs[4] = {read_volume_ref(entry, "reference", base, where),
                               read_volume_ref(entry, "input", base, where),
                               read_volume_ref(entry, "a", base, where), read_volume_ref(entry, "b", base, where)};
    std::vector<Volume> v;
    for (const VolumeRef& r : refs) v.push_back(to_suv(load_volume(r.path), config.calibration, r.fraction));
    for (std::size_t k = 1; k < 4; ++k) {
      if (!(v[k].dims() == v[0].dims())) {
        throw Error(ErrorKind::Config, where + ": dims of '" + refs[k].path.string() + "' differ from the reference");
      }
    }
    MetricsRow row;
    row.image_id = id;
    row.psnr_input = psnr(v[1], v[0], config.eval.psnr_peak);
    row.psnr_a = psnr(v[2], v[0], config.eval.psnr_peak);
    row.psnr_b = psnr(v[3], v[0], config.eval.psnr_peak);
    row.ssim_input = ssim3d(v[1], v[0], ssim_opts);
    row.ssim_a = ssim3d(v[2], v[0], ssim_opts);
    row.ssim_b = ssim3d(v[3], v[0], ssim_opts);
    rows.push_back(std::move(row));
  }
  EvaluationReport report = build_report(std::move(rows));
  write_report_files(report, out);
  return report;
}

EvaluationReport cmd_eval_csv(const fs::path& csv, const fs::path& out) {
  EvaluationReport report = build_report(parse_metrics_csv(read_text(csv)));
  write_report_files(report, out);
  return report;
}

}  // namespace nlden::cli
