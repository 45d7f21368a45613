#include "nlden/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "nlden/error.hpp"

namespace nlden {
namespace {

using json = nlohmann::ordered_json;

void append_f32(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

float read_f32(const std::string& bytes, std::size_t offset) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) {
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return std::bit_cast<float>(bits);
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Checkpoint, "cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::Io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot rename " + tmp.string() + ": " + ec.message());
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  validate_params(ckpt.params, ckpt.model);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());

  std::string params_bin;
  params_bin.reserve(4 * ckpt.params.scalar_count());
  json tensors = json::array();
  for (const auto& t : ckpt.params) {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", params_bin.size()}});
    for (float v : t.values) append_f32(params_bin, v);
  }

  json m;
  m["format"] = "nlden-checkpoint";
  m["version"] = 1;
  m["config"] = {{"channels", ckpt.model.channels},
                 {"n_orb", ckpt.model.n_orb},
                 {"n_cab", ckpt.model.n_cab},
                 {"reduction", ckpt.model.reduction},
                 {"nle_hidden", ckpt.model.nle_hidden}};
  m["tensors"] = tensors;
  m["params_bytes"] = params_bin.size();
  m["embed_stats"] = {{"mu_logcov", ckpt.embed_stats.mu_logcov},
                      {"sigma_logcov", ckpt.embed_stats.sigma_logcov},
                      {"median_embed_scalar", ckpt.embed_median}};
  m["seed"] = ckpt.seed;
  m["iteration"] = ckpt.iteration;
  m["use_nle"] = ckpt.use_nle;

  if (ckpt.adam) {
    const AdamState<float>& a = *ckpt.adam;
    if (a.m.size() != ckpt.params.size() || a.v.size() != ckpt.params.size()) {
      throw Error(ErrorKind::Checkpoint, "adam state does not match parameters");
    }
    std::string adam_bin;
    adam_bin.reserve(8 * ckpt.params.scalar_count());
    for (std::size_t k = 0; k < a.m.size(); ++k) {
      if (a.m[k].size() != ckpt.params[k].values.size() || a.v[k].size() != ckpt.params[k].values.size()) {
        throw Error(ErrorKind::Checkpoint, "adam state size mismatch for '" + ckpt.params[k].name + "'");
      }
      for (float v : a.m[k]) append_f32(adam_bin, v);
    }
    for (const auto& vk : a.v) {
      for (float v : vk) append_f32(adam_bin, v);
    }
    m["adam"] = {{"step", a.step}, {"file", "adam.bin"}, {"bytes", adam_bin.size()}};
    write_file_atomic(dir / "adam.bin", adam_bin);
  }
  write_file_atomic(dir / "params.bin", params_bin);
  write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  json m;
  try {
    m = json::parse(read_all(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Checkpoint, "manifest.json: " + std::string(e.what()));
  }
  Checkpoint ckpt;
  try {
    if (m.at("format") != "nlden-checkpoint" || m.at("version") != 1) {
      throw Error(ErrorKind::Checkpoint, "unsupported checkpoint format");
    }
    const json& c = m.at("config");
    ckpt.model = {c.at("channels"), c.at("n_orb"), c.at("n_cab"), c.at("reduction"), c.at("nle_hidden")};
    ckpt.model.validate();
    const json& es = m.at("embed_stats");
    ckpt.embed_stats = {es.at("mu_logcov"), es.at("sigma_logcov")};
    ckpt.embed_median = es.at("median_embed_scalar");
    ckpt.seed = m.at("seed");
    ckpt.iteration = m.at("iteration");
    ckpt.use_nle = m.at("use_nle");

    const std::string params_bin = read_all(dir / "params.bin");
    const std::size_t declared = m.at("params_bytes");
    if (params_bin.size() != declared) {
      throw Error(ErrorKind::Checkpoint, "params.bin has " + std::to_string(params_bin.size()) +
                                             " bytes, manifest declares " + std::to_string(declared));
    }
    const auto layout = param_layout(ckpt.model);
    const json& tensors = m.at("tensors");
    if (tensors.size() != layout.size()) {
      throw Error(ErrorKind::Checkpoint, "manifest lists " + std::to_string(tensors.size()) +
                                             " tensors, config implies " + std::to_string(layout.size()));
    }
    std::vector<NamedTensor<float>> loaded;
    for (std::size_t k = 0; k < layout.size(); ++k) {
      const json& t = tensors[k];
      NamedTensor<float> nt{t.at("name"), t.at("shape").get<std::vector<std::size_t>>(), {}};
      if (nt.name != layout[k].name || nt.shape != layout[k].shape) {
        throw Error(ErrorKind::Checkpoint, "tensor '" + nt.name + "' does not match the model layout");
      }
      std::size_t n = 1;
      for (std::size_t s : nt.shape) n *= s;
      const std::size_t offset = t.at("offset");
      if (offset + 4 * n > params_bin.size()) {
        throw Error(ErrorKind::Checkpoint, "tensor '" + nt.name + "' runs past the end of params.bin");
      }
      nt.values.resize(n);
      for (std::size_t i = 0; i < n; ++i) nt.values[i] = read_f32(params_bin, offset + 4 * i);
      loaded.push_back(std::move(nt));
    }
    ckpt.params = ParamSet<float>(std::move(loaded));
    validate_params(ckpt.params, ckpt.model);

    if (m.contains("adam")) {
      const std::string adam_bin = read_all(dir / m.at("adam").at("file").get<std::string>());
      const std::size_t count = ckpt.params.scalar_count();
      if (adam_bin.size() != 8 * count) {
        throw Error(ErrorKind::Checkpoint, "adam.bin has " + std::to_string(adam_bin.size()) +
                                               " bytes, expected " + std::to_string(8 * count));
      }
      AdamState<float> a = AdamState<float>::zeros_like(ckpt.params);
      a.step = m.at("adam").at("step");
      std::size_t off = 0;
      for (auto& mk : a.m) {
        for (float& v : mk) { v = read_f32(adam_bin, off); off += 4; }
      }
      for (auto& vk : a.v) {
        for (float& v : vk) { v = read_f32(adam_bin, off); off += 4; }
      }
      ckpt.adam = std::move(a);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Checkpoint, "manifest.json: " + std::string(e.what()));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Checkpoint) throw;
    throw Error(ErrorKind::Checkpoint, e.what());
  }
  return ckpt;
}

}  // namespace nlden
