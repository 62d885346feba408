#pragma once

// Versioned binary tensor container used for backbone checkpoints and ADIR
// state snapshots.
//
//   bytes 0..7   magic "SSLGCIL\0"
//   u32          format version (1)
//   u64          header length in bytes
//   header       UTF-8 JSON: {"kind", "meta", "tensors": [{"name","rows","cols"}]}
//   payload      tensors in header order, column-major little-endian float64
//
// Doubles are copied byte-for-byte, so save/load round trips are bit-exact.

#include "sslgcil/adir.hpp"
#include "sslgcil/backbone.hpp"
#include "sslgcil/common.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace sslgcil {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

inline constexpr std::array<char, 8> kCheckpointMagic = {'S', 'S', 'L', 'G', 'C', 'I', 'L', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  std::vector<std::pair<std::string, Matrix>> tensors;

  void add(std::string name, const Matrix& m) { tensors.emplace_back(std::move(name), m); }
  void add(std::string name, const Vector& v) { tensors.emplace_back(std::move(name), Matrix(v)); }

  const Matrix& get(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return m;
    throw IoError("checkpoint: missing tensor '" + name + "'");
  }
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::ordered_json header;
  header["kind"] = ckpt.kind;
  header["meta"] = ckpt.meta;
  header["tensors"] = nlohmann::ordered_json::array();
  for (const auto& [name, m] : ckpt.tensors)
    header["tensors"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, m] : ckpt.tensors)
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("checkpoint not found: " + path.string());
  std::array<char, 8> magic{};
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic.data(), magic.size());
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || magic != kCheckpointMagic) throw IoError(path.string() + ": not a checkpoint file");
  if (version != kCheckpointVersion) throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError(path.string() + ": truncated header");

  Checkpoint ckpt;
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(text);
    ckpt.kind = header.at("kind").get<std::string>();
    ckpt.meta = header.at("meta");
    for (const auto& t : header.at("tensors")) {
      Matrix m(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
      in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
      if (!in) throw IoError(path.string() + ": truncated tensor payload");
      ckpt.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad checkpoint header: " + e.what());
  }
  return ckpt;
}

inline Checkpoint to_checkpoint(const Network& net, const nlohmann::ordered_json& meta = nlohmann::ordered_json::object()) {
  Checkpoint ckpt;
  ckpt.kind = "backbone";
  ckpt.meta = meta;
  ckpt.meta["dropout"] = net.mlp.dropout;
  ckpt.meta["frozen"] = net.mlp.frozen;
  visit_trainable(net, [&](const std::string& name, const auto& t) { ckpt.add(name, t); });
  for (int l = 0; l < kMlpLayers; ++l) {
    const std::string p = "mlp." + std::to_string(l) + ".";
    ckpt.add(p + "running_mean", net.mlp.norms[l].running_mean);
    ckpt.add(p + "running_var", net.mlp.norms[l].running_var);
  }
  return ckpt;
}

inline Network network_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "backbone") throw IoError("checkpoint kind is '" + ckpt.kind + "', expected 'backbone'");
  Network net;
  net.mlp.dropout = ckpt.meta.at("dropout").get<double>();
  net.mlp.frozen = ckpt.meta.at("frozen").get<bool>();
  visit_trainable(net, [&](const std::string& name, auto& t) {
    const Matrix& m = ckpt.get(name);
    if constexpr (std::is_same_v<std::decay_t<decltype(t)>, Vector>) {
      t = Eigen::Map<const Vector>(m.data(), m.size());
    } else {
      t = m;
    }
  });
  for (int l = 0; l < kMlpLayers; ++l) {
    const std::string p = "mlp." + std::to_string(l) + ".";
    const Matrix& rm = ckpt.get(p + "running_mean");
    const Matrix& rv = ckpt.get(p + "running_var");
    net.mlp.norms[l].running_mean = Eigen::Map<const Vector>(rm.data(), rm.size());
    net.mlp.norms[l].running_var = Eigen::Map<const Vector>(rv.data(), rv.size());
  }
  return net;
}

inline Checkpoint to_checkpoint(const AdirState& state, const nlohmann::ordered_json& meta = nlohmann::ordered_json::object()) {
  Checkpoint ckpt;
  ckpt.kind = "adir_state";
  ckpt.meta = meta;
  ckpt.meta["feature_dim"] = state.feature_dim();
  ckpt.meta["gamma0"] = state.options().gamma0;
  ckpt.meta["reg_exponent"] = state.options().reg_exponent;
  ckpt.meta["reweight"] = state.options().reweight;
  ckpt.meta["adaptive_gamma"] = state.options().adaptive_gamma;
  auto classes = nlohmann::ordered_json::array();
  for (const auto& [cls, s] : state.stats()) {
    classes.push_back({{"class", cls}, {"count", s.count}});
    ckpt.add("A." + std::to_string(cls), s.auto_corr);
    ckpt.add("C." + std::to_string(cls), s.cross_corr);
  }
  ckpt.meta["classes"] = classes;
  return ckpt;
}

inline AdirState adir_state_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "adir_state") throw IoError("checkpoint kind is '" + ckpt.kind + "', expected 'adir_state'");
  AdirOptions opts;
  opts.gamma0 = ckpt.meta.at("gamma0").get<double>();
  opts.reg_exponent = ckpt.meta.at("reg_exponent").get<double>();
  opts.reweight = ckpt.meta.at("reweight").get<bool>();
  opts.adaptive_gamma = ckpt.meta.at("adaptive_gamma").get<bool>();
  AdirState state(ckpt.meta.at("feature_dim").get<int>(), opts);
  for (const auto& c : ckpt.meta.at("classes")) {
    const int cls = c.at("class").get<int>();
    ClassStats s;
    s.count = c.at("count").get<std::int64_t>();
    s.auto_corr = ckpt.get("A." + std::to_string(cls));
    s.cross_corr = ckpt.get("C." + std::to_string(cls));
    state.restore(cls, std::move(s));
  }
  return state;
}

}  // namespace sslgcil
