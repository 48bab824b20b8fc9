#pragma once

// Single-file checkpoint:
//   "AGLNETCK" | u32 version | u64 header bytes | JSON header | raw f64 values
// The header holds the config snapshot, seed, step and the parameter table
// (name, shape) in storage order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "aglnet/config.hpp"
#include "aglnet/model.hpp"

namespace aglnet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'A', 'G', 'L', 'N', 'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  std::uint64_t seed = 0;
  long long step = 0;
  double val_s_alpha = 0.0;
  std::vector<std::pair<std::string, Tensor>> params;
};

inline void save_checkpoint(const std::filesystem::path& path, AGLNet& model, const TrainConfig& cfg, long long step,
                            double val_s_alpha = 0.0) {
  nlohmann::json header;
  header["config"] = to_key_values(cfg);
  header["seed"] = cfg.model.seed;
  header["step"] = step;
  header["val_s_alpha"] = val_s_alpha;
  auto params = model.named_parameters();
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [name, t] : params) {
    const Shape& s = t.shape();
    table.push_back({{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}});
  }
  header["params"] = table;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    const std::uint64_t len = text.size();
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof(kCheckpointVersion));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : params) {
      out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint");
  }
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError("truncated checkpoint header");
  const auto header = nlohmann::json::parse(text);

  Checkpoint ck;
  KeyValues kv = header.at("config").get<KeyValues>();
  ck.config = config_from_key_values(kv);
  ck.seed = header.at("seed").get<std::uint64_t>();
  ck.step = header.at("step").get<long long>();
  ck.val_s_alpha = header.value("val_s_alpha", 0.0);
  for (const auto& entry : header.at("params")) {
    const auto shape = entry.at("shape").get<std::vector<int>>();
    if (shape.size() != 4) throw CheckpointError("bad parameter shape in checkpoint");
    Tensor t(Shape{shape[0], shape[1], shape[2], shape[3]});
    in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw CheckpointError("truncated checkpoint data");
    ck.params.emplace_back(entry.at("name").get<std::string>(), t);
  }
  return ck;
}

/// Copies checkpoint values into `model`, requiring identical parameter names and shapes.
inline void restore_parameters(AGLNet& model, const Checkpoint& ck) {
  auto params = model.named_parameters();
  if (params.size() != ck.params.size()) {
    throw CheckpointError("incompatible checkpoint: " + std::to_string(ck.params.size()) + " tensors, model has " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, dst] = params[i];
    const auto& [src_name, src] = ck.params[i];
    if (name != src_name || !(dst.shape() == src.shape())) {
      throw CheckpointError("incompatible checkpoint: expected " + name + " " + to_string(dst.shape()) + ", found " +
                            src_name + " " + to_string(src.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), dst.data().begin());
  }
}

/// Builds the model described by the checkpoint's config and loads its weights.
inline std::unique_ptr<AGLNet> model_from_checkpoint(const Checkpoint& ck) {
  auto model = std::make_unique<AGLNet>(ck.config.model);
  restore_parameters(*model, ck);
  return model;
}

}  // namespace aglnet
