#pragma once

// Flat key = value configuration. Lines starting with '#' are comments;
// unknown keys are rejected. Lists are comma separated.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "aglnet/cue_gen.hpp"
#include "aglnet/model.hpp"

namespace aglnet {

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline KeyValues parse_key_values(std::istream& in, const std::string& origin = "config") {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ValidationError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (kv.count(key)) throw ValidationError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    std::string value = t.substr(eq + 1);
    for (std::size_t i = 1; i < value.size(); ++i) {
      if (value[i] == '#' && (value[i - 1] == ' ' || value[i - 1] == '\t')) {
        value.resize(i);
        break;
      }
    }
    kv[key] = trim(value);
  }
  return kv;
}

inline KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config " + path.string());
  return parse_key_values(in, path.string());
}

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ValidationError("config key '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ValidationError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(parse_int(key, trim(item))));
  if (out.empty()) throw ValidationError("config key '" + key + "': empty list");
  return out;
}

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::string format_double(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

}  // namespace detail

enum class DatasetLayout { kSynthetic, kFlat, kCod10k, kCamo, kNc4k };

inline std::string_view layout_name(DatasetLayout l) {
  switch (l) {
    case DatasetLayout::kSynthetic: return "synthetic";
    case DatasetLayout::kFlat: return "flat";
    case DatasetLayout::kCod10k: return "cod10k";
    case DatasetLayout::kCamo: return "camo";
    case DatasetLayout::kNc4k: return "nc4k";
  }
  return "?";
}

inline DatasetLayout parse_layout(std::string_view s) {
  for (auto l : {DatasetLayout::kSynthetic, DatasetLayout::kFlat, DatasetLayout::kCod10k, DatasetLayout::kCamo,
                 DatasetLayout::kNc4k}) {
    if (layout_name(l) == s) return l;
  }
  throw ValidationError("unknown dataset layout '" + std::string(s) + "'");
}

enum class LogFormat { kCsv, kJsonl };

struct TrainConfig {
  ModelConfig model;
  CueKind cue_kind = CueKind::kBoundary;

  DatasetLayout layout = DatasetLayout::kSynthetic;
  std::string data_root;
  std::string data_split = "train";
  int synthetic_count = 32;
  int input_size = 704;
  double val_fraction = 0.1;

  bool augment_flip = true;
  bool augment_crop = true;
  bool augment_jitter = true;

  int steps = 0;   // total optimizer steps; 0 = derive from epochs
  int epochs = 100;
  int batch_size = 8;
  double lr = 1e-4;
  double lr_min = 1e-5;
  int cosine_period_epochs = 40;
  int cosine_period_steps = 0;  // overrides the epoch-based period when > 0
  int eval_every = 0;           // 0 = once per epoch
  LogFormat log_format = LogFormat::kCsv;
  std::string out_dir = "runs/default";

  void validate() const {
    if (model.channels < 1) throw ValidationError("model.channels must be >= 1");
    if (input_size <= 0 || input_size % 32 != 0) {
      throw ValidationError("data.input_size must be a positive multiple of 32, got " + std::to_string(input_size));
    }
    if (!(lr > 0.0)) throw ValidationError("train.lr must be positive");
    if (!(lr_min >= 0.0 && lr_min < lr)) throw ValidationError("train.lr_min must satisfy 0 <= lr_min < lr");
    if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
    if (steps < 0 || epochs < 0) throw ValidationError("train.steps / train.epochs must be non-negative");
    if (steps == 0 && epochs == 0) throw ValidationError("one of train.steps or train.epochs must be positive");
    if (cosine_period_epochs < 1 && cosine_period_steps < 1) throw ValidationError("cosine period must be positive");
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw ValidationError("data.val_fraction must be in [0, 1)");
    if (synthetic_count < 1) throw ValidationError("data.synthetic.count must be >= 1");
    if (layout != DatasetLayout::kSynthetic && data_root.empty()) throw ValidationError("data.root is required");
    if (model.rd_config.iterations < 1) throw ValidationError("rd.iterations must be >= 1");
    for (int q : model.rd_config.q_exponents) {
      FRConfig{1, q, model.rd_config.split_counts, model.rd_config.iterations}.validate(model.channels);
    }
  }
};

/// Table of every recognised key, applied onto `cfg`.
inline void apply_key_values(TrainConfig& cfg, const KeyValues& kv) {
  using namespace detail;
  for (const auto& [key, v] : kv) {
    if (key == "backbone") cfg.model.backbone = parse_backbone_id(v);
    else if (key == "backbone.weights") cfg.model.backbone_weights = v.empty() ? std::nullopt : std::optional(v);
    else if (key == "model.channels") cfg.model.channels = static_cast<int>(parse_int(key, v));
    else if (key == "cue.kind") cfg.cue_kind = parse_cue_kind(v);
    else if (key == "aig.enabled") cfg.model.aig = parse_bool(key, v);
    else if (key == "hfc.combination.enabled") cfg.model.combination = parse_bool(key, v);
    else if (key == "hfc.decoupling.enabled") cfg.model.decoupling = parse_bool(key, v);
    else if (key == "rd.enabled") cfg.model.rd = parse_bool(key, v);
    else if (key == "rd.iterations") cfg.model.rd_config.iterations = static_cast<int>(parse_int(key, v));
    else if (key == "rd.split_counts") cfg.model.rd_config.split_counts = parse_int_list(key, v);
    else if (key == "rd.q_exponents") {
      const auto q = parse_int_list(key, v);
      if (q.size() != 3) throw ValidationError("rd.q_exponents needs three values (FR3, FR2, FR1)");
      cfg.model.rd_config.q_exponents = {q[0], q[1], q[2]};
    }
    else if (key == "seed") cfg.model.seed = static_cast<std::uint64_t>(parse_int(key, v));
    else if (key == "data.layout") cfg.layout = parse_layout(v);
    else if (key == "data.root") cfg.data_root = v;
    else if (key == "data.split") cfg.data_split = v;
    else if (key == "data.synthetic.count") cfg.synthetic_count = static_cast<int>(parse_int(key, v));
    else if (key == "data.input_size") cfg.input_size = static_cast<int>(parse_int(key, v));
    else if (key == "data.val_fraction") cfg.val_fraction = parse_double(key, v);
    else if (key == "augment.flip") cfg.augment_flip = parse_bool(key, v);
    else if (key == "augment.crop") cfg.augment_crop = parse_bool(key, v);
    else if (key == "augment.jitter") cfg.augment_jitter = parse_bool(key, v);
    else if (key == "train.steps") cfg.steps = static_cast<int>(parse_int(key, v));
    else if (key == "train.epochs") cfg.epochs = static_cast<int>(parse_int(key, v));
    else if (key == "train.batch_size") cfg.batch_size = static_cast<int>(parse_int(key, v));
    else if (key == "train.lr") cfg.lr = parse_double(key, v);
    else if (key == "train.lr_min") cfg.lr_min = parse_double(key, v);
    else if (key == "train.cosine_period_epochs") cfg.cosine_period_epochs = static_cast<int>(parse_int(key, v));
    else if (key == "train.cosine_period_steps") cfg.cosine_period_steps = static_cast<int>(parse_int(key, v));
    else if (key == "train.eval_every") cfg.eval_every = static_cast<int>(parse_int(key, v));
    else if (key == "train.log_format") {
      if (v == "csv") cfg.log_format = LogFormat::kCsv;
      else if (v == "jsonl") cfg.log_format = LogFormat::kJsonl;
      else throw ValidationError("train.log_format must be csv or jsonl");
    }
    else if (key == "train.out_dir") cfg.out_dir = v;
    else throw ValidationError("unknown config key '" + key + "'");
  }
}

inline KeyValues to_key_values(const TrainConfig& cfg) {
  using namespace detail;
  const auto& m = cfg.model;
  KeyValues kv;
  kv["backbone"] = std::string(backbone_info(m.backbone).name);
  if (m.backbone_weights) kv["backbone.weights"] = *m.backbone_weights;
  kv["model.channels"] = std::to_string(m.channels);
  kv["cue.kind"] = std::string(cue_kind_name(cfg.cue_kind));
  kv["aig.enabled"] = m.aig ? "true" : "false";
  kv["hfc.combination.enabled"] = m.combination ? "true" : "false";
  kv["hfc.decoupling.enabled"] = m.decoupling ? "true" : "false";
  kv["rd.enabled"] = m.rd ? "true" : "false";
  kv["rd.iterations"] = std::to_string(m.rd_config.iterations);
  kv["rd.split_counts"] = join_ints(m.rd_config.split_counts);
  kv["rd.q_exponents"] = join_ints({m.rd_config.q_exponents.begin(), m.rd_config.q_exponents.end()});
  kv["seed"] = std::to_string(m.seed);
  kv["data.layout"] = std::string(layout_name(cfg.layout));
  kv["data.root"] = cfg.data_root;
  kv["data.split"] = cfg.data_split;
  kv["data.synthetic.count"] = std::to_string(cfg.synthetic_count);
  kv["data.input_size"] = std::to_string(cfg.input_size);
  kv["data.val_fraction"] = format_double(cfg.val_fraction);
  kv["augment.flip"] = cfg.augment_flip ? "true" : "false";
  kv["augment.crop"] = cfg.augment_crop ? "true" : "false";
  kv["augment.jitter"] = cfg.augment_jitter ? "true" : "false";
  kv["train.steps"] = std::to_string(cfg.steps);
  kv["train.epochs"] = std::to_string(cfg.epochs);
  kv["train.batch_size"] = std::to_string(cfg.batch_size);
  kv["train.lr"] = format_double(cfg.lr);
  kv["train.lr_min"] = format_double(cfg.lr_min);
  kv["train.cosine_period_epochs"] = std::to_string(cfg.cosine_period_epochs);
  kv["train.cosine_period_steps"] = std::to_string(cfg.cosine_period_steps);
  kv["train.eval_every"] = std::to_string(cfg.eval_every);
  kv["train.log_format"] = cfg.log_format == LogFormat::kCsv ? "csv" : "jsonl";
  kv["train.out_dir"] = cfg.out_dir;
  return kv;
}

inline TrainConfig config_from_key_values(const KeyValues& kv, TrainConfig base = {}) {
  apply_key_values(base, kv);
  base.validate();
  return base;
}

inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

/// Desk-scale preset: tiny backbone, C = 8, 128 px synthetic scenes.
inline TrainConfig desk_preset() {
  TrainConfig cfg;
  cfg.model.backbone = BackboneId::kTiny;
  cfg.model.channels = 8;
  cfg.input_size = 128;
  cfg.synthetic_count = 32;
  cfg.batch_size = 4;
  cfg.steps = 300;
  cfg.epochs = 0;
  cfg.lr = 3e-3;
  cfg.lr_min = 3e-4;
  cfg.cosine_period_steps = 300;
  cfg.eval_every = 100;
  return cfg;
}

}  // namespace aglnet
