#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "aglnet/checkpoint.hpp"
#include "aglnet/dataset.hpp"
#include "aglnet/losses.hpp"
#include "aglnet/metrics.hpp"
#include "aglnet/optim.hpp"

namespace aglnet {

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepRecord {
  long long step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  losses::LossBreakdown loss;
  std::vector<std::size_t> batch_indices;
};

class StepLogger {
 public:
  StepLogger() = default;
  StepLogger(const fs::path& path, LogFormat format) : format_(format) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    out_.open(path);
    if (!out_) throw std::runtime_error("cannot open log " + path.string());
    if (format_ == LogFormat::kCsv) {
      out_ << "step,epoch,lr,bce_r1,bce_r2,bce_r3,iou_r1,iou_r2,iou_r3,cue_mse,total\n";
    }
    out_ << std::setprecision(17);
  }

  void write(const StepRecord& r) {
    if (!out_.is_open()) return;
    const auto& l = r.loss;
    if (format_ == LogFormat::kCsv) {
      out_ << r.step << ',' << r.epoch << ',' << r.lr;
      for (double v : l.bce_per_level) out_ << ',' << v;
      for (double v : l.iou_per_level) out_ << ',' << v;
      out_ << ',' << l.cue_mse << ',' << l.total << '\n';
    } else {
      nlohmann::json j{{"step", r.step},
                       {"epoch", r.epoch},
                       {"lr", r.lr},
                       {"bce", l.bce_per_level},
                       {"iou", l.iou_per_level},
                       {"cue_mse", l.cue_mse},
                       {"total", l.total}};
      out_ << j.dump() << '\n';
    }
    out_.flush();
  }

 private:
  LogFormat format_ = LogFormat::kCsv;
  std::ofstream out_;
};

/// sigmoid(r_1) for every sample, bilinearly resized to (h, w).
inline std::vector<Plane> predict_probabilities(const AGLNet& model, const Tensor& images, int h, int w) {
  NoGradGuard no_grad;
  const ModelOutputs out = model.forward(images);
  const Tensor prob = ops::sigmoid(ops::resize_bilinear(out.predictions.r1, h, w));
  std::vector<Plane> planes;
  for (int n = 0; n < images.shape().n; ++n) planes.push_back(plane_of(prob, n));
  return planes;
}

/// Optimizer loop over one dataset with seeded shuffling and augmentation.
class Trainer {
 public:
  using RawSource = std::function<RawSample(std::size_t)>;

  Trainer(TrainConfig cfg, RawSource raw, std::size_t count, CueCache cache = CueCache(std::nullopt))
      : cfg_(std::move(cfg)), raw_(std::move(raw)), cache_(std::move(cache)) {
    cfg_.validate();
    model_ = std::make_unique<AGLNet>(cfg_.model);
    optimizer_ = std::make_unique<Adam>(model_->named_parameters());
    split_ = split_train_val(count, cfg_.val_fraction, cfg_.model.seed);
    if (split_.train.empty()) throw ValidationError("no training samples after the validation split");
    const double bytes = static_cast<double>(count) * cfg_.input_size * cfg_.input_size * 5.0 * sizeof(double);
    loader_ = std::make_unique<DataLoader>([this](std::size_t i) { return prepare(i); }, split_.train,
                                           cfg_.batch_size,
                                           AugmentOptions{cfg_.augment_flip, cfg_.augment_crop, cfg_.augment_jitter},
                                           cfg_.model.seed + 1, bytes < 2e9);
  }

  explicit Trainer(const TrainConfig& cfg)
      : Trainer(cfg, make_source(cfg), SampleProvider(cfg).size(), CueCache::from_environment()) {}

  [[nodiscard]] long long steps_per_epoch() const { return static_cast<long long>(loader_->steps_per_epoch()); }

  [[nodiscard]] long long total_steps() const {
    return cfg_.steps > 0 ? cfg_.steps : static_cast<long long>(cfg_.epochs) * steps_per_epoch();
  }

  [[nodiscard]] long long cosine_period() const {
    return cfg_.cosine_period_steps > 0 ? cfg_.cosine_period_steps
                                        : static_cast<long long>(cfg_.cosine_period_epochs) * steps_per_epoch();
  }

  [[nodiscard]] long long eval_interval() const { return cfg_.eval_every > 0 ? cfg_.eval_every : steps_per_epoch(); }

  /// Loss of the next batch without updating anything.
  [[nodiscard]] losses::LossResult loss_on(const Batch& batch) const {
    const ModelOutputs out = model_->forward(batch.images);
    return losses::total_loss(out.predictions, batch.masks, batch.cues, cfg_.model.aig);
  }

  StepRecord step() {
    Batch batch = loader_->next();
    StepRecord rec;
    rec.step = step_;
    rec.epoch = loader_->epoch();
    rec.lr = cosine_lr(step_, cfg_.lr, cfg_.lr_min, cosine_period());
    rec.batch_indices = batch.indices;
    optimizer_->zero_grad();
    losses::LossResult loss = loss_on(batch);
    rec.loss = loss.breakdown;
    if (!std::isfinite(loss.breakdown.total)) dump_divergence(rec, batch);
    loss.total.backward();
    optimizer_->step(rec.lr);
    ++step_;
    return rec;
  }

  /// Mean S-measure over the validation samples (training samples when the
  /// split leaves none), without augmentation.
  [[nodiscard]] double validate(std::size_t limit = 0) {
    const auto& pool = split_.val.empty() ? split_.train : split_.val;
    const std::size_t n = limit > 0 ? std::min(limit, pool.size()) : pool.size();
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const PreparedSample& s = loader_->fetch(pool[k]);
      const Batch b = collate({s}, {pool[k]});
      const Plane p = predict_probabilities(*model_, b.images, cfg_.input_size, cfg_.input_size)[0];
      total += metrics::s_measure(p, s.mask);
    }
    return n ? total / static_cast<double>(n) : 0.0;
  }

  /// Full run with logging and best/last checkpoints in cfg.out_dir.
  double run(std::ostream* progress = nullptr) {
    const fs::path dir = cfg_.out_dir;
    fs::create_directories(dir);
    {
      std::ofstream snap(dir / "config.snapshot");
      snap << format_key_values(to_key_values(cfg_));
    }
    StepLogger logger(dir / (cfg_.log_format == LogFormat::kCsv ? "train_log.csv" : "train_log.jsonl"),
                      cfg_.log_format);
    const long long total = total_steps();
    double best = -std::numeric_limits<double>::infinity();
    for (long long s = 0; s < total; ++s) {
      const StepRecord rec = step();
      logger.write(rec);
      if ((s + 1) % eval_interval() == 0 || s + 1 == total) {
        const double val = validate();
        if (progress) {
          *progress << "step " << (s + 1) << "/" << total << " loss " << rec.loss.total << " val_s_alpha " << val
                    << "\n";
        }
        if (val > best) {
          best = val;
          save_checkpoint(dir / "best.ckpt", *model_, cfg_, step_, val);
        }
      }
    }
    save_checkpoint(dir / "last.ckpt", *model_, cfg_, step_, best);
    return best;
  }

  [[nodiscard]] AGLNet& model() { return *model_; }
  [[nodiscard]] const TrainConfig& config() const { return cfg_; }
  [[nodiscard]] const SplitIndices& split() const { return split_; }
  [[nodiscard]] DataLoader& loader() { return *loader_; }
  [[nodiscard]] long long steps_done() const { return step_; }

 private:
  static RawSource make_source(const TrainConfig& cfg) {
    auto provider = std::make_shared<SampleProvider>(cfg);
    std::clog << "dataset: " << provider->size() << " samples (" << layout_name(cfg.layout) << ")\n";
    return [provider](std::size_t i) { return provider->raw(i); };
  }

  PreparedSample prepare(std::size_t i) const {
    return prepare_sample(raw_(i), cfg_.input_size, cfg_.cue_kind, CueParams{}, cache_);
  }

  [[noreturn]] void dump_divergence(const StepRecord& rec, const Batch& batch) const {
    nlohmann::json j{{"step", rec.step},
                     {"epoch", rec.epoch},
                     {"lr", rec.lr},
                     {"batch_indices", batch.indices},
                     {"batch_names", batch.names},
                     {"bce", rec.loss.bce_per_level},
                     {"iou", rec.loss.iou_per_level},
                     {"cue_mse", rec.loss.cue_mse}};
    std::string where;
    if (!cfg_.out_dir.empty()) {
      try {
        fs::create_directories(cfg_.out_dir);
        const fs::path p = fs::path(cfg_.out_dir) / "divergence.json";
        std::ofstream(p) << j.dump(2) << '\n';
        where = " (details in " + p.string() + ")";
      } catch (const std::exception&) {
      }
    }
    std::ostringstream msg;
    msg << "non-finite loss at step " << rec.step << ", batch indices [";
    for (std::size_t i = 0; i < batch.indices.size(); ++i) msg << (i ? "," : "") << batch.indices[i];
    msg << "]" << where;
    throw TrainingDiverged(msg.str());
  }

  TrainConfig cfg_;
  RawSource raw_;
  CueCache cache_;
  std::unique_ptr<AGLNet> model_;
  std::unique_ptr<Adam> optimizer_;
  SplitIndices split_;
  std::unique_ptr<DataLoader> loader_;
  long long step_ = 0;
};

// ---------------------------------------------------------------------------
// Inference, evaluation and cue export

/// Probability map at the image's native resolution.
inline Plane infer_image(const AGLNet& model, const RgbImage& image, int input_size) {
  const RgbImage resized = resize_bilinear(image, input_size, input_size);
  const Tensor t = to_tensor(std::span<const RgbImage>(&resized, 1));
  return predict_probabilities(model, t, image.height(), image.width())[0];
}

inline std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& [stem, path] : images_by_stem(dir)) out.push_back(path);
  return out;
}

/// Side-by-side image | ground truth (if any) | prediction panel.
inline RgbImage make_panel(const RgbImage& image, const std::optional<BinaryMask>& gt, const Plane& pred) {
  const int h = image.height();
  const int w = image.width();
  const int tiles = gt ? 3 : 2;
  RgbImage panel(h, w * tiles);
  auto put = [&](int tile, auto&& value) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) panel.channels[c](y, tile * w + x) = value(c, y, x);
      }
    }
  };
  put(0, [&](int c, int y, int x) { return image.channels[c](y, x); });
  if (gt) put(1, [&](int, int y, int x) { return static_cast<double>((*gt)(y, x)); });
  put(tiles - 1, [&](int, int y, int x) { return pred(y, x); });
  return panel;
}

inline std::size_t run_inference(const fs::path& ckpt_path, const fs::path& images_dir, const fs::path& out_dir,
                                 const std::optional<fs::path>& panel_dir = std::nullopt,
                                 const std::optional<fs::path>& gts_dir = std::nullopt) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const auto model = model_from_checkpoint(ck);
  fs::create_directories(out_dir);
  std::size_t count = 0;
  for (const auto& path : list_images(images_dir)) {
    const RgbImage image = io::read_rgb(path);
    const Plane prob = infer_image(*model, image, ck.config.input_size);
    io::write_plane(out_dir / (path.stem().string() + ".png"), prob);
    if (panel_dir) {
      std::optional<BinaryMask> gt;
      if (gts_dir && fs::exists(*gts_dir / (path.stem().string() + ".png"))) {
        gt = io::read_mask(*gts_dir / (path.stem().string() + ".png"));
      }
      io::write_rgb(*panel_dir / (path.stem().string() + ".png"), make_panel(image, gt, prob));
    }
    ++count;
  }
  return count;
}

/// Scores every prediction against its same-stem ground truth; predictions
/// are bilinearly resized to the ground-truth size when they differ.
inline metrics::MetricReport evaluate_directories(const fs::path& preds_dir, const fs::path& gts_dir) {
  const auto preds = images_by_stem(preds_dir);
  const auto gts = images_by_stem(gts_dir);
  metrics::MetricReport report;
  for (const auto& [stem, gt_path] : gts) {
    const auto it = preds.find(stem);
    if (it == preds.end()) throw ValidationError("no prediction for " + gt_path.string());
    const BinaryMask gt = io::read_mask(gt_path);
    Plane pred = io::read_plane(it->second);
    pred = resize_bilinear(pred, gt.height(), gt.width());
    report.images.push_back(metrics::evaluate(pred, gt, stem));
  }
  if (report.images.empty()) throw ValidationError("no ground-truth maps in " + gts_dir.string());
  return report;
}

inline void write_report_csv(const fs::path& path, const metrics::MetricReport& report) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "image,s_alpha,f_beta_w,f_mean,e_mean,mae\n" << std::setprecision(10);
  auto row = [&](const metrics::ImageScores& s) {
    out << s.image << ',' << s.s_alpha << ',' << s.f_beta_w << ',' << s.f_mean << ',' << s.e_mean << ',' << s.mae
        << '\n';
  };
  for (const auto& s : report.images) row(s);
  row(report.mean());
}

inline std::size_t generate_cue_directory(CueKind kind, const fs::path& images_dir, const fs::path& masks_dir,
                                          const fs::path& out_dir, const CueParams& params = {}) {
  const DatasetManifest m = manifest_from_dirs(images_dir, masks_dir);
  fs::create_directories(out_dir);
  for (const auto& e : m.entries) {
    const RawSample s = load_entry(e);
    io::write_plane(out_dir / (e.name + ".png"), generate_cue(kind, s.image, s.mask, params).data);
  }
  return m.entries.size();
}

}  // namespace aglnet
