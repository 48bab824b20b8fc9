#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "aglnet/train.hpp"

using namespace aglnet;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("aglnet_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TrainConfig tiny_config(const fs::path& out) {
  TrainConfig cfg = desk_preset();
  cfg.model.channels = 4;
  cfg.input_size = 32;
  cfg.synthetic_count = 6;
  cfg.batch_size = 2;
  cfg.steps = 4;
  cfg.cosine_period_steps = 4;
  cfg.eval_every = 2;
  cfg.out_dir = out.string();
  return cfg;
}

std::vector<double> vec(const Plane& p) { return {p.values().begin(), p.values().end()}; }

RgbImage random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RgbImage img(h, w);
  for (auto& ch : img.channels) {
    for (double& v : ch.values()) v = u(rng);
  }
  return img;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

TEST(Config, ParsesCommentsAndWhitespace) {
  std::istringstream in("# header\n  train.lr = 0.01  \n\nseed=7 # trailing\n");
  const KeyValues kv = parse_key_values(in);
  EXPECT_EQ(kv.at("train.lr"), "0.01");
  EXPECT_EQ(kv.at("seed"), "7");
  EXPECT_EQ(kv.size(), 2u);
}

TEST(Config, RejectsDuplicatesMalformedAndUnknownKeys) {
  std::istringstream dup("a = 1\na = 2\n");
  EXPECT_THROW(parse_key_values(dup), ValidationError);
  std::istringstream bad("no equals sign\n");
  EXPECT_THROW(parse_key_values(bad), ValidationError);
  EXPECT_THROW(config_from_key_values({{"train.lrr", "1"}}), ValidationError);
  EXPECT_THROW(config_from_key_values({{"train.lr", "abc"}}), ValidationError);
  EXPECT_THROW(config_from_key_values({{"data.input_size", "100"}}), ValidationError);
  EXPECT_THROW(config_from_key_values({{"rd.q_exponents", "2,1"}}), ValidationError);
}

TEST(Config, RoundTripsThroughKeyValues) {
  TrainConfig cfg = desk_preset();
  cfg.cue_kind = CueKind::kFrequency;
  cfg.model.decoupling = false;
  cfg.model.rd_config.split_counts = {4, 2};
  cfg.lr = 0.00123;
  cfg.log_format = LogFormat::kJsonl;
  const TrainConfig back = config_from_key_values(to_key_values(cfg));
  EXPECT_EQ(to_key_values(back), to_key_values(cfg));
  EXPECT_EQ(back.cue_kind, CueKind::kFrequency);
  EXPECT_FALSE(back.model.decoupling);
  EXPECT_DOUBLE_EQ(back.lr, 0.00123);
}

TEST(Config, ReadsFile) {
  const fs::path dir = scratch_dir("config");
  std::ofstream(dir / "a.cfg") << "cue.kind = canny\ntrain.batch_size = 3\n";
  const TrainConfig cfg = config_from_key_values(read_key_values(dir / "a.cfg"), desk_preset());
  EXPECT_EQ(cfg.cue_kind, CueKind::kCanny);
  EXPECT_EQ(cfg.batch_size, 3);
  EXPECT_THROW(read_key_values(dir / "missing.cfg"), std::exception);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Image I/O

TEST(Io, PngRoundTripIsExactOnByteValues) {
  const fs::path dir = scratch_dir("io");
  RgbImage img(5, 7);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < img.channels[c].size(); ++i) img.channels[c][i] = ((i * 37 + c * 11) % 256) / 255.0;
  }
  io::write_rgb(dir / "x.png", img);
  const RgbImage back = io::read_rgb(dir / "x.png");
  ASSERT_EQ(back.height(), 5);
  ASSERT_EQ(back.width(), 7);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < img.channels[c].size(); ++i) EXPECT_EQ(back.channels[c][i], img.channels[c][i]);
  }
  BinaryMask m(4, 4);
  m.set(1, 2, 1);
  io::write_mask(dir / "m.png", m);
  EXPECT_EQ(io::read_mask(dir / "m.png"), m);
  fs::remove_all(dir);
}

TEST(Io, ReportsMissingAndCorruptFiles) {
  const fs::path dir = scratch_dir("io_err");
  EXPECT_THROW(io::read_rgb(dir / "none.png"), io::IoError);
  std::ofstream(dir / "bad.png") << "not a png";
  EXPECT_THROW(io::read_rgb(dir / "bad.png"), io::IoError);
  std::ofstream(dir / "bad.jpg") << "not a jpeg";
  EXPECT_THROW(io::read_rgb(dir / "bad.jpg"), io::IoError);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Dataset

TEST(Dataset, FlatLayoutPairsImagesWithMasks) {
  const fs::path root = scratch_dir("flat");
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  for (int i = 0; i < 3; ++i) {
    const RawSample s = synthetic_sample({3, 32, 5}, i);
    io::write_rgb(root / "images" / (s.name + ".png"), s.image);
    io::write_mask(root / "masks" / (s.name + ".png"), s.mask);
  }
  const DatasetManifest m = load_manifest(root, DatasetLayout::kFlat);
  ASSERT_EQ(m.entries.size(), 3u);
  const RawSample s = load_entry(m.entries[1]);
  EXPECT_EQ(s.image.height(), 32);
  EXPECT_EQ(s.mask, synthetic_sample({3, 32, 5}, 1).mask);

  fs::remove(root / "masks" / (m.entries[0].name + ".png"));
  EXPECT_THROW(load_manifest(root, DatasetLayout::kFlat), ValidationError);
  fs::remove_all(root);
}

TEST(Dataset, SyntheticScenesAreSeededAndNonTrivial) {
  const SyntheticOptions opt{4, 64, 11};
  const RawSample a = synthetic_sample(opt, 2);
  const RawSample b = synthetic_sample(opt, 2);
  const RawSample c = synthetic_sample(opt, 3);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_EQ(vec(a.image.channels[0]), vec(b.image.channels[0]));
  EXPECT_NE(vec(a.image.channels[0]), vec(c.image.channels[0]));
  const double frac = static_cast<double>(a.mask.count()) / static_cast<double>(a.mask.size());
  EXPECT_GT(frac, 0.02);
  EXPECT_LT(frac, 0.8);
}

TEST(Dataset, FlipIsAppliedJointly) {
  PreparedSample s;
  s.name = "x";
  s.image = random_image(8, 8, 3);
  s.mask = BinaryMask(8, 8);
  s.mask.set(2, 1, 1);
  s.cue = Plane(8, 8);
  s.cue(3, 0) = 1.0;
  AugmentParams p;
  p.flip = true;
  const PreparedSample f = apply_augment(s, p);
  EXPECT_EQ(f.mask(2, 6), 1);
  EXPECT_EQ(f.mask.count(), 1u);
  EXPECT_EQ(f.cue(3, 7), 1.0);
  EXPECT_EQ(f.image.channels[1](4, 7), s.image.channels[1](4, 0));
}

TEST(Dataset, CropKeepsSizeAndJitterLeavesTargetsAlone) {
  const RawSample raw = synthetic_sample({1, 32, 2}, 0);
  const PreparedSample s = prepare_sample(raw, 32, CueKind::kBoundary, {}, CueCache(std::nullopt));
  AugmentParams p;
  p.crop_scale = 0.8;
  p.crop_top = 0.5;
  p.crop_left = 0.25;
  const PreparedSample c = apply_augment(s, p);
  EXPECT_EQ(c.image.height(), 32);
  EXPECT_EQ(c.mask.width(), 32);
  AugmentParams j;
  j.brightness = 1.08;
  j.contrast = 0.93;
  j.saturation = 1.05;
  const PreparedSample js = apply_augment(s, j);
  EXPECT_EQ(js.mask, s.mask);
  EXPECT_EQ(vec(js.cue), vec(s.cue));
  EXPECT_NE(vec(js.image.channels[0]), vec(s.image.channels[0]));
}

TEST(Dataset, CueCacheRoundTripsWithinOneLevel) {
  const fs::path dir = scratch_dir("cache");
  const RawSample raw = synthetic_sample({1, 32, 4}, 0);
  const CueCache cache(dir);
  for (CueKind kind : kAllCueKinds) {
    const Plane fresh = generate_cue(kind, raw.image, raw.mask, {}).data;
    const Plane first = cache.get_or_compute(raw.image, raw.mask, kind, {});
    const Plane second = cache.get_or_compute(raw.image, raw.mask, kind, {});
    EXPECT_EQ(vec(first), vec(second));
    for (std::size_t i = 0; i < fresh.size(); ++i) EXPECT_LE(std::abs(first[i] - fresh[i]), 1.0 / 255.0 + 1e-12);
  }
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++files;
  EXPECT_EQ(files, kAllCueKinds.size());
  fs::remove_all(dir);
}

TEST(Dataset, SplitIsDisjointAndCoversEverything) {
  const SplitIndices s = split_train_val(25, 0.1, 3);
  EXPECT_EQ(s.val.size(), 2u);
  EXPECT_EQ(s.train.size(), 23u);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  EXPECT_EQ(all.size(), 25u);
  EXPECT_TRUE(split_train_val(5, 0.1, 3).val.empty());
}

TEST(Dataset, LoaderVisitsEverySampleOncePerEpoch) {
  std::vector<std::size_t> idx = {0, 2, 4, 6, 8};
  auto source = [](std::size_t i) {
    return prepare_sample(synthetic_sample({10, 32, 1}, static_cast<int>(i)), 32, CueKind::kBoundary, {},
                          CueCache(std::nullopt));
  };
  DataLoader loader(source, idx, 2, AugmentOptions{false, false, false}, 9);
  EXPECT_EQ(loader.steps_per_epoch(), 3u);
  for (int epoch = 0; epoch < 2; ++epoch) {
    std::multiset<std::size_t> seen;
    std::vector<int> sizes;
    for (int b = 0; b < 3; ++b) {
      const Batch batch = loader.next();
      EXPECT_EQ(loader.epoch(), static_cast<std::size_t>(epoch));
      sizes.push_back(batch.images.shape().n);
      seen.insert(batch.indices.begin(), batch.indices.end());
    }
    EXPECT_EQ(seen, std::multiset<std::size_t>(idx.begin(), idx.end()));
    EXPECT_EQ(sizes, (std::vector<int>{2, 2, 1}));
  }
}

// ---------------------------------------------------------------------------
// Optimizer

TEST(Optim, CosineScheduleMatchesClosedForm) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 1e-4, 1e-5, 40), 1e-4);
  EXPECT_NEAR(cosine_lr(20, 1e-4, 1e-5, 40), 5.5e-5, 1e-18);
  EXPECT_NEAR(cosine_lr(40, 1e-4, 1e-5, 40), 1e-4, 1e-18);
  EXPECT_NEAR(cosine_lr(10, 1.0, 0.0, 40), 0.5 * (1.0 + std::cos(std::numbers::pi / 4.0)), 1e-15);
  for (int s = 1; s < 40; ++s) EXPECT_LT(cosine_lr(s, 1.0, 0.1, 40), cosine_lr(s - 1, 1.0, 0.1, 40));
  EXPECT_THROW(cosine_lr(-1, 1.0, 0.1, 40), ValidationError);
  EXPECT_THROW(cosine_lr(0, 1.0, 0.1, 0), ValidationError);
}

TEST(Optim, AdamMatchesHandComputedSteps) {
  Tensor w(Shape{1, 1, 1, 2});
  w.data()[0] = 1.0;
  w.data()[1] = -2.0;
  w.set_requires_grad(true);
  Adam adam({{"w", w}});
  std::vector<double> m(2, 0.0), v(2, 0.0), ref = {1.0, -2.0};
  for (int t = 1; t <= 3; ++t) {
    adam.zero_grad();
    ops::sum_all(ops::mul(w, w)).backward();
    for (int i = 0; i < 2; ++i) {
      const double g = 2.0 * ref[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      ref[i] -= 0.1 * (m[i] / (1 - std::pow(0.9, t))) / (std::sqrt(v[i] / (1 - std::pow(0.999, t))) + 1e-8);
    }
    adam.step(0.1);
    EXPECT_NEAR(w.data()[0], ref[0], 1e-14);
    EXPECT_NEAR(w.data()[1], ref[1], 1e-14);
  }
  EXPECT_EQ(adam.steps_taken(), 3);
}

// ---------------------------------------------------------------------------
// Checkpoint and training loop

TEST(Checkpoint, RoundTripReproducesPredictions) {
  const fs::path dir = scratch_dir("ckpt");
  TrainConfig cfg = tiny_config(dir);
  cfg.model.seed = 5;
  AGLNet model(cfg.model);
  save_checkpoint(dir / "m.ckpt", model, cfg, 17, 0.5);
  const Checkpoint ck = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(ck.step, 17);
  EXPECT_EQ(ck.seed, 5u);
  EXPECT_DOUBLE_EQ(ck.val_s_alpha, 0.5);
  EXPECT_EQ(to_key_values(ck.config), to_key_values(cfg));
  const auto restored = model_from_checkpoint(ck);

  const RgbImage img = random_image(32, 32, 1);
  const Tensor t = to_tensor(std::span<const RgbImage>(&img, 1));
  const Plane a = predict_probabilities(model, t, 32, 32)[0];
  const Plane b = predict_probabilities(*restored, t, 32, 32)[0];
  EXPECT_EQ(vec(a), vec(b));
  fs::remove_all(dir);
}

TEST(Checkpoint, RejectsIncompatibleOrCorruptFiles) {
  const fs::path dir = scratch_dir("ckpt_bad");
  TrainConfig cfg = tiny_config(dir);
  AGLNet model(cfg.model);
  save_checkpoint(dir / "m.ckpt", model, cfg, 0);
  Checkpoint ck = load_checkpoint(dir / "m.ckpt");
  TrainConfig other = cfg;
  other.model.channels = 8;
  AGLNet bigger(other.model);
  EXPECT_THROW(restore_parameters(bigger, ck), CheckpointError);

  std::ofstream(dir / "junk.ckpt") << "garbage";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), CheckpointError);
  const auto full = fs::file_size(dir / "m.ckpt");
  fs::copy_file(dir / "m.ckpt", dir / "cut.ckpt");
  fs::resize_file(dir / "cut.ckpt", full - 16);
  EXPECT_THROW(load_checkpoint(dir / "cut.ckpt"), CheckpointError);
  fs::remove_all(dir);
}

TEST(Train, StepZeroLossIsBitReproducible) {
  const fs::path dir = scratch_dir("det");
  const TrainConfig cfg = tiny_config(dir);
  auto source = [&](std::size_t i) { return synthetic_sample({cfg.synthetic_count, 32, 0}, static_cast<int>(i)); };
  Trainer a(cfg, source, 6);
  Trainer b(cfg, source, 6);
  for (int s = 0; s < 3; ++s) {
    const StepRecord ra = a.step();
    const StepRecord rb = b.step();
    EXPECT_EQ(ra.loss.total, rb.loss.total);
    EXPECT_EQ(ra.batch_indices, rb.batch_indices);
  }
  fs::remove_all(dir);
}

TEST(Train, RunWritesLogAndCheckpoints) {
  const fs::path dir = scratch_dir("run");
  TrainConfig cfg = tiny_config(dir);
  cfg.log_format = LogFormat::kJsonl;
  Trainer trainer(cfg);
  const double best = trainer.run();
  EXPECT_GE(best, 0.0);
  EXPECT_LE(best, 1.0);
  EXPECT_TRUE(fs::exists(dir / "best.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "last.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "config.snapshot"));
  std::ifstream log(dir / "train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<int>(), lines);
    EXPECT_EQ(j.at("bce").size(), 3u);
    EXPECT_TRUE(std::isfinite(j.at("total").get<double>()));
    ++lines;
  }
  EXPECT_EQ(lines, cfg.steps);
  EXPECT_EQ(load_checkpoint(dir / "last.ckpt").step, cfg.steps);
  fs::remove_all(dir);
}

TEST(Train, NonFiniteLossAbortsWithBatchIndices) {
  const fs::path dir = scratch_dir("nan");
  const TrainConfig cfg = tiny_config(dir);
  auto source = [&](std::size_t i) { return synthetic_sample({6, 32, 0}, static_cast<int>(i)); };
  Trainer trainer(cfg, source, 6);
  for (auto& [name, p] : trainer.model().named_parameters()) {
    for (double& v : p.data()) v = std::numeric_limits<double>::quiet_NaN();
  }
  try {
    trainer.step();
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_NE(std::string(e.what()).find("batch indices"), std::string::npos);
  }
  EXPECT_TRUE(fs::exists(dir / "divergence.json"));
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Inference and evaluation drivers

TEST(Drivers, InferWritesNativeResolutionMaps) {
  const fs::path dir = scratch_dir("infer");
  TrainConfig cfg = tiny_config(dir);
  AGLNet model(cfg.model);
  save_checkpoint(dir / "m.ckpt", model, cfg, 0);
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "gts");
  io::write_rgb(dir / "images" / "a.png", random_image(20, 30, 1));
  io::write_rgb(dir / "images" / "b.png", random_image(40, 24, 2));
  BinaryMask gt(20, 30);
  gt.set(5, 5, 1);
  io::write_mask(dir / "gts" / "a.png", gt);
  EXPECT_EQ(run_inference(dir / "m.ckpt", dir / "images", dir / "preds", dir / "panels", dir / "gts"), 2u);
  const Plane a = io::read_plane(dir / "preds" / "a.png");
  const Plane b = io::read_plane(dir / "preds" / "b.png");
  EXPECT_EQ(a.height(), 20);
  EXPECT_EQ(a.width(), 30);
  EXPECT_EQ(b.height(), 40);
  EXPECT_EQ(b.width(), 24);
  EXPECT_EQ(io::read_rgb(dir / "panels" / "a.png").width(), 90);
  EXPECT_EQ(io::read_rgb(dir / "panels" / "b.png").width(), 48);
  fs::remove_all(dir);
}

TEST(Drivers, EvaluateWritesCsvWithMeanRow) {
  const fs::path dir = scratch_dir("eval");
  fs::create_directories(dir / "preds");
  fs::create_directories(dir / "gts");
  for (int i = 0; i < 3; ++i) {
    const RawSample s = synthetic_sample({3, 32, 8}, i);
    io::write_mask(dir / "gts" / (s.name + ".png"), s.mask);
    io::write_plane(dir / "preds" / (s.name + ".png"), resize_bilinear(s.mask.to_plane(), 16, 16));
  }
  const auto report = evaluate_directories(dir / "preds", dir / "gts");
  ASSERT_EQ(report.images.size(), 3u);
  write_report_csv(dir / "report.csv", report);
  std::ifstream in(dir / "report.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], "image,s_alpha,f_beta_w,f_mean,e_mean,mae");
  EXPECT_EQ(lines[4].rfind("MEAN,", 0), 0u);
  EXPECT_GT(report.mean().s_alpha, 0.8);

  fs::remove(dir / "preds" / (report.images[0].image + ".png"));
  EXPECT_THROW(evaluate_directories(dir / "preds", dir / "gts"), ValidationError);
  fs::remove_all(dir);
}

TEST(Drivers, GenerateCuesMirrorsInputNames) {
  const fs::path dir = scratch_dir("cues");
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  const RawSample s = synthetic_sample({1, 32, 8}, 0);
  io::write_rgb(dir / "images" / "cam_01.png", s.image);
  io::write_mask(dir / "masks" / "cam_01.png", s.mask);
  EXPECT_EQ(generate_cue_directory(CueKind::kBoundary, dir / "images", dir / "masks", dir / "out"), 1u);
  const BinaryMask cue = io::read_mask(dir / "out" / "cam_01.png");
  EXPECT_EQ(vec(cue.to_plane()), vec(boundary_from_mask(s.mask).data));
  fs::remove_all(dir);
}
