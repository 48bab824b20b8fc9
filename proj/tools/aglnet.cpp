#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aglnet/selftest.hpp"

using namespace aglnet;

namespace {

TrainConfig load_train_config(const std::string& path, const std::string& preset,
                              const std::vector<std::string>& overrides) {
  TrainConfig base;
  if (preset == "desk") base = desk_preset();
  else if (preset != "full") throw ValidationError("unknown preset '" + preset + "' (desk or full)");
  KeyValues kv;
  if (!path.empty()) kv = read_key_values(path);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + o + "'");
    kv[trim(o.substr(0, eq))] = trim(o.substr(eq + 1));
  }
  return config_from_key_values(kv, base);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Camouflaged object detection with additional-cue guidance"};
  app.require_subcommand(1);

  std::string cue_kind, images, masks, out;
  bool pad = false;
  int thickness = 1;
  auto* gen = app.add_subcommand("generate-cues", "Write cue maps for every image/mask pair");
  gen->add_option("--kind", cue_kind, "boundary | texture | canny | frequency")->required();
  gen->add_option("--images", images, "Image directory")->required()->check(CLI::ExistingDirectory);
  gen->add_option("--masks", masks, "Mask directory (same stems)")->required()->check(CLI::ExistingDirectory);
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_flag("--pad", pad, "Edge-pad images whose size is not a multiple of 8 (frequency cues)");
  gen->add_option("--thickness", thickness, "Boundary band thickness in pixels")->check(CLI::PositiveNumber);

  std::string config_path, preset = "full";
  std::vector<std::string> overrides;
  auto* train = app.add_subcommand("train", "Train a model from a key = value config file");
  train->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  train->add_option("--preset", preset, "Defaults the config is applied on: full or desk");
  train->add_option("--set", overrides, "Extra key=value overrides");

  std::string ckpt, panel_dir, gts_dir;
  auto* infer = app.add_subcommand("infer", "Predict maps at native resolution");
  infer->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  infer->add_option("--images", images, "Image directory")->required()->check(CLI::ExistingDirectory);
  infer->add_option("--out", out, "Output directory")->required();
  infer->add_option("--panel", panel_dir, "Also write image | GT | prediction panels here");
  infer->add_option("--gts", gts_dir, "Ground-truth directory for the panels")->check(CLI::ExistingDirectory);

  std::string preds;
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against ground truth");
  evaluate->add_option("--preds", preds, "Prediction directory")->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--gts", gts_dir, "Ground-truth directory")->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--out", out, "CSV report path")->required();

  std::vector<int> only;
  auto* selftest = app.add_subcommand("selftest", "Run the acceptance suite");
  selftest->add_option("--only", only, "Criterion numbers to run (default: all)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      CueParams params;
      params.boundary_thickness = thickness;
      params.frequency.pad = pad;
      const auto n = generate_cue_directory(parse_cue_kind(cue_kind), images, masks, out, params);
      std::cout << "wrote " << n << " " << cue_kind << " maps to " << out << "\n";
    } else if (*train) {
      const TrainConfig cfg = load_train_config(config_path, preset, overrides);
      Trainer trainer(cfg);
      std::cout << "training " << trainer.total_steps() << " steps (" << trainer.steps_per_epoch()
                << " per epoch), logs and checkpoints in " << cfg.out_dir << "\n";
      const double best = trainer.run(&std::cout);
      std::cout << "best validation S_alpha " << best << "\n";
    } else if (*infer) {
      std::optional<std::filesystem::path> panels;
      std::optional<std::filesystem::path> gts;
      if (!panel_dir.empty()) panels = panel_dir;
      if (!gts_dir.empty()) gts = gts_dir;
      const auto n = run_inference(ckpt, images, out, panels, gts);
      std::cout << "wrote " << n << " prediction maps to " << out << "\n";
    } else if (*evaluate) {
      const auto report = evaluate_directories(preds, gts_dir);
      write_report_csv(out, report);
      const auto m = report.mean();
      std::cout << report.images.size() << " images: S_alpha " << m.s_alpha << ", F_beta^w " << m.f_beta_w
                << ", mean F " << m.f_mean << ", mean E " << m.e_mean << ", MAE " << m.mae << "\n";
    } else if (*selftest) {
      const auto results = selftest::run(std::cout, std::set<int>(only.begin(), only.end()));
      int failed = 0;
      for (const auto& r : results) failed += !r.pass;
      std::cout << results.size() - failed << "/" << results.size() << " criteria passed\n";
      return failed == 0 ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
