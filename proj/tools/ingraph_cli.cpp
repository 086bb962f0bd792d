// Command-line front end: synthetic data generation, training, evaluation,
// ablation sweeps, and gradient self-verification.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ingraph/dataset.hpp"
#include "ingraph/eval.hpp"
#include "ingraph/gradcheck.hpp"
#include "ingraph/model.hpp"
#include "ingraph/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using namespace ingraph;

struct Overrides {
  CLI::App* cmd = nullptr;
  std::string data_dir, checkpoint, report;
  std::size_t feature_dim = 0, reduced_dim = 0, node_count = 0, num_categories = 0,
              pattern_size = 0, head_hidden = 0, stem_dim = 0, roi_size = 0;
  double learning_rate = 0, weight_decay = 0, momentum = 0, clip_norm = 0;
  std::size_t iterations = 0, batch_size = 0;
  std::uint64_t seed = 0;
  bool scene_wide = false, instance_wide = false, concat_only = false;

  void attach(CLI::App* c) {
    cmd = c;
    c->add_option("--data-dir", data_dir, "dataset directory");
    c->add_option("--checkpoint", checkpoint, "checkpoint path");
    c->add_option("--report", report, "report output path");
    c->add_option("--feature-dim", feature_dim, "target feature channels D");
    c->add_option("--reduced-dim", reduced_dim, "interactive-space channels C");
    c->add_option("--node-count", node_count, "nodes per target N");
    c->add_option("--num-categories", num_categories, "verb categories K");
    c->add_option("--pattern-size", pattern_size, "interaction pattern raster S");
    c->add_option("--head-hidden", head_hidden, "branch head hidden width");
    c->add_option("--stem-dim", stem_dim, "backbone stem channels");
    c->add_option("--roi-size", roi_size, "RoI pooling output size");
    c->add_option("--learning-rate", learning_rate, "SGD learning rate");
    c->add_option("--weight-decay", weight_decay, "SGD weight decay");
    c->add_option("--momentum", momentum, "SGD momentum");
    c->add_option("--clip-norm", clip_norm, "global gradient-norm clip (0 = off)");
    c->add_option("--iterations", iterations, "training iterations");
    c->add_option("--batch-size", batch_size, "samples per iteration");
    c->add_option("--seed", seed, "run seed");
    c->add_flag("--scene-wide,!--no-scene-wide", scene_wide,
                "enable scene-wide reasoning blocks");
    c->add_flag("--instance-wide,!--no-instance-wide", instance_wide,
                "enable the instance-wide reasoning block");
    c->add_flag("--concat-only,!--no-concat-only", concat_only,
                "plain concatenation instead of reasoning blocks");
  }

  void apply(RunConfig& cfg) const {
    const auto set = [this](const char* name, auto& field, const auto& value) {
      if (cmd->count(name)) field = value;
    };
    set("--data-dir", cfg.data_dir, data_dir);
    set("--checkpoint", cfg.checkpoint, checkpoint);
    set("--report", cfg.report, report);
    set("--feature-dim", cfg.model.net.ingraph.feature_dim, feature_dim);
    set("--reduced-dim", cfg.model.net.ingraph.reduced_dim, reduced_dim);
    set("--node-count", cfg.model.net.ingraph.node_count, node_count);
    set("--num-categories", cfg.model.net.num_categories, num_categories);
    set("--pattern-size", cfg.model.net.pattern_size, pattern_size);
    set("--head-hidden", cfg.model.net.head_hidden, head_hidden);
    set("--stem-dim", cfg.model.stem_dim, stem_dim);
    set("--roi-size", cfg.model.roi_size, roi_size);
    set("--learning-rate", cfg.optim.learning_rate, learning_rate);
    set("--weight-decay", cfg.optim.weight_decay, weight_decay);
    set("--momentum", cfg.optim.momentum, momentum);
    set("--clip-norm", cfg.optim.clip_norm, clip_norm);
    set("--iterations", cfg.iterations, iterations);
    set("--batch-size", cfg.batch_size, batch_size);
    set("--seed", cfg.seed, seed);
    set("--scene-wide", cfg.model.net.scene_wide, scene_wide);
    set("--instance-wide", cfg.model.net.instance_wide, instance_wide);
    set("--concat-only", cfg.model.net.concat_only, concat_only);
    cfg.validate();
  }
};

int cmd_gen_data(const std::string& out_dir, const SynthConfig& synth) {
  auto [images, annotations] = generate_synthetic(synth);
  write_dataset(out_dir, images, annotations);
  std::cout << json{{"dir", out_dir},
                    {"images", annotations.size()},
                    {"verbs", synth.num_verbs},
                    {"seed", synth.seed}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& resume) {
  LoadedDataset ds = load_dataset(cfg.data_dir);
  Rng rng(cfg.seed);
  Model model = resume.empty() ? Model(cfg.model, rng) : Model::load(resume);
  train_model(model, ds, cfg, rng, &std::cout);
  model.save(cfg.checkpoint);
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& report_path, double jitter, std::uint64_t seed) {
  Model model = Model::load(checkpoint);
  LoadedDataset ds = load_dataset(data_dir);
  InferenceResult result = run_inference(model, ds, jitter, seed);

  fs::path detections = fs::path(report_path).parent_path() / "detections.jsonl";
  write_detections(detections.string(), result.detections);
  std::ofstream os(report_path, std::ios::trunc);
  if (!os) throw IoError("cannot write report: " + report_path);
  os << report_to_json(result.report).dump(2) << '\n';
  std::cout << report_table(result.report);
  return 0;
}

int cmd_ablate(const RunConfig& cfg) {
  LoadedDataset ds = load_dataset(cfg.data_dir);
  const auto rows = run_ablation(cfg, ds, &std::cout);
  std::ofstream os(cfg.report, std::ios::trunc);
  if (!os) throw IoError("cannot write report: " + cfg.report);
  os << ablation_to_json(rows).dump(2) << '\n';
  std::cout << ablation_table(rows);
  return 0;
}

int cmd_grad_check(std::uint64_t seed, bool inject_fault) {
  if (inject_fault) detail::matmul_backward_fault = 0.05;
  auto entries = grad_check_ops(seed);
  for (auto& e : grad_check_network(seed)) entries.push_back(e);
  bool ok = true;
  for (const GradCheckEntry& e : entries) {
    const bool pass = e.max_rel_err <= kGradCheckTolerance;
    ok = ok && pass;
    std::printf("%-32s  max_rel_err %10.3e  [%s]\n", e.group.c_str(), e.max_rel_err,
                pass ? "PASS" : "FAIL");
  }
  std::printf("gradient check: %s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interactive-graph HOI detection toolkit"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::string gen_out;
  SynthConfig synth;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--images", synth.num_images, "number of images");
  gen->add_option("--verbs", synth.num_verbs, "number of verb categories");
  gen->add_option("--seed", synth.seed, "generator seed");
  gen->add_option("--image-size", synth.image_size, "square image side in pixels");

  auto* train = app.add_subcommand("train", "train the three-branch network");
  std::string train_config, train_resume;
  Overrides train_over;
  train->add_option("--config", train_config, "run config JSON")->required();
  train->add_option("--resume", train_resume, "checkpoint to continue from");
  train_over.attach(train);

  auto* eval_cmd = app.add_subcommand("eval", "run inference and score role mAP");
  std::string eval_ckpt, eval_data, eval_report = "report.json";
  double eval_jitter = 0.0;
  std::uint64_t eval_seed = 0;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--report", eval_report, "report output path");
  eval_cmd->add_option("--jitter", eval_jitter,
                       "perturb ground-truth detections by this factor");
  eval_cmd->add_option("--seed", eval_seed, "jitter seed");

  auto* ablate = app.add_subcommand("ablate", "train/evaluate the wiring variants");
  std::string ablate_config;
  Overrides ablate_over;
  ablate->add_option("--config", ablate_config, "run config JSON")->required();
  ablate_over.attach(ablate);

  auto* gc = app.add_subcommand("grad-check", "finite-difference self verification");
  std::uint64_t gc_seed = 0;
  bool gc_fault = false;
  gc->add_option("--seed", gc_seed, "probe seed");
  gc->add_flag("--inject-fault", gc_fault,
               "corrupt one backward rule to prove the check detects it");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, synth);
    if (train->parsed()) {
      RunConfig cfg = load_run_config(train_config);
      train_over.apply(cfg);
      return cmd_train(cfg, train_resume);
    }
    if (eval_cmd->parsed())
      return cmd_eval(eval_ckpt, eval_data, eval_report, eval_jitter, eval_seed);
    if (ablate->parsed()) {
      RunConfig cfg = load_run_config(ablate_config);
      ablate_over.apply(cfg);
      return cmd_ablate(cfg);
    }
    if (gc->parsed()) return cmd_grad_check(gc_seed, gc_fault);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
