#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ingraph/dataset.hpp"
#include "ingraph/eval.hpp"
#include "ingraph/model.hpp"
#include "ingraph/optim.hpp"

namespace ingraph {

// Everything one run needs. Serialized as a flat JSON document; unknown keys
// are rejected so typos fail loudly.
struct RunConfig {
  std::string data_dir = "data";
  std::string checkpoint = "model.igk1";
  std::string report = "report.json";
  ModelConfig model;
  OptimConfig optim;
  std::size_t iterations = 2000;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  std::vector<std::size_t> node_sweep = {4, 8, 16};

  void validate() const {
    model.validate();
    optim.validate();
    if (iterations < 1) throw ValueError("iterations must be >= 1");
    if (batch_size < 1) throw ValueError("batch_size must be >= 1");
    if (node_sweep.empty()) throw ValueError("node_sweep must not be empty");
  }
};

inline RunConfig run_config_from_json(const json& j) {
  static const std::vector<std::string> known = {
      "data_dir",    "checkpoint",     "report",        "feature_dim",
      "reduced_dim", "node_count",     "num_categories", "pattern_size",
      "head_hidden", "stem_dim",       "roi_size",      "scene_wide",
      "instance_wide", "concat_only",  "learning_rate", "weight_decay",
      "momentum",    "clip_norm",      "iterations",    "batch_size",
      "seed",        "node_sweep"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ValueError("unknown config key '" + key + "'");

  RunConfig cfg;
  const auto set = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  set("data_dir", cfg.data_dir);
  set("checkpoint", cfg.checkpoint);
  set("report", cfg.report);
  set("feature_dim", cfg.model.net.ingraph.feature_dim);
  set("reduced_dim", cfg.model.net.ingraph.reduced_dim);
  set("node_count", cfg.model.net.ingraph.node_count);
  set("num_categories", cfg.model.net.num_categories);
  set("pattern_size", cfg.model.net.pattern_size);
  set("head_hidden", cfg.model.net.head_hidden);
  set("stem_dim", cfg.model.stem_dim);
  set("roi_size", cfg.model.roi_size);
  set("scene_wide", cfg.model.net.scene_wide);
  set("instance_wide", cfg.model.net.instance_wide);
  set("concat_only", cfg.model.net.concat_only);
  set("learning_rate", cfg.optim.learning_rate);
  set("weight_decay", cfg.optim.weight_decay);
  set("momentum", cfg.optim.momentum);
  set("clip_norm", cfg.optim.clip_norm);
  set("iterations", cfg.iterations);
  set("batch_size", cfg.batch_size);
  set("seed", cfg.seed);
  set("node_sweep", cfg.node_sweep);
  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainStats {
  double first_loss = 0.0;
  double final_loss = 0.0;
};

namespace detail {

inline void diagnose_non_finite(Model& model, const Tensor& loss,
                                std::size_t iteration) {
  std::string worst = "<none>";
  double worst_mag = -1.0;
  try {
    backward(loss);
    for (const Parameter* p : model.parameters()) {
      if (!p->tensor.has_grad()) continue;
      double mag = 0.0;
      for (double g : p->tensor.grad())
        mag = std::max(mag, std::isfinite(g) ? std::fabs(g)
                                             : std::numeric_limits<double>::infinity());
      if (mag > worst_mag) {
        worst_mag = mag;
        worst = p->name;
      }
    }
  } catch (...) {
  }
  throw NumericError("non-finite loss at iteration " + std::to_string(iteration) +
                     "; largest gradient in parameter group '" + worst + "'");
}

}  // namespace detail

// Joint SGD over all branches. Loss per iteration is the batch mean of the
// three-branch sum. Log lines are JSON objects, one per iteration.
inline TrainStats train_model(Model& model, const LoadedDataset& ds,
                              const RunConfig& cfg, Rng& rng,
                              std::ostream* log = nullptr) {
  const auto samples = enumerate_pair_samples(ds.annotations,
                                              model.cfg.net.num_categories,
                                              model.cfg.net.pattern_size);
  if (samples.empty()) throw ValueError("dataset contains no labeled pairs");
  auto params = model.parameters();

  std::vector<std::size_t> deck(samples.size());
  std::iota(deck.begin(), deck.end(), 0u);
  rng.shuffle(deck);
  std::size_t cursor = 0;

  TrainStats stats;
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
  for (std::size_t iter = 1; iter <= cfg.iterations; ++iter) {
    std::map<std::size_t, Tensor> stem_cache;  // scene stem shared per image
    Tensor sum_h, sum_o, sum_s;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == deck.size()) {
        rng.shuffle(deck);
        cursor = 0;
      }
      const PairSample& pair = samples[deck[cursor++]];

      const Tensor* stem_map = nullptr;
      if (!ds.has_precomputed_features()) {
        auto it = stem_cache.find(pair.ann_index);
        if (it == stem_cache.end())
          it = stem_cache
                   .emplace(pair.ann_index,
                            backbone_stem(ds.images[pair.ann_index], model.features))
                   .first;
        stem_map = &it->second;
      }
      const HOISample sample = assemble_sample(pair, ds, stem_map, model);
      const BranchScores scores = net_forward(sample, model.net);
      const Tensor lh = bce_loss(scores.s_h, sample.labels);
      const Tensor lo = bce_loss(scores.s_o, sample.labels);
      const Tensor ls = bce_loss(scores.s_s, sample.labels);
      sum_h = sum_h.defined() ? add(sum_h, lh) : lh;
      sum_o = sum_o.defined() ? add(sum_o, lo) : lo;
      sum_s = sum_s.defined() ? add(sum_s, ls) : ls;
    }
    const Tensor total = scale(add(add(sum_h, sum_o), sum_s), inv_batch);
    const double loss_value = total.value();
    if (!std::isfinite(loss_value)) detail::diagnose_non_finite(model, total, iter);

    if (log) {
      const json line = {{"iter", iter},
                         {"loss", loss_value},
                         {"loss_h", sum_h.value() * inv_batch},
                         {"loss_o", sum_o.value() * inv_batch},
                         {"loss_s", sum_s.value() * inv_batch}};
      (*log) << line.dump() << '\n';
    }
    if (iter == 1) stats.first_loss = loss_value;
    stats.final_loss = loss_value;

    backward(total);
    sgd_step(params, cfg.optim);
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Inference + evaluation
// ---------------------------------------------------------------------------

// Index-aware candidate pairing (same strict thresholds as candidate_pairs):
// pair_idx must line up with the cross-product enumeration used everywhere.
inline std::vector<std::pair<std::size_t, std::size_t>> candidate_pair_indices(
    const std::vector<DetectedInstance>& humans,
    const std::vector<DetectedInstance>& objects) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t h = 0; h < humans.size(); ++h) {
    if (!(humans[h].score > kHumanScoreThreshold)) continue;
    for (std::size_t o = 0; o < objects.size(); ++o) {
      if (!(objects[o].score > kObjectScoreThreshold)) continue;
      out.emplace_back(h, o);
    }
  }
  return out;
}

struct InferenceResult {
  std::vector<DetectionRecord> detections;
  EvalReport report;
};

// Scores every surviving candidate pair with the fused Eq-style product and
// evaluates role mAP against the dataset's ground truth.
inline InferenceResult run_inference(Model& model, const LoadedDataset& ds,
                                     double jitter = 0.0,
                                     std::uint64_t jitter_seed = 0) {
  Rng rng(jitter_seed);
  const std::size_t k = model.cfg.net.num_categories;
  InferenceResult result;

  for (std::size_t ai = 0; ai < ds.annotations.size(); ++ai) {
    const Annotation& ann = ds.annotations[ai];
    double img_w = std::numeric_limits<double>::max();
    double img_h = std::numeric_limits<double>::max();
    if (!ds.has_precomputed_features()) {
      img_w = static_cast<double>(ds.images[ai].width());
      img_h = static_cast<double>(ds.images[ai].height());
    }
    const auto insts = detections_from_annotation(ann, img_w, img_h, jitter,
                                                  jitter > 0.0 ? &rng : nullptr);
    std::vector<DetectedInstance> humans(insts.begin(),
                                         insts.begin() + ann.humans.size());
    std::vector<DetectedInstance> objects(insts.begin() + ann.humans.size(),
                                          insts.end());
    const auto pairs = candidate_pair_indices(humans, objects);
    if (pairs.empty()) continue;

    Tensor stem_map;
    if (!ds.has_precomputed_features())
      stem_map = backbone_stem(ds.images[ai], model.features);

    for (const auto& [h, o] : pairs) {
      PairSample pair;
      pair.ann_index = ai;
      pair.pair_idx = h * ann.objects.size() + o;
      pair.b_h = humans[h].box;
      pair.b_o = objects[o].box;
      pair.object_class = objects[o].class_id;
      pair.labels = Tensor({k}, 0.0);  // unused at inference
      pair.pattern = interaction_pattern(pair.b_h, pair.b_o,
                                         model.cfg.net.pattern_size);
      const HOISample sample = assemble_sample(pair, ds, &stem_map, model);
      const BranchScores scores = net_forward(sample, model.net);
      const auto fused = fuse_scores(scores, humans[h].score, objects[o].score);
      for (std::size_t verb = 0; verb < k; ++verb) {
        DetectionRecord rec;
        rec.image_id = ann.image_id;
        rec.human_box = pair.b_h;
        rec.object_box = pair.b_o;
        rec.object_class = pair.object_class;
        rec.verb = static_cast<int>(verb);
        rec.score = fused[verb];
        result.detections.push_back(std::move(rec));
      }
    }
  }
  result.report = role_map(result.detections, ground_truth_pairs(ds.annotations));
  return result;
}

inline json report_to_json(const EvalReport& r) {
  json ap = json::object();
  json gt = json::object();
  for (const auto& [verb, v] : r.per_category_ap) ap[std::to_string(verb)] = v;
  for (const auto& [verb, c] : r.gt_count) gt[std::to_string(verb)] = c;
  return json{{"role_map", r.role_map},
              {"per_category_ap", ap},
              {"gt_count", gt},
              {"num_detections", r.num_detections},
              {"iou_threshold", r.iou_threshold}};
}

inline std::string report_table(const EvalReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(6) << "verb" << std::right << std::setw(8) << "gt"
     << std::setw(10) << "AP" << '\n';
  for (const auto& [verb, ap] : r.per_category_ap)
    os << std::left << std::setw(6) << verb << std::right << std::setw(8)
       << r.gt_count.at(verb) << std::setw(10) << std::fixed
       << std::setprecision(4) << ap << '\n';
  os << "role mAP: " << std::fixed << std::setprecision(4) << r.role_map << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Ablation harness: the five wiring configurations plus a node-count sweep.
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string name;
  std::size_t param_count = 0;
  double final_loss = 0.0;
  double role_map = 0.0;
};

inline std::vector<AblationRow> run_ablation(const RunConfig& base,
                                             const LoadedDataset& ds,
                                             std::ostream* progress = nullptr) {
  struct Config {
    const char* name;
    bool scene, instance, concat;
  };
  static constexpr Config kConfigs[] = {{"baseline", false, false, false},
                                        {"concat-only", false, false, true},
                                        {"scene-wide", true, false, false},
                                        {"instance-wide", false, true, false},
                                        {"full", true, true, false}};

  std::vector<AblationRow> rows;
  const auto run_one = [&](const std::string& name, const RunConfig& cfg) {
    Rng rng(cfg.seed);
    Model model(cfg.model, rng);
    AblationRow row;
    row.name = name;
    row.param_count = model.parameter_count();
    const TrainStats stats = train_model(model, ds, cfg, rng, nullptr);
    row.final_loss = stats.final_loss;
    row.role_map = run_inference(model, ds).report.role_map;
    rows.push_back(row);
    if (progress)
      (*progress) << json{{"config", name},
                          {"params", row.param_count},
                          {"final_loss", row.final_loss},
                          {"role_map", row.role_map}}
                         .dump()
                  << '\n';
  };

  for (const Config& c : kConfigs) {
    RunConfig cfg = base;
    cfg.model.net.scene_wide = c.scene;
    cfg.model.net.instance_wide = c.instance;
    cfg.model.net.concat_only = c.concat;
    run_one(c.name, cfg);
  }
  for (std::size_t n : base.node_sweep) {
    RunConfig cfg = base;
    cfg.model.net.scene_wide = true;
    cfg.model.net.instance_wide = true;
    cfg.model.net.concat_only = false;
    cfg.model.net.ingraph.node_count = n;
    run_one("nodes-" + std::to_string(n), cfg);
  }
  return rows;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "configuration" << std::right << std::setw(10)
     << "params" << std::setw(14) << "final_loss" << std::setw(10) << "mAP" << '\n';
  for (const AblationRow& r : rows)
    os << std::left << std::setw(16) << r.name << std::right << std::setw(10)
       << r.param_count << std::setw(14) << std::fixed << std::setprecision(4)
       << r.final_loss << std::setw(10) << std::setprecision(4) << r.role_map
       << '\n';
  return os.str();
}

inline json ablation_to_json(const std::vector<AblationRow>& rows) {
  json arr = json::array();
  for (const AblationRow& r : rows)
    arr.push_back({{"name", r.name},
                   {"params", r.param_count},
                   {"final_loss", r.final_loss},
                   {"role_map", r.role_map}});
  return json{{"rows", arr}};
}

}  // namespace ingraph
