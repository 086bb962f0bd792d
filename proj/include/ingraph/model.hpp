#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ingraph/checkpoint.hpp"
#include "ingraph/dataset.hpp"
#include "ingraph/features.hpp"
#include "ingraph/net.hpp"
#include "ingraph/optim.hpp"
#include "ingraph/rng.hpp"

namespace ingraph {

// Full trainable model: backbone stub plus the three-branch network.
struct ModelConfig {
  NetConfig net;
  std::size_t stem_dim = 16;
  std::size_t roi_size = 4;

  void validate() const {
    net.validate();
    if (stem_dim < 1) throw ValueError("stem_dim must be >= 1");
    if (roi_size < 1) throw ValueError("roi_size must be >= 1");
  }

  json to_json() const {
    return json{{"D", net.ingraph.feature_dim},
                {"C", net.ingraph.reduced_dim},
                {"N", net.ingraph.node_count},
                {"K", net.num_categories},
                {"S", net.pattern_size},
                {"head_hidden", net.head_hidden},
                {"scene_wide", net.scene_wide},
                {"instance_wide", net.instance_wide},
                {"concat_only", net.concat_only},
                {"stem_dim", stem_dim},
                {"roi_size", roi_size}};
  }

  static ModelConfig from_json(const json& j) {
    ModelConfig cfg;
    cfg.net.ingraph.feature_dim = j.at("D").get<std::size_t>();
    cfg.net.ingraph.reduced_dim = j.at("C").get<std::size_t>();
    cfg.net.ingraph.node_count = j.at("N").get<std::size_t>();
    cfg.net.num_categories = j.at("K").get<std::size_t>();
    cfg.net.pattern_size = j.at("S").get<std::size_t>();
    cfg.net.head_hidden = j.at("head_hidden").get<std::size_t>();
    cfg.net.scene_wide = j.at("scene_wide").get<bool>();
    cfg.net.instance_wide = j.at("instance_wide").get<bool>();
    cfg.net.concat_only = j.at("concat_only").get<bool>();
    cfg.stem_dim = j.at("stem_dim").get<std::size_t>();
    cfg.roi_size = j.at("roi_size").get<std::size_t>();
    cfg.validate();
    return cfg;
  }
};

struct Model {
  ModelConfig cfg;
  FeatureParams features;
  NetParams net;

  static ModelConfig checked(ModelConfig c) {
    c.validate();
    return c;
  }

  Model(ModelConfig config, Rng& rng)
      : cfg(checked(config)),
        features(cfg.stem_dim, cfg.net.ingraph.feature_dim, cfg.roi_size, rng),
        net(cfg.net, rng) {}

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out = features.parameters();
    for (Parameter* p : net.parameters()) out.push_back(p);
    check_unique_names(out);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (const Parameter* p : parameters()) n += p->tensor.numel();
    return n;
  }

  // Checkpoint (tensor container) plus hyperparameters in a JSON sidecar.
  void save(const std::string& path) {
    save_checkpoint(path, parameters());
    std::ofstream os(path + ".json", std::ios::trunc);
    if (!os) throw IoError("cannot write model config: " + path + ".json");
    os << cfg.to_json().dump(2) << '\n';
  }

  static Model load(const std::string& path) {
    std::ifstream is(path + ".json");
    if (!is) throw IoError("missing model config sidecar: " + path + ".json");
    json j;
    try {
      j = json::parse(is);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("model config sidecar: ") + e.what());
    }
    ModelConfig cfg = ModelConfig::from_json(j);
    Rng rng(0);  // values are overwritten by the checkpoint
    Model m(cfg, rng);
    load_checkpoint(path, m.parameters());
    return m;
  }
};

// -- sample assembly ----------------------------------------------------------

// One trainable candidate pair: geometry plus its multi-hot verb labels.
struct PairSample {
  std::size_t ann_index = 0;
  std::size_t pair_idx = 0;  // cross-product index: human_idx * n_objects + object_idx
  BoxPx b_h, b_o;
  int object_class = 0;
  Tensor labels;   // [K]
  Tensor pattern;  // [S,S,2]
};

// Enumerates every annotated (human, object) pair of every image, in
// cross-product order, with labels aggregated over its HOI triplets.
inline std::vector<PairSample> enumerate_pair_samples(
    const std::vector<Annotation>& anns, std::size_t num_categories,
    std::size_t pattern_size) {
  std::vector<PairSample> out;
  for (std::size_t a = 0; a < anns.size(); ++a) {
    const Annotation& ann = anns[a];
    for (std::size_t h = 0; h < ann.humans.size(); ++h) {
      for (std::size_t o = 0; o < ann.objects.size(); ++o) {
        Tensor labels({num_categories}, 0.0);
        bool any = false;
        for (const auto& hoi : ann.hois) {
          if (hoi.human_idx != h || hoi.object_idx != o) continue;
          if (hoi.verb_id < 0 ||
              static_cast<std::size_t>(hoi.verb_id) >= num_categories)
            throw ValueError("annotation '" + ann.image_id + "': verb " +
                             std::to_string(hoi.verb_id) + " out of range");
          labels.mutable_values()[static_cast<std::size_t>(hoi.verb_id)] = 1.0;
          any = true;
        }
        if (!any) continue;  // unlabeled pairs carry no training signal
        PairSample s;
        s.ann_index = a;
        s.pair_idx = h * ann.objects.size() + o;
        s.b_h = ann.humans[h];
        s.b_o = ann.objects[o].box;
        s.object_class = ann.objects[o].class_id;
        s.labels = std::move(labels);
        s.pattern = interaction_pattern(s.b_h, s.b_o, pattern_size);
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

inline TargetFeature feature_from_record(const std::vector<double>& flat,
                                         const Shape& shape, TargetKind kind) {
  return {kind, Tensor::from_values(shape, flat)};
}

// Builds the network input for one pair, either from an already computed
// stem map or from a precomputed feature record.
inline HOISample assemble_sample(const PairSample& pair, const LoadedDataset& ds,
                                 const Tensor* stem_map, const Model& model) {
  HOISample sample;
  const Annotation& ann = ds.annotations[pair.ann_index];
  if (ds.has_precomputed_features()) {
    auto it = ds.features.find({ann.image_id, pair.pair_idx});
    if (it == ds.features.end())
      throw ValueError("features.jsonl has no record for image '" + ann.image_id +
                       "' pair " + std::to_string(pair.pair_idx));
    const FeatureRecord& r = it->second;
    sample.f_s = feature_from_record(r.f_s, r.shape, TargetKind::scene);
    sample.f_h = feature_from_record(r.f_h, r.shape, TargetKind::human);
    sample.f_o = feature_from_record(r.f_o, r.shape, TargetKind::object);
  } else {
    const Image& img = ds.images[pair.ann_index];
    TargetSet t = targets_from_stem(*stem_map, img.height(), img.width(), pair.b_h,
                                    pair.b_o, model.features);
    sample.f_s = std::move(t.f_s);
    sample.f_h = std::move(t.f_h);
    sample.f_o = std::move(t.f_o);
  }
  sample.pattern = pair.pattern;
  sample.labels = pair.labels;
  return sample;
}

}  // namespace ingraph
