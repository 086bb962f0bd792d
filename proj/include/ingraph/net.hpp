#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ingraph/geometry.hpp"
#include "ingraph/graph_block.hpp"
#include "ingraph/optim.hpp"
#include "ingraph/tensor.hpp"

namespace ingraph {

// Channels of the two spatial-branch conv stages.
inline constexpr std::size_t kSpatialChannels = 8;

struct NetConfig {
  InGraphConfig ingraph;
  std::size_t num_categories = 4;  // K
  std::size_t pattern_size = 64;   // S
  std::size_t head_hidden = 64;
  // Ablation switches: which reasoning blocks exist. concat_only replaces
  // them with plain feature concatenation and excludes the other two.
  bool scene_wide = true;
  bool instance_wide = true;
  bool concat_only = false;

  void validate() const {
    ingraph.validate();
    if (num_categories < 1) throw ValueError("num_categories must be >= 1");
    if (pattern_size < 8) throw ValueError("pattern_size must be >= 8");
    if (head_hidden < 1) throw ValueError("head_hidden must be >= 1");
    if (concat_only && (scene_wide || instance_wide))
      throw ValueError("concat_only excludes scene_wide and instance_wide");
  }

  std::size_t human_stream_channels() const {
    const std::size_t d = ingraph.feature_dim;
    return (concat_only || scene_wide) ? 2 * d : d;
  }
  std::size_t object_stream_channels() const {
    const std::size_t d = ingraph.feature_dim;
    if (concat_only) return 3 * d;
    return d + (scene_wide ? d : 0) + (instance_wide ? d : 0);
  }
};

// Sigmoid scores of the three branches, each [K] in (0,1).
struct BranchScores {
  Tensor s_h, s_o, s_s;
};

// One candidate human-object pair ready for the network.
struct HOISample {
  TargetFeature f_s, f_h, f_o;
  Tensor pattern;      // [S,S,2] binary
  Tensor labels;       // [K] binary
  double s_h_pre = 1.0;  // detector scores, used only at fusion
  double s_o_pre = 1.0;
};

// Two-channel binary raster of the pair inside its union box: channel 0 is
// the human mask, channel 1 the object mask, sampled at cell centers.
inline Tensor interaction_pattern(const BoxPx& b_h, const BoxPx& b_o, std::size_t s) {
  b_h.require_valid("interaction_pattern human box");
  b_o.require_valid("interaction_pattern object box");
  const BoxPx u = union_box(b_h, b_o);
  std::vector<double> out(s * s * 2, 0.0);
  const double cw = u.width() / static_cast<double>(s);
  const double ch = u.height() / static_cast<double>(s);
  for (std::size_t r = 0; r < s; ++r) {
    const double cy = u.y1 + (static_cast<double>(r) + 0.5) * ch;
    for (std::size_t c = 0; c < s; ++c) {
      const double cx = u.x1 + (static_cast<double>(c) + 0.5) * cw;
      if (cx >= b_h.x1 && cx <= b_h.x2 && cy >= b_h.y1 && cy <= b_h.y2)
        out[(r * s + c) * 2 + 0] = 1.0;
      if (cx >= b_o.x1 && cx <= b_o.x2 && cy >= b_o.y1 && cy <= b_o.y2)
        out[(r * s + c) * 2 + 1] = 1.0;
    }
  }
  return Tensor::from_values({s, s, 2}, std::move(out));
}

// Classification head shared in structure by the human- and object-centric
// branches: pool, two FC layers, sigmoid.
struct HeadParams {
  FcParams fc1, fc2;

  HeadParams() = default;
  HeadParams(const std::string& prefix, std::size_t in_channels, std::size_t hidden,
             std::size_t k, Rng& rng)
      : fc1(prefix + ".fc1", in_channels, hidden, rng),
        fc2(prefix + ".fc2", hidden, k, rng) {}

  std::vector<Parameter*> parameters() {
    return {&fc1.weight, &fc1.bias, &fc2.weight, &fc2.bias};
  }
};

inline Tensor head_forward(const Tensor& stream, const HeadParams& head) {
  return sigmoid(head.fc2(relu(head.fc1(global_avg_pool(stream)))));
}

struct SpatialParams {
  Conv1x1Params conv1, conv2;
  FcParams fc;

  SpatialParams() = default;
  SpatialParams(const std::string& prefix, std::size_t k, Rng& rng)
      : conv1(prefix + ".conv1", 2, kSpatialChannels, rng),
        conv2(prefix + ".conv2", kSpatialChannels, kSpatialChannels, rng),
        fc(prefix + ".fc", kSpatialChannels, k, rng) {}

  std::vector<Parameter*> parameters() {
    return {&conv1.weight, &conv1.bias, &conv2.weight,
            &conv2.bias,   &fc.weight,  &fc.bias};
  }
};

// -- branches ----------------------------------------------------------------

inline Tensor human_branch(const TargetFeature& f_h, const Tensor& g_hs,
                           const HeadParams& head) {
  return head_forward(concat(f_h.map, g_hs, 2), head);
}

inline Tensor object_branch(const TargetFeature& f_o, const Tensor& g_os,
                            const Tensor& g_ho, const HeadParams& head) {
  return head_forward(concat(concat(f_o.map, g_os, 2), g_ho, 2), head);
}

inline Tensor spatial_branch(const Tensor& pattern, const SpatialParams& p) {
  const Tensor s1 = avg_pool2x2(relu(p.conv1(pattern)));
  const Tensor s2 = relu(p.conv2(s1));
  return sigmoid(p.fc(global_avg_pool(s2)));
}

// -- assembled network --------------------------------------------------------

// The graph blocks exist only in the configurations that use them, so the
// ablated network carries no hidden parameters.
struct NetParams {
  NetConfig cfg;
  std::optional<InGraphParams> graph_hs, graph_os, graph_ho;
  HeadParams human_head, object_head;
  SpatialParams spatial;

  static NetConfig checked(NetConfig c) {
    c.validate();
    return c;
  }

  NetParams(NetConfig config, Rng& rng) : cfg(checked(config)) {
    if (cfg.scene_wide) {
      graph_hs.emplace("hs", cfg.ingraph, rng);
      graph_os.emplace("os", cfg.ingraph, rng);
    }
    if (cfg.instance_wide) graph_ho.emplace("ho", cfg.ingraph, rng);
    human_head = HeadParams("head.human", cfg.human_stream_channels(),
                            cfg.head_hidden, cfg.num_categories, rng);
    object_head = HeadParams("head.object", cfg.object_stream_channels(),
                             cfg.head_hidden, cfg.num_categories, rng);
    spatial = SpatialParams("head.spatial", cfg.num_categories, rng);
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto* g : {&graph_hs, &graph_os, &graph_ho})
      if (g->has_value())
        for (Parameter* p : g->value().parameters()) out.push_back(p);
    for (Parameter* p : human_head.parameters()) out.push_back(p);
    for (Parameter* p : object_head.parameters()) out.push_back(p);
    for (Parameter* p : spatial.parameters()) out.push_back(p);
    return out;
  }
};

// Test probe: lets the wiring checks zero one graph output in isolation.
struct ForwardProbe {
  bool zero_instance_graph = false;
};

inline BranchScores net_forward(const HOISample& sample, const NetParams& net,
                                const ForwardProbe& probe = {}) {
  const NetConfig& cfg = net.cfg;
  Tensor human_stream = sample.f_h.map;
  Tensor object_stream = sample.f_o.map;

  if (cfg.concat_only) {
    human_stream = concat(sample.f_h.map, sample.f_s.map, 2);
    object_stream = concat(concat(sample.f_o.map, sample.f_s.map, 2),
                           sample.f_h.map, 2);
  } else {
    if (cfg.scene_wide) {
      const Tensor g_hs = in_graph_forward(sample.f_h, sample.f_s, *net.graph_hs);
      const Tensor g_os = in_graph_forward(sample.f_o, sample.f_s, *net.graph_os);
      human_stream = concat(sample.f_h.map, g_hs, 2);
      object_stream = concat(sample.f_o.map, g_os, 2);
    }
    if (cfg.instance_wide) {
      Tensor g_ho = in_graph_forward(sample.f_h, sample.f_o, *net.graph_ho);
      if (probe.zero_instance_graph) g_ho = Tensor(g_ho.shape(), 0.0);
      // Instance-wide reasoning feeds the object-centric branch only.
      object_stream = concat(object_stream, g_ho, 2);
    }
  }

  BranchScores scores;
  scores.s_h = head_forward(human_stream, net.human_head);
  scores.s_o = head_forward(object_stream, net.object_head);
  scores.s_s = spatial_branch(sample.pattern, net.spatial);
  return scores;
}

// Joint objective: the branch BCE losses summed.
inline Tensor net_loss(const BranchScores& scores, const Tensor& labels) {
  return add(add(bce_loss(scores.s_h, labels), bce_loss(scores.s_o, labels)),
             bce_loss(scores.s_s, labels));
}

// Final per-category HOI score: s_h_pre * s_o_pre * (S_h + S_o) * S_s.
inline std::vector<double> fuse_scores(const BranchScores& scores, double s_h_pre,
                                       double s_o_pre) {
  if (!(s_h_pre > 0.0 && s_h_pre <= 1.0) || !(s_o_pre > 0.0 && s_o_pre <= 1.0))
    throw ValueError("fuse_scores: detector scores must lie in (0,1]");
  const auto& h = scores.s_h.values();
  const auto& o = scores.s_o.values();
  const auto& s = scores.s_s.values();
  std::vector<double> fused(h.size());
  for (std::size_t k = 0; k < fused.size(); ++k)
    fused[k] = s_h_pre * s_o_pre * (h[k] + o[k]) * s[k];
  return fused;
}

}  // namespace ingraph
