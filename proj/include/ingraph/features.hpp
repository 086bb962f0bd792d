#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ingraph/geometry.hpp"
#include "ingraph/graph_block.hpp"
#include "ingraph/optim.hpp"
#include "ingraph/tensor.hpp"

namespace ingraph {

// RGB image, pixels [Him,Wim,3] in [0,1].
struct Image {
  std::string id;
  Tensor pixels;

  std::size_t height() const { return pixels.dim(0); }
  std::size_t width() const { return pixels.dim(1); }
};

// Trainable stand-in for the shared backbone: two conv+relu+2x2-avg stages
// (total stride 4) and a 1x1 head applied after RoI pooling.
struct FeatureParams {
  std::size_t stem_dim = 16;
  std::size_t out_dim = 32;  // D of the target features
  std::size_t roi_size = 4;  // RoI output is roi_size x roi_size
  Conv1x1Params stem1, stem2, head;

  FeatureParams(std::size_t stem, std::size_t out, std::size_t roi, Rng& rng)
      : stem_dim(stem), out_dim(out), roi_size(roi),
        stem1("backbone.stem1", 3, stem_dim, rng),
        stem2("backbone.stem2", stem_dim, stem_dim, rng),
        head("backbone.head", stem_dim, out_dim, rng) {
    // Stem conv biases start non-negative: with the default symmetric init
    // the ReLU stages collapse to all-dead units early in training.
    for (Conv1x1Params* c : {&stem1, &stem2})
      for (double& b : c->bias.tensor.mutable_values()) b = std::fabs(b);
  }

  std::vector<Parameter*> parameters() {
    return {&stem1.weight, &stem1.bias, &stem2.weight, &stem2.bias,
            &head.weight,  &head.bias};
  }
};

inline constexpr std::size_t kStemStride = 4;

namespace detail {
// Probe used by tests to confirm the stem runs once per image.
inline thread_local unsigned long stem_call_count = 0;
}  // namespace detail

// Image [H,W,3] -> feature map [H/4,W/4,stem_dim], shared by all targets.
inline Tensor backbone_stem(const Image& img, const FeatureParams& p) {
  if (img.pixels.shape().size() != 3 || img.pixels.dim(2) != 3)
    throw ShapeError("backbone_stem: image must be [H,W,3], got " +
                     shape_str(img.pixels.shape()));
  if (img.height() < 16 || img.width() < 16)
    throw ValueError("backbone_stem: image '" + img.id + "' is smaller than 16x16");
  ++detail::stem_call_count;
  const Tensor s1 = avg_pool2x2(relu(p.stem1(img.pixels)));
  return avg_pool2x2(relu(p.stem2(s1)));
}

// Max-pools a pixel-space box out of a feature map into a fixed grid.
// The box is mapped into feature coordinates by `stride`, clipped, and cut
// into bins that round outward so every bin covers at least one cell.
inline Tensor roi_pool(const Tensor& featmap, const BoxPx& box, std::size_t out_h,
                       std::size_t out_w, double stride = kStemStride) {
  if (featmap.shape().size() != 3)
    throw ShapeError("roi_pool: feature map must be [H,W,D], got " +
                     shape_str(featmap.shape()));
  box.require_valid("roi_pool");
  const std::size_t fh = featmap.dim(0), fw = featmap.dim(1), d = featmap.dim(2);
  const double max_x = static_cast<double>(fw) * stride;
  const double max_y = static_cast<double>(fh) * stride;
  if (box.x2 <= 0.0 || box.y2 <= 0.0 || box.x1 >= max_x || box.y1 >= max_y)
    throw ValueError("roi_pool: box lies fully outside the image");
  const BoxPx c = clip_box(box, max_x, max_y);

  const auto lo = [](double v, double s) {
    return static_cast<std::size_t>(std::floor(v / s));
  };
  const auto hi = [](double v, double s) {
    return static_cast<std::size_t>(std::ceil(v / s));
  };
  const std::size_t rx1 = lo(c.x1, stride), ry1 = lo(c.y1, stride);
  const std::size_t rx2 = std::min(fw, std::max(rx1 + 1, hi(c.x2, stride)));
  const std::size_t ry2 = std::min(fh, std::max(ry1 + 1, hi(c.y2, stride)));
  const std::size_t rh = ry2 - ry1, rw = rx2 - rx1;

  std::vector<double> out(out_h * out_w * d);
  std::vector<std::size_t> argmax(out.size());
  const auto& fv = featmap.values();
  for (std::size_t i = 0; i < out_h; ++i) {
    const std::size_t h0 = ry1 + (i * rh) / out_h;
    std::size_t h1 = ry1 + (((i + 1) * rh) + out_h - 1) / out_h;  // ceil
    h1 = std::max(h1, h0 + 1);
    for (std::size_t j = 0; j < out_w; ++j) {
      const std::size_t w0 = rx1 + (j * rw) / out_w;
      std::size_t w1 = rx1 + (((j + 1) * rw) + out_w - 1) / out_w;
      w1 = std::max(w1, w0 + 1);
      for (std::size_t ch = 0; ch < d; ++ch) {
        double best = fv[(h0 * fw + w0) * d + ch];
        std::size_t best_at = (h0 * fw + w0) * d + ch;
        for (std::size_t y = h0; y < h1; ++y)
          for (std::size_t x = w0; x < w1; ++x) {
            const std::size_t at = (y * fw + x) * d + ch;
            if (fv[at] > best) {
              best = fv[at];
              best_at = at;
            }
          }
        const std::size_t o = (i * out_w + j) * d + ch;
        out[o] = best;
        argmax[o] = best_at;
      }
    }
  }
  return detail::make_op({out_h, out_w, d}, std::move(out), {featmap},
                         [argmax = std::move(argmax)](detail::TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           auto& gp = p.ensure_grad();
                           for (std::size_t o = 0; o < argmax.size(); ++o)
                             gp[argmax[o]] += self.grad[o];
                         });
}

struct TargetSet {
  TargetFeature f_s, f_h, f_o;
};

// Pools scene/human/object targets out of an already computed stem map.
// The scene box is the whole image.
inline TargetSet targets_from_stem(const Tensor& stem_map, std::size_t img_h,
                                   std::size_t img_w, const BoxPx& b_h,
                                   const BoxPx& b_o, const FeatureParams& p) {
  const BoxPx b_s{0.0, 0.0, static_cast<double>(img_w), static_cast<double>(img_h)};
  const std::size_t r = p.roi_size;
  TargetSet t;
  t.f_s = {TargetKind::scene, p.head(roi_pool(stem_map, b_s, r, r))};
  t.f_h = {TargetKind::human, p.head(roi_pool(stem_map, b_h, r, r))};
  t.f_o = {TargetKind::object, p.head(roi_pool(stem_map, b_o, r, r))};
  return t;
}

// One-shot path: stem once, then three RoI-pooled targets.
inline TargetSet extract_targets(const Image& img, const BoxPx& b_h, const BoxPx& b_o,
                                 const FeatureParams& p) {
  b_h.require_valid("extract_targets human box");
  b_o.require_valid("extract_targets object box");
  const Tensor stem_map = backbone_stem(img, p);
  return targets_from_stem(stem_map, img.height(), img.width(), b_h, b_o, p);
}

}  // namespace ingraph
