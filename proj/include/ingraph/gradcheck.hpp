#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ingraph/dataset.hpp"
#include "ingraph/model.hpp"
#include "ingraph/tensor.hpp"
#include "ingraph/trainer.hpp"

namespace ingraph {

inline constexpr double kGradCheckTolerance = 1e-4;
inline constexpr double kGradCheckStep = 1e-5;

struct GradCheckEntry {
  std::string group;
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
};

namespace gradcheck_detail {

// Relative error with a floor that absorbs finite-difference roundoff on
// near-zero gradients.
inline double rel_err(double analytic, double numeric) {
  const double denom =
      std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
  return std::fabs(analytic - numeric) / denom;
}

// Central finite differences of `loss_fn` against the recorded gradients of
// `leaves`, probing `max_coords` coordinates per leaf (0 = all).
inline GradCheckEntry check_leaves(const std::string& group,
                                   const std::function<Tensor()>& loss_fn,
                                   std::vector<Tensor> leaves, Rng& rng,
                                   std::size_t max_coords = 0) {
  for (Tensor& leaf : leaves) leaf.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (Tensor& leaf : leaves)
    analytic.push_back(leaf.has_grad() ? leaf.grad()
                                       : std::vector<double>(leaf.numel(), 0.0));

  GradCheckEntry entry{group, 0.0, 0};
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& leaf = leaves[li];
    std::vector<std::size_t> coords(leaf.numel());
    std::iota(coords.begin(), coords.end(), 0u);
    if (max_coords > 0 && coords.size() > max_coords) {
      rng.shuffle(coords);
      coords.resize(max_coords);
    }
    for (std::size_t c : coords) {
      double& slot = leaf.mutable_values()[c];
      const double save = slot;
      slot = save + kGradCheckStep;
      const double up = loss_fn().value();
      slot = save - kGradCheckStep;
      const double down = loss_fn().value();
      slot = save;
      const double numeric = (up - down) / (2.0 * kGradCheckStep);
      entry.max_rel_err = std::max(entry.max_rel_err, rel_err(analytic[li][c], numeric));
      ++entry.coords_checked;
    }
  }
  for (Tensor& leaf : leaves) leaf.zero_grad();
  return entry;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

}  // namespace gradcheck_detail

// Finite-difference check of every differentiable op on small random shapes.
inline std::vector<GradCheckEntry> grad_check_ops(std::uint64_t seed) {
  using gradcheck_detail::check_leaves;
  using gradcheck_detail::random_tensor;
  Rng rng(seed);
  std::vector<GradCheckEntry> entries;

  {
    Tensor a = random_tensor({4, 3}, rng), b = random_tensor({3, 5}, rng);
    entries.push_back(check_leaves(
        "op.matmul", [&] { return sum_all(matmul(a, b)); }, {a, b}, rng));
  }
  {
    Tensor x = random_tensor({3, 2, 4}, rng);
    Tensor w = random_tensor({4, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    entries.push_back(check_leaves(
        "op.conv1x1", [&] { return sum_all(sigmoid(conv1x1(x, w, b))); }, {x, w, b},
        rng));
  }
  {
    Tensor x = random_tensor({2, 6}, rng);
    entries.push_back(check_leaves(
        "op.reshape", [&] { return sum_all(sigmoid(reshape(x, {3, 4}))); }, {x}, rng));
  }
  {
    Tensor a = random_tensor({3, 2}, rng), b = random_tensor({3, 4}, rng);
    entries.push_back(check_leaves(
        "op.concat", [&] { return sum_all(sigmoid(concat(a, b, 1))); }, {a, b}, rng));
  }
  {
    Tensor x = random_tensor({2, 5}, rng);
    entries.push_back(check_leaves(
        "op.slice", [&] { return sum_all(sigmoid(slice(x, 1, 1, 3))); }, {x}, rng));
  }
  {
    Tensor a = random_tensor({4, 2}, rng), b = random_tensor({4, 2}, rng);
    entries.push_back(check_leaves(
        "op.add", [&] { return sum_all(sigmoid(add(a, b))); }, {a, b}, rng));
  }
  {
    Tensor x = random_tensor({4, 4}, rng);
    entries.push_back(check_leaves(
        "op.relu", [&] { return sum_all(relu(x)); }, {x}, rng));
  }
  {
    Tensor x = random_tensor({4, 4}, rng, -3.0, 3.0);
    entries.push_back(check_leaves(
        "op.sigmoid", [&] { return sum_all(sigmoid(x)); }, {x}, rng));
  }
  {
    Tensor x = random_tensor({3, 3}, rng);
    entries.push_back(check_leaves(
        "op.scale", [&] { return sum_all(scale(x, 0.37)); }, {x}, rng));
  }
  {
    Tensor x = random_tensor({4, 2, 3}, rng);
    entries.push_back(check_leaves(
        "op.global_avg_pool",
        [&] { return sum_all(sigmoid(global_avg_pool(x))); }, {x}, rng));
  }
  {
    Tensor x = random_tensor({4, 6, 2}, rng);
    entries.push_back(check_leaves(
        "op.avg_pool2x2", [&] { return sum_all(sigmoid(avg_pool2x2(x))); }, {x}, rng));
  }
  {
    Tensor x = random_tensor({3, 5}, rng);
    entries.push_back(check_leaves(
        "op.transpose2d", [&] { return sum_all(sigmoid(transpose2d(x))); }, {x}, rng));
  }
  {
    Tensor x = random_tensor({6}, rng);
    Tensor w = random_tensor({6, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    entries.push_back(check_leaves(
        "op.fully_connected",
        [&] { return sum_all(sigmoid(fully_connected(x, w, b))); }, {x, w, b}, rng));
  }
  {
    Tensor logits = random_tensor({5}, rng, -2.0, 2.0);
    std::vector<double> t(5);
    for (double& v : t) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    const Tensor target = Tensor::from_values({5}, std::move(t));
    entries.push_back(check_leaves(
        "op.bce_loss", [&] { return bce_loss(sigmoid(logits), target); }, {logits},
        rng));
  }
  {
    Tensor fm = random_tensor({6, 6, 2}, rng);
    const BoxPx box{3.0, 2.0, 21.0, 19.0};
    entries.push_back(check_leaves(
        "op.roi_pool", [&] { return sum_all(sigmoid(roi_pool(fm, box, 2, 2, 4.0))); },
        {fm}, rng));
  }
  return entries;
}

// Finite-difference check of the full network loss, one entry per parameter
// group, probing a few coordinates of each.
inline std::vector<GradCheckEntry> grad_check_network(std::uint64_t seed,
                                                      std::size_t coords_per_group = 6) {
  SynthConfig synth;
  synth.num_images = 2;
  synth.seed = seed;
  auto [images, annotations] = generate_synthetic(synth);
  LoadedDataset ds;
  ds.images = std::move(images);
  ds.annotations = std::move(annotations);

  Rng init_rng(seed + 1);
  ModelConfig mcfg;  // desk-scale defaults
  Model model(mcfg, init_rng);
  const auto samples = enumerate_pair_samples(ds.annotations,
                                              model.cfg.net.num_categories,
                                              model.cfg.net.pattern_size);

  const auto loss_fn = [&]() -> Tensor {
    Tensor total;
    std::map<std::size_t, Tensor> stems;
    for (const PairSample& pair : samples) {
      auto it = stems.find(pair.ann_index);
      if (it == stems.end())
        it = stems.emplace(pair.ann_index,
                           backbone_stem(ds.images[pair.ann_index], model.features))
                 .first;
      const HOISample s = assemble_sample(pair, ds, &it->second, model);
      const Tensor l = net_loss(net_forward(s, model.net), s.labels);
      total = total.defined() ? add(total, l) : l;
    }
    return scale(total, 1.0 / static_cast<double>(samples.size()));
  };

  Rng coord_rng(seed + 2);
  std::vector<GradCheckEntry> entries;
  for (Parameter* p : model.parameters())
    entries.push_back(gradcheck_detail::check_leaves(p->name, loss_fn, {p->tensor},
                                                     coord_rng, coords_per_group));
  return entries;
}

}  // namespace ingraph
