#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "ingraph/dataset.hpp"
#include "ingraph/geometry.hpp"

namespace ingraph {

inline constexpr double kIouThreshold = 0.5;

inline double iou(const BoxPx& a, const BoxPx& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

// One ground-truth <human, verb, object> pair, as the evaluator sees it.
struct GroundTruthPair {
  std::string image_id;
  BoxPx human_box, object_box;
  int verb = 0;
};

inline std::vector<GroundTruthPair> ground_truth_pairs(
    const std::vector<Annotation>& anns) {
  std::vector<GroundTruthPair> out;
  for (const Annotation& a : anns)
    for (const auto& h : a.hois)
      out.push_back({a.image_id, a.humans.at(h.human_idx),
                     a.objects.at(h.object_idx).box, h.verb_id});
  return out;
}

// Greedy matching outcome: detections in rank order with their TP/FP flag,
// plus ground-truth counts per verb category.
struct MatchResult {
  std::vector<std::size_t> ranked_indices;  // into the detections vector
  std::vector<bool> true_positive;          // aligned with ranked_indices
  std::map<int, std::size_t> gt_count;
};

// Detections are processed in descending score (ties: image_id, then input
// order). A detection is a true positive iff an unmatched ground-truth pair
// with the same verb in the same image overlaps it at IoU >= threshold on
// both boxes; among eligible pairs the one maximizing min(iou_h, iou_o)
// wins, ties to the lowest ground-truth index. Matched pairs are consumed.
inline MatchResult match_detections(const std::vector<DetectionRecord>& dets,
                                    const std::vector<GroundTruthPair>& gts,
                                    double iou_thresh = kIouThreshold) {
  MatchResult result;
  for (const GroundTruthPair& g : gts) result.gt_count[g.verb]++;

  result.ranked_indices.resize(dets.size());
  std::iota(result.ranked_indices.begin(), result.ranked_indices.end(), 0u);
  std::sort(result.ranked_indices.begin(), result.ranked_indices.end(),
            [&](std::size_t a, std::size_t b) {
              if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
              if (dets[a].image_id != dets[b].image_id)
                return dets[a].image_id < dets[b].image_id;
              return a < b;
            });

  std::vector<bool> consumed(gts.size(), false);
  result.true_positive.resize(dets.size(), false);
  for (std::size_t r = 0; r < result.ranked_indices.size(); ++r) {
    const DetectionRecord& d = dets[result.ranked_indices[r]];
    double best_quality = -1.0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (consumed[g] || gts[g].verb != d.verb || gts[g].image_id != d.image_id)
        continue;
      const double ih = iou(d.human_box, gts[g].human_box);
      const double io = iou(d.object_box, gts[g].object_box);
      if (ih < iou_thresh || io < iou_thresh) continue;
      const double quality = std::min(ih, io);
      if (quality > best_quality) {  // strict: ties keep the lowest index
        best_quality = quality;
        best_gt = g;
      }
    }
    if (best_gt < gts.size()) {
      consumed[best_gt] = true;
      result.true_positive[r] = true;
    }
  }
  return result;
}

// All-point interpolated AP: precision envelope over the ranked flags,
// integrated at each recall increment.
inline double average_precision(const std::vector<bool>& tp_in_rank_order,
                                std::size_t gt_count) {
  const std::size_t total_tp = static_cast<std::size_t>(
      std::count(tp_in_rank_order.begin(), tp_in_rank_order.end(), true));
  if (total_tp > gt_count)
    throw UsageError("average_precision: " + std::to_string(total_tp) +
                     " true positives exceed " + std::to_string(gt_count) +
                     " ground truths");
  if (gt_count == 0) return 0.0;
  const std::size_t n = tp_in_rank_order.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tp_in_rank_order[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(gt_count);
  }
  // envelope: max precision at any recall >= this one
  for (std::size_t i = n; i-- > 1;)
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!tp_in_rank_order[i]) continue;
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

struct EvalReport {
  std::map<int, double> per_category_ap;     // verbs with >= 1 ground truth
  std::map<int, std::size_t> gt_count;
  double role_map = 0.0;
  std::size_t num_detections = 0;
  double iou_threshold = kIouThreshold;
};

// Role mAP: AP per verb category, averaged over categories with ground truth.
inline EvalReport role_map(const std::vector<DetectionRecord>& dets,
                           const std::vector<GroundTruthPair>& gts,
                           double iou_thresh = kIouThreshold) {
  const MatchResult match = match_detections(dets, gts, iou_thresh);
  EvalReport report;
  report.num_detections = dets.size();
  report.gt_count = match.gt_count;
  report.iou_threshold = iou_thresh;
  double sum = 0.0;
  std::size_t categories = 0;
  for (const auto& [verb, count] : match.gt_count) {
    if (count == 0) continue;
    std::vector<bool> flags;
    for (std::size_t r = 0; r < match.ranked_indices.size(); ++r)
      if (dets[match.ranked_indices[r]].verb == verb)
        flags.push_back(match.true_positive[r]);
    const double ap = average_precision(flags, count);
    report.per_category_ap[verb] = ap;
    sum += ap;
    ++categories;
  }
  report.role_map = categories == 0 ? 0.0 : sum / static_cast<double>(categories);
  return report;
}

}  // namespace ingraph
