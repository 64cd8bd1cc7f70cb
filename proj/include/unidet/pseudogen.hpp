#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "unidet/annotations.hpp"
#include "unidet/error.hpp"
#include "unidet/geometry.hpp"
#include "unidet/labelspace.hpp"
#include "unidet/merge.hpp"

namespace unidet {

/// Pseudo ground truth for images of `target_dataset` from detectors trained
/// on the other datasets. Detections are relabelled to unified ids; those of
/// classes the target annotates itself are dropped, as is anything scoring
/// below `floor`. Sorted by image id, then score descending (ties keep the
/// source/input order). Overlapping boxes from different sources are kept.
inline std::vector<Detection> generate_pgt(const std::string& target_dataset, const UnifiedLabelSpace& u,
                                           const std::vector<HeadDetections>& sources, double floor = 0.05) {
  const auto annotated = u.mapped(target_dataset);
  std::vector<Detection> out;
  for (const auto& src : sources) {
    if (src.dataset_id == target_dataset)
      fail(ErrorKind::configuration,
           "source detector '" + src.dataset_id + "' is trained on the target dataset itself");
    for (const auto& d : to_unified(src, u)) {
      if (std::binary_search(annotated.begin(), annotated.end(), d.category)) continue;
      if (d.score < floor) continue;
      out.push_back(d);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    return a.score > b.score;
  });
  return out;
}

struct PgtQuality {
  double precision = 0.0;
  double recall = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t num_gt = 0;
  /// No reference boxes: recall is reported as 1.
  bool recall_undefined = false;
  /// No pseudo boxes at or above the threshold: precision is reported as 0.
  bool precision_undefined = false;
};

/// Precision / recall of pseudo boxes scoring >= score_thr against held-out
/// ground truth. Greedy by descending score: each pseudo box takes the
/// highest-IoU unused gt of its image and category with IoU > iou_thr.
inline PgtQuality eval_pgt_quality(std::span<const Detection> pgt, std::span<const Annotation> gt, double iou_thr,
                                   double score_thr) {
  PgtQuality q;
  q.num_gt = gt.size();
  std::map<std::pair<std::int64_t, int>, std::vector<std::size_t>> gt_by_key;
  for (std::size_t k = 0; k < gt.size(); ++k) gt_by_key[{gt[k].image_id, gt[k].category}].push_back(k);
  std::vector<bool> used(gt.size(), false);

  std::vector<std::size_t> order(pgt.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pgt[a].score > pgt[b].score; });
  for (auto i : order) {
    const auto& d = pgt[i];
    if (d.score < score_thr) continue;
    double best = iou_thr;
    std::size_t arg = gt.size();
    if (auto it = gt_by_key.find({d.image_id, d.category}); it != gt_by_key.end()) {
      for (auto k : it->second) {
        if (used[k]) continue;
        const double s = iou(d.box, gt[k].box);
        if (s > best) {
          best = s;
          arg = k;
        }
      }
    }
    if (arg < gt.size()) {
      used[arg] = true;
      ++q.tp;
    } else {
      ++q.fp;
    }
  }
  if (q.tp + q.fp == 0) {
    q.precision_undefined = true;
  } else {
    q.precision = static_cast<double>(q.tp) / static_cast<double>(q.tp + q.fp);
  }
  if (q.num_gt == 0) {
    q.recall_undefined = true;
    q.recall = 1.0;
  } else {
    q.recall = static_cast<double>(q.tp) / static_cast<double>(q.num_gt);
  }
  return q;
}

}  // namespace unidet
