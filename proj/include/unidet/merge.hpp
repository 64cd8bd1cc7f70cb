#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "unidet/annotations.hpp"
#include "unidet/error.hpp"
#include "unidet/geometry.hpp"
#include "unidet/labelspace.hpp"
#include "unidet/parallel.hpp"

namespace unidet {

struct NMSConfig {
  double iou_threshold = 0.5;
  double score_floor = 0.0;  // detections scoring below are dropped first
  std::optional<std::size_t> max_per_image = 100;

  void validate() const {
    require(iou_threshold > 0.0 && iou_threshold < 1.0, ErrorKind::configuration,
            "NMS iou_threshold must lie in (0,1)");
  }
};

namespace detail {

/// Indices sorted by score descending, lower index first on ties.
inline std::vector<std::size_t> score_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

}  // namespace detail

/// Greedy NMS over detections of one image and one category. Returns the
/// indices of the kept detections in score order.
inline std::vector<std::size_t> nms_indices(std::span<const Detection> dets, const NMSConfig& cfg) {
  cfg.validate();
  if (dets.empty()) return {};
  for (const auto& d : dets) {
    require(d.image_id == dets.front().image_id && d.category == dets.front().category, ErrorKind::contract,
            "nms input must share one image and one category");
    validate_box(d.box);
  }
  std::vector<std::size_t> kept;
  for (auto i : detail::score_order(dets)) {
    const auto& d = dets[i];
    if (d.score < cfg.score_floor) continue;
    if (cfg.max_per_image && kept.size() >= *cfg.max_per_image) break;
    bool suppressed = false;
    for (auto k : kept) {
      if (detail::iou_unchecked(d.box, dets[k].box) > cfg.iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

inline std::vector<Detection> nms(std::span<const Detection> dets, const NMSConfig& cfg) {
  std::vector<Detection> out;
  for (auto i : nms_indices(dets, cfg)) out.push_back(dets[i]);
  return out;
}

struct HeadDetections {
  std::string dataset_id;
  std::vector<Detection> detections;  // categories in the head's local ids
};

/// Detections of every head relabelled with unified ids. Order preserved.
inline std::vector<Detection> to_unified(const HeadDetections& head, const UnifiedLabelSpace& u) {
  if (!u.has_dataset(head.dataset_id)) fail(ErrorKind::lookup, "unknown head dataset '" + head.dataset_id + "'");
  const auto& m = u.mapping(head.dataset_id);
  std::vector<Detection> out;
  out.reserve(head.detections.size());
  for (const auto& d : head.detections) {
    auto it = m.find(d.category);
    if (it == m.end())
      fail(ErrorKind::lookup, "head '" + head.dataset_id + "' has no category with local id " +
                                  std::to_string(d.category));
    Detection r = d;
    r.category = it->second;
    out.push_back(r);
  }
  return out;
}

/// Merges per-dataset detector heads: remaps to unified ids, runs NMS per
/// (image, unified category), then keeps the best max_per_image per image.
/// Output is ordered by image id, then score descending, then unified
/// category, then head/input order. Boxes and scores are never modified.
inline std::vector<Detection> merge_detections(const std::vector<HeadDetections>& per_head,
                                               const UnifiedLabelSpace& u, const NMSConfig& cfg,
                                               unsigned threads = 1) {
  cfg.validate();
  std::vector<Detection> all;
  for (const auto& head : per_head) {
    auto mapped = to_unified(head, u);
    all.insert(all.end(), mapped.begin(), mapped.end());
  }

  std::map<std::pair<std::int64_t, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < all.size(); ++i) groups[{all[i].image_id, all[i].category}].push_back(i);

  std::vector<std::vector<std::size_t>> members;
  members.reserve(groups.size());
  for (auto& [_, idx] : groups) members.push_back(std::move(idx));

  NMSConfig group_cfg = cfg;
  group_cfg.max_per_image.reset();
  std::vector<std::vector<std::size_t>> survivors(members.size());
  parallel_for(members.size(), threads, [&](std::size_t g) {
    std::vector<Detection> dets;
    for (auto i : members[g]) dets.push_back(all[i]);
    for (auto j : nms_indices(dets, group_cfg)) survivors[g].push_back(members[g][j]);
  });

  std::vector<std::size_t> keep;
  for (const auto& s : survivors) keep.insert(keep.end(), s.begin(), s.end());
  std::sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) {
    const auto& da = all[a];
    const auto& db = all[b];
    if (da.image_id != db.image_id) return da.image_id < db.image_id;
    if (da.score != db.score) return da.score > db.score;
    if (da.category != db.category) return da.category < db.category;
    return a < b;
  });

  std::vector<Detection> out;
  std::int64_t current = 0;
  std::size_t in_image = 0;
  for (std::size_t n = 0; n < keep.size(); ++n) {
    const auto& d = all[keep[n]];
    if (n == 0 || d.image_id != current) {
      current = d.image_id;
      in_image = 0;
    }
    if (cfg.max_per_image && in_image >= *cfg.max_per_image) continue;
    ++in_image;
    out.push_back(d);
  }
  return out;
}

}  // namespace unidet
