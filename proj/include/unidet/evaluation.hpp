#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
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

enum class Interpolation { all_point, eleven_point };

inline const char* to_string(Interpolation i) { return i == Interpolation::all_point ? "all" : "11pt"; }

struct PRCurve {
  int class_id = 0;
  std::vector<double> recall;     // one point per ranked detection
  std::vector<double> precision;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t num_gt = 0;
};

struct ClassAP {
  /// Empty when the class has no ground truth (not applicable, not zero).
  std::optional<double> ap;
  PRCurve curve;
};

/// Area under the precision envelope of a PR curve.
inline double average_precision(const PRCurve& c, Interpolation interp) {
  if (c.num_gt == 0) return 0.0;
  const std::size_t n = c.recall.size();
  std::vector<double> envelope(c.precision);
  for (std::size_t i = n; i-- > 1;) envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
  if (interp == Interpolation::eleven_point) {
    double total = 0.0;
    for (int t = 0; t <= 10; ++t) {
      const double level = t / 10.0;
      double best = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (c.recall[i] >= level) best = std::max(best, c.precision[i]);
      total += best;
    }
    return total / 11.0;
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (c.recall[i] - prev_recall) * envelope[i];
    prev_recall = c.recall[i];
  }
  return ap;
}

/// AP of one class over a (possibly pooled) image set. Detections are ranked
/// by score (ties: lower image id, then input order); each one takes the
/// highest-IoU unconsumed gt of its image with IoU >= iou_thr.
/// Inputs of other classes are ignored.
inline ClassAP ap50(std::span<const Detection> dets, std::span<const Annotation> gt, int class_id,
                    double iou_thr = 0.5, Interpolation interp = Interpolation::all_point) {
  ClassAP out;
  out.curve.class_id = class_id;

  std::map<std::int64_t, std::vector<std::size_t>> gt_by_image;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    if (gt[k].category != class_id) continue;
    validate_box(gt[k].box);
    gt_by_image[gt[k].image_id].push_back(k);
    ++out.curve.num_gt;
  }

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (dets[i].category == class_id) {
      validate_box(dets[i].box);
      order.push_back(i);
    }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return dets[a].image_id < dets[b].image_id;
  });

  std::vector<bool> consumed(gt.size(), false);
  for (auto i : order) {
    const auto& d = dets[i];
    std::size_t arg = gt.size();
    double best = -1.0;
    if (auto it = gt_by_image.find(d.image_id); it != gt_by_image.end()) {
      for (auto k : it->second) {
        if (consumed[k]) continue;
        const double s = detail::iou_unchecked(d.box, gt[k].box);
        if (s >= iou_thr && s > best) {
          best = s;
          arg = k;
        }
      }
    }
    if (arg < gt.size()) {
      consumed[arg] = true;
      ++out.curve.tp;
    } else {
      ++out.curve.fp;
    }
    if (out.curve.num_gt > 0) {
      out.curve.recall.push_back(static_cast<double>(out.curve.tp) / static_cast<double>(out.curve.num_gt));
      out.curve.precision.push_back(static_cast<double>(out.curve.tp) /
                                    static_cast<double>(out.curve.tp + out.curve.fp));
    }
  }
  if (out.curve.num_gt > 0) out.ap = average_precision(out.curve, interp);
  return out;
}

/// A column of the evaluation table: restrict scoring to images of some
/// source datasets and/or to a subset of unified categories. Empty lists
/// mean "no restriction"; a view with neither is the pooled MIX view.
struct View {
  std::string name;
  std::vector<std::string> sources;
  std::vector<std::string> categories;
};

struct ViewReport {
  std::string name;
  std::map<int, ClassAP> per_class;  // classes considered by the view
  std::optional<double> map;         // mean over classes with gt
  std::size_t num_images = 0;
  /// No class in the view has ground truth.
  bool empty() const { return !map.has_value(); }
};

struct EvalReport {
  double iou_threshold = 0.5;
  Interpolation interp = Interpolation::all_point;
  std::vector<ViewReport> views;  // MIX first
};

struct EvalOptions {
  double iou_threshold = 0.5;
  Interpolation interp = Interpolation::all_point;
  unsigned threads = 1;
};

/// Mixed-set evaluation in the unified space. `images` carry the dataset of
/// origin (ImageRecord::source, falling back to `default_source`); only views
/// look at it. The detector side never sees it.
inline EvalReport evaluate(std::span<const Detection> dets, std::span<const ImageRecord> images,
                           std::span<const Annotation> gt, const UnifiedLabelSpace& u, const std::vector<View>& views,
                           const EvalOptions& opts = {}, const std::string& default_source = "") {
  std::map<std::int64_t, std::string> source_of;
  std::set<std::string> known_sources;
  for (const auto& img : images) {
    source_of[img.id] = source_dataset(img, default_source);
    known_sources.insert(source_of[img.id]);
  }

  std::vector<View> all_views{View{"MIX", {}, {}}};
  all_views.insert(all_views.end(), views.begin(), views.end());

  EvalReport report;
  report.iou_threshold = opts.iou_threshold;
  report.interp = opts.interp;
  for (const auto& v : all_views) {
    std::set<std::string> sources;
    for (const auto& s : v.sources) {
      if (known_sources.count(s) == 0)
        fail(ErrorKind::configuration, "view '" + v.name + "' references unknown dataset '" + s + "'");
      sources.insert(s);
    }
    std::vector<int> classes;
    if (v.categories.empty()) {
      classes.resize(static_cast<std::size_t>(u.size()));
      std::iota(classes.begin(), classes.end(), 0);
    } else {
      for (const auto& name : v.categories) {
        const int id = u.find(name);
        if (id < 0) fail(ErrorKind::configuration, "view '" + v.name + "' references unknown category '" + name + "'");
        classes.push_back(id);
      }
      std::sort(classes.begin(), classes.end());
      classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    }

    auto in_view = [&](std::int64_t image_id) {
      if (sources.empty()) return true;
      auto it = source_of.find(image_id);
      return it != source_of.end() && sources.count(it->second) != 0;
    };
    std::vector<Detection> vd;
    for (const auto& d : dets)
      if (in_view(d.image_id)) vd.push_back(d);
    std::vector<Annotation> vg;
    for (const auto& a : gt)
      if (in_view(a.image_id)) vg.push_back(a);

    ViewReport vr;
    vr.name = v.name;
    for (const auto& img : images)
      if (in_view(img.id)) ++vr.num_images;
    std::vector<ClassAP> results(classes.size());
    parallel_for(classes.size(), opts.threads, [&](std::size_t i) {
      results[i] = ap50(vd, vg, classes[i], opts.iou_threshold, opts.interp);
    });
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < classes.size(); ++i) {
      if (results[i].ap) {
        total += *results[i].ap;
        ++counted;
      }
      vr.per_class.emplace(classes[i], std::move(results[i]));
    }
    if (counted > 0) vr.map = total / static_cast<double>(counted);
    report.views.push_back(std::move(vr));
  }
  return report;
}

}  // namespace unidet
