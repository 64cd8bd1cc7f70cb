// Detections from two dataset-specific heads are merged into the unified
// label space and scored against a small test set.

#include <cstdio>

#include "unidet/unidet.hpp"

int main() {
  using namespace unidet;
  const DatasetLabelSpace coco{"coco", {{1, "person"}, {2, "tv"}}};
  const DatasetLabelSpace voc{"voc", {{1, "person"}, {2, "tvmonitor"}}};
  const AliasMap aliases{{{"tv", {{"coco", "tv"}, {"voc", "tvmonitor"}}}}};
  const auto u = build_unified({coco, voc}, aliases);

  // both heads fire on the same person and tv; NMS keeps one of each
  const std::vector<HeadDetections> heads{
      {"coco", {{1, 1, {10, 10, 50, 90}, 0.92}, {1, 2, {60, 20, 95, 50}, 0.55}}},
      {"voc", {{1, 1, {11, 12, 50, 88}, 0.88}, {1, 2, {61, 20, 95, 52}, 0.81}}}};
  const auto merged = merge_detections(heads, u, NMSConfig{});
  for (const auto& d : merged) std::printf("%-7s %.2f\n", u.name(d.category).c_str(), d.score);

  const std::vector<ImageRecord> images{{1, 100, 100, ImageSource{"voc", 7}}};
  const std::vector<Annotation> truth{{1, 1, u.find("person"), {10, 10, 50, 90}},
                                      {2, 1, u.find("tv"), {60, 20, 95, 50}}};
  const auto report = evaluate(merged, images, truth, u, {{"voc", {"voc"}, {}}});
  for (const auto& view : report.views) std::printf("%s mAP50 %.3f\n", view.name.c_str(), view.map.value_or(0.0));
}
