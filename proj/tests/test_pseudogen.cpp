#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <vector>

#include "oracles.hpp"
#include "unidet/pseudogen.hpp"

using namespace unidet;

namespace {

DatasetLabelSpace space(const std::string& id, const std::vector<std::string>& names) {
  DatasetLabelSpace s{id, {}};
  int next = 1;
  for (const auto& n : names) s.categories.push_back({next++, n});
  return s;
}

const std::vector<std::string> kVoc{"aeroplane", "bicycle", "bird",  "boat",        "bottle", "bus",   "car",
                                    "cat",       "chair",   "cow",   "diningtable", "dog",    "horse", "motorbike",
                                    "person",    "pottedplant", "sheep", "sofa",     "train",  "tvmonitor"};

}  // namespace

TEST(GeneratePgt, OwnClassesAreDropped) {
  const auto u = build_unified({space("T", {"person", "car"}), space("S", {"person", "car", "dog"})}, {});
  const std::vector<HeadDetections> src{{"S", {{1, 1, {0, 0, 5, 5}, 0.9}, {1, 2, {0, 0, 5, 5}, 0.8}}}};
  EXPECT_TRUE(generate_pgt("T", u, src).empty());
}

TEST(GeneratePgt, SourceEqualsTargetIsConfigurationError) {
  const auto u = build_unified({space("T", {"person"}), space("S", {"dog"})}, {});
  try {
    generate_pgt("T", u, {{"T", {}}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::configuration);
  }
  try {
    generate_pgt("T", u, {{"S", {{1, 9, {0, 0, 1, 1}, 0.5}}}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::lookup);
  }
}

TEST(GeneratePgt, VocDetectorOnCocoMinusVoc) {
  // COCO with its VOC classes removed keeps 60 classes; a VOC detector can
  // only ever contribute the 20 VOC ids.
  std::vector<std::string> coco60;
  for (int i = 0; i < 60; ++i) coco60.push_back("coco_only_" + std::to_string(i));
  const auto u = build_unified({space("coco", coco60), space("voc", kVoc)}, {});
  std::mt19937_64 rng(1);
  HeadDetections voc{"voc", {}};
  for (int i = 0; i < 500; ++i)
    voc.detections.push_back({1 + static_cast<std::int64_t>(rng() % 10), 1 + static_cast<int>(rng() % 20),
                              oracle::random_box(rng), static_cast<double>(rng() % 1000) / 1000.0});
  const auto pgt = generate_pgt("coco", u, {voc});
  std::set<int> voc_ids;
  for (const auto& c : space("voc", kVoc).categories) voc_ids.insert(u.to_unified("voc", c.id));
  ASSERT_EQ(voc_ids.size(), 20u);
  for (const auto& d : pgt) EXPECT_TRUE(voc_ids.count(d.category));
}

TEST(GeneratePgt, MixedSourcesEqualFilterAndRemapOracle) {
  std::mt19937_64 rng(2);
  const auto u = build_unified(
      {space("T", {"person", "car"}), space("S1", {"person", "dog", "cat"}), space("S2", {"cat", "bus", "car"})}, {});
  const auto amb = ambiguous_set(u, "T");
  for (int t = 0; t < 200; ++t) {
    std::vector<HeadDetections> src{{"S1", {}}, {"S2", {}}};
    for (auto& s : src)
      for (int i = 0, n = static_cast<int>(rng() % 30); i < n; ++i)
        s.detections.push_back({1 + static_cast<std::int64_t>(rng() % 4), 1 + static_cast<int>(rng() % 3),
                                oracle::random_box(rng), static_cast<double>(rng() % 100) / 100.0});
    const auto pgt = generate_pgt("T", u, src, 0.05);

    std::vector<Detection> expected;
    for (const auto& s : src)
      for (const auto& d : s.detections) {
        Detection r = d;
        r.category = u.to_unified(s.dataset_id, d.category);
        const bool own = r.category == u.find("person") || r.category == u.find("car");
        if (!own && r.score >= 0.05) expected.push_back(r);
      }
    std::stable_sort(expected.begin(), expected.end(), [](const Detection& a, const Detection& b) {
      return a.image_id != b.image_id ? a.image_id < b.image_id : a.score > b.score;
    });
    EXPECT_EQ(pgt, expected);

    for (const auto& d : pgt) {
      EXPECT_TRUE(std::binary_search(amb.begin(), amb.end(), d.category));
      EXPECT_NE(d.category, u.background_id());
    }
    // raising the floor only removes records
    const auto higher = generate_pgt("T", u, src, 0.5);
    for (const auto& d : higher) EXPECT_NE(std::find(pgt.begin(), pgt.end(), d), pgt.end());
    EXPECT_LE(higher.size(), pgt.size());
  }
}

TEST(EvalPgtQuality, Examples) {
  const std::vector<Annotation> gt{{1, 1, 0, {0, 0, 10, 10}}, {2, 1, 1, {20, 20, 30, 30}}};
  const std::vector<Detection> exact{{1, 0, {0, 0, 10, 10}, 1.0}, {1, 1, {20, 20, 30, 30}, 1.0}};
  const auto q = eval_pgt_quality(exact, gt, 0.5, 0.0);
  EXPECT_EQ(q.precision, 1.0);
  EXPECT_EQ(q.recall, 1.0);

  const std::vector<Annotation> one{{1, 1, 0, {0, 0, 10, 10}}};
  const std::vector<Detection> two{{1, 0, {0, 0, 10, 10}, 0.9}, {1, 0, {50, 50, 60, 60}, 0.8}};
  const auto h = eval_pgt_quality(two, one, 0.5, 0.0);
  EXPECT_EQ(h.precision, 0.5);
  EXPECT_EQ(h.recall, 1.0);

  // a box of the wrong category never matches
  const std::vector<Detection> wrong{{1, 1, {0, 0, 10, 10}, 0.9}};
  EXPECT_EQ(eval_pgt_quality(wrong, one, 0.5, 0.0).tp, 0u);

  const auto none = eval_pgt_quality(two, std::vector<Annotation>{}, 0.5, 0.0);
  EXPECT_TRUE(none.recall_undefined);
  EXPECT_EQ(none.recall, 1.0);
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_FALSE(none.precision_undefined);
}

TEST(EvalPgtQuality, RecallNonIncreasingInScoreThreshold) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<Annotation> gt;
    std::vector<Detection> pgt;
    for (int i = 0; i < 30; ++i) {
      const BBox b = oracle::random_box(rng);
      const std::int64_t img = 1 + static_cast<std::int64_t>(rng() % 5);
      gt.push_back({i, img, static_cast<int>(rng() % 3), b});
      if (u01(rng) < 0.7) pgt.push_back({img, gt.back().category, oracle::jitter_box(rng, b, 0.1), u01(rng)});
      if (u01(rng) < 0.3) pgt.push_back({img, static_cast<int>(rng() % 3), oracle::random_box(rng), u01(rng)});
    }
    double prev = 2.0;
    for (double thr = 0.0; thr <= 1.0; thr += 0.05) {
      const auto q = eval_pgt_quality(pgt, gt, 0.5, thr);
      EXPECT_LE(q.recall, prev);
      EXPECT_GE(q.precision, 0.0);
      EXPECT_LE(q.precision, 1.0);
      prev = q.recall;
    }
  }
}
