#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "unidet/error.hpp"
#include "unidet/geometry.hpp"
#include "unidet/labelspace.hpp"

namespace unidet {

/// Where a pooled image originally came from.
struct ImageSource {
  std::string dataset;
  std::int64_t id = 0;

  friend bool operator==(const ImageSource&, const ImageSource&) = default;
};

struct ImageRecord {
  std::int64_t id = 0;
  std::int64_t width = 1;
  std::int64_t height = 1;
  /// Set only on pooled test sets; provenance metadata, never used for scoring.
  std::optional<ImageSource> source;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct Annotation {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  int category = 0;
  BBox box;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct Detection {
  std::int64_t image_id = 0;
  int category = 0;
  BBox box;
  double score = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// A ground-truth file: the label space and everything annotated with it.
struct Dataset {
  DatasetLabelSpace space;
  std::vector<ImageRecord> images;
  std::vector<Annotation> annotations;
};

/// Detector output (or pseudo ground truth). `space` names the id space of
/// `category`: a detector's own label space, or the unified one.
struct DetectionSet {
  DatasetLabelSpace space;
  std::vector<ImageRecord> images;
  std::vector<Detection> detections;
};

struct Proposal {
  BBox box;
  std::vector<double> logits;  // length |L_u| + 1, background last
};

/// One image's training signal: RCN proposals with their logits, the true
/// annotations (unified ids) and the pseudo ground truth for L*.
struct ProposalBatch {
  std::int64_t image_id = 0;
  std::string dataset_id;
  std::vector<Proposal> proposals;
  std::vector<Annotation> gt;
  std::vector<Detection> pgt;
};

inline std::string source_dataset(const ImageRecord& image, const std::string& file_dataset_id) {
  return image.source ? image.source->dataset : file_dataset_id;
}

/// Removes the named categories from the label space and deletes their
/// annotations. Those objects become unannotated; images are kept even
/// when left without annotations.
inline Dataset ablate(const Dataset& dataset, const std::set<std::string>& remove, Diagnostics* diag = nullptr) {
  Dataset out;
  out.space = restrict_categories(dataset.space, remove, diag);
  out.images = dataset.images;
  std::set<int> kept;
  for (const auto& c : out.space.categories) kept.insert(c.id);
  for (const auto& a : dataset.annotations)
    if (kept.count(a.category) != 0) out.annotations.push_back(a);
  return out;
}

/// Pools several test sets that already share one category space.
/// Images get fresh sequential ids (1..n) and keep their origin in `source`;
/// annotations are renumbered the same way.
inline Dataset mix_testsets(const std::vector<Dataset>& sets, const std::string& mixed_id = "mixed") {
  Dataset out;
  out.space.dataset_id = mixed_id;
  if (sets.empty()) return out;
  out.space.categories = sets.front().space.categories;
  for (const auto& s : sets) {
    if (s.space.categories != out.space.categories)
      fail(ErrorKind::configuration, "test set '" + s.space.dataset_id +
                                         "' uses a different category space; map all sets to the unified space first");
  }

  std::set<std::pair<std::string, std::int64_t>> seen;
  std::int64_t next_image = 1;
  std::int64_t next_ann = 1;
  for (const auto& s : sets) {
    std::map<std::int64_t, std::int64_t> rekey;
    for (const auto& img : s.images) {
      ImageSource origin = img.source ? *img.source : ImageSource{s.space.dataset_id, img.id};
      if (!seen.emplace(origin.dataset, origin.id).second)
        fail(ErrorKind::validation, "duplicate image (" + origin.dataset + ", " + std::to_string(origin.id) +
                                        ") across mixed test sets");
      ImageRecord rec = img;
      rec.id = next_image++;
      rec.source = std::move(origin);
      rekey[img.id] = rec.id;
      out.images.push_back(std::move(rec));
    }
    for (const auto& a : s.annotations) {
      auto it = rekey.find(a.image_id);
      if (it == rekey.end())
        throw Error(ErrorKind::validation, "annotation " + std::to_string(a.id) + " in '" + s.space.dataset_id +
                                               "' references unknown image " + std::to_string(a.image_id))
            .with_record(a.id);
      Annotation b = a;
      b.id = next_ann++;
      b.image_id = it->second;
      out.annotations.push_back(b);
    }
  }
  return out;
}

}  // namespace unidet
