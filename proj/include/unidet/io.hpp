#pragma once

// JSON interchange for every file the toolkit reads or writes.
//
// Writers are canonical: object keys sorted, one record per line inside the
// top-level arrays, "\n" line endings, scores rounded to 6 decimals. Saving a
// loaded canonical file reproduces it byte for byte.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <unistd.h>

#include "json.hpp"
#include "unidet/annotations.hpp"
#include "unidet/error.hpp"
#include "unidet/geometry.hpp"
#include "unidet/labelspace.hpp"

namespace unidet {

using json = nlohmann::json;

struct LoadOptions {
  /// Reject unknown keys and out-of-bounds boxes instead of ignoring / clamping.
  bool strict = false;
};

// ---------------------------------------------------------------------------
// number formatting

/// Nearest double to x rounded at `decimals` places.
inline double round_decimals(double x, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(x * scale) / scale;
}

/// Nearest double to x printed with `digits` significant digits.
inline double round_significant(double x, int digits) {
  if (!std::isfinite(x) || x == 0.0) return x;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return std::strtod(buf, nullptr);
}

inline constexpr int kScoreDecimals = 6;

// ---------------------------------------------------------------------------
// file helpers

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail(ErrorKind::io, "failed reading '" + path + "'");
  return ss.str();
}

/// Writes to a temporary sibling and renames it over `path`, so readers
/// never observe a partially written file.
inline void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot open '" + tmp.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      fail(ErrorKind::io, "failed writing '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    fail(ErrorKind::io, "cannot move output into place at '" + path + "'");
  }
}

inline json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::validation, "malformed JSON in " + origin + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// schema helpers

namespace detail {

[[noreturn]] inline void schema_error(const std::string& path, const std::string& what) {
  throw Error(ErrorKind::validation, "schema violation at " + path + ": " + what).at_path(path);
}

inline std::string member(const std::string& path, const char* key) { return path + "." + key; }
inline std::string element(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

inline const json& object_at(const json& j, const std::string& path) {
  if (!j.is_object()) schema_error(path, "expected an object");
  return j;
}

inline const json& array_at(const json& j, const std::string& path) {
  if (!j.is_array()) schema_error(path, "expected an array");
  return j;
}

inline const json& required(const json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) schema_error(path, std::string("missing key \"") + key + "\"");
  return *it;
}

inline void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& path,
                       bool reject_unknown) {
  if (!reject_unknown) return;
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) schema_error(member(path, key.c_str()), "unknown key");
  }
}

inline std::int64_t as_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) schema_error(path, "expected an integer");
  return j.get<std::int64_t>();
}

inline int as_category(const json& j, const std::string& path) {
  const auto v = as_int(j, path);
  if (v < INT32_MIN || v > INT32_MAX) schema_error(path, "category id out of range");
  return static_cast<int>(v);
}

inline double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) schema_error(path, "expected a number");
  return j.get<double>();
}

inline std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) schema_error(path, "expected a string");
  return j.get<std::string>();
}

inline BBox as_bbox(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 4) schema_error(path, "expected [x1,y1,x2,y2]");
  BBox b{as_number(j[0], element(path, 0)), as_number(j[1], element(path, 1)), as_number(j[2], element(path, 2)),
         as_number(j[3], element(path, 3))};
  return b;
}

inline json bbox_json(const BBox& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

/// Box validity plus optional clamping to the image extent.
inline BBox checked_box(BBox b, const ImageRecord* image, const std::string& path, const char* record,
                        std::int64_t record_id, const LoadOptions& opts, Diagnostics* diag) {
  const std::string where = std::string(record) + " " + std::to_string(record_id);
  if (auto problem = box_problem(b); !problem.empty())
    throw Error(ErrorKind::validation, where + ": invalid bbox (" + problem + ")").at_path(path).with_record(record_id);
  if (image == nullptr) return b;
  const double w = static_cast<double>(image->width), h = static_cast<double>(image->height);
  if (b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= w && b.y2 <= h) return b;
  if (opts.strict)
    throw Error(ErrorKind::validation, where + ": bbox exceeds image bounds").at_path(path).with_record(record_id);
  BBox c{std::clamp(b.x1, 0.0, w), std::clamp(b.y1, 0.0, h), std::clamp(b.x2, 0.0, w), std::clamp(b.y2, 0.0, h)};
  if (auto problem = box_problem(c); !problem.empty())
    throw Error(ErrorKind::validation, where + ": bbox lies outside the image (" + problem + " after clamping)")
        .at_path(path)
        .with_record(record_id);
  warn(diag, where + ": bbox clamped to image bounds");
  return c;
}

/// Top-level arrays are written one compact record per line.
inline std::string canonical_document(const json& doc) {
  std::string out = "{\n";
  std::size_t k = 0;
  for (const auto& [key, value] : doc.items()) {
    out += "  " + json(key).dump() + ": ";
    if (value.is_array() && !value.empty()) {
      out += "[\n";
      for (std::size_t i = 0; i < value.size(); ++i) {
        out += "    " + value[i].dump();
        out += i + 1 < value.size() ? ",\n" : "\n";
      }
      out += "  ]";
    } else {
      out += value.dump();
    }
    out += ++k < doc.size() ? ",\n" : "\n";
  }
  out += "}\n";
  return out;
}

inline std::vector<ImageRecord> parse_images(const json& doc, const std::string& path, const LoadOptions& opts) {
  std::vector<ImageRecord> images;
  std::set<std::int64_t> ids;
  const json& arr = array_at(doc, path);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto p = element(path, i);
    const json& o = object_at(arr[i], p);
    check_keys(o, {"id", "width", "height", "source"}, p, opts.strict);
    ImageRecord img;
    img.id = as_int(required(o, "id", p), member(p, "id"));
    img.width = as_int(required(o, "width", p), member(p, "width"));
    img.height = as_int(required(o, "height", p), member(p, "height"));
    if (img.width < 1 || img.height < 1)
      throw Error(ErrorKind::validation, "image " + std::to_string(img.id) + ": width and height must be >= 1")
          .at_path(p)
          .with_record(img.id);
    if (auto it = o.find("source"); it != o.end()) {
      const auto sp = member(p, "source");
      const json& so = object_at(*it, sp);
      check_keys(so, {"dataset", "id"}, sp, true);
      img.source = ImageSource{as_string(required(so, "dataset", sp), member(sp, "dataset")),
                               as_int(required(so, "id", sp), member(sp, "id"))};
    }
    if (!ids.insert(img.id).second)
      throw Error(ErrorKind::validation, "duplicate image id " + std::to_string(img.id)).at_path(p).with_record(img.id);
    images.push_back(std::move(img));
  }
  return images;
}

inline json images_json(const std::vector<ImageRecord>& images) {
  json arr = json::array();
  for (const auto& img : images) {
    json o{{"id", img.id}, {"width", img.width}, {"height", img.height}};
    if (img.source) o["source"] = json{{"dataset", img.source->dataset}, {"id", img.source->id}};
    arr.push_back(std::move(o));
  }
  return arr;
}

inline json categories_json(const std::vector<Category>& cats) {
  json arr = json::array();
  for (const auto& c : cats) arr.push_back(json{{"id", c.id}, {"name", c.name}});
  return arr;
}

inline std::vector<Category> parse_categories(const json& j, const std::string& path, bool reject_unknown) {
  std::vector<Category> cats;
  const json& arr = array_at(j, path);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto p = element(path, i);
    const json& o = object_at(arr[i], p);
    check_keys(o, {"id", "name"}, p, reject_unknown);
    cats.push_back({as_category(required(o, "id", p), member(p, "id")),
                    as_string(required(o, "name", p), member(p, "name"))});
  }
  return cats;
}

inline DatasetLabelSpace parse_space(const json& doc, bool reject_unknown) {
  DatasetLabelSpace space;
  space.dataset_id = as_string(required(doc, "dataset_id", "$"), "$.dataset_id");
  space.categories = parse_categories(required(doc, "categories", "$"), "$.categories", reject_unknown);
  try {
    space.validate();
  } catch (Error& e) {
    e.at_path("$.categories");
    throw;
  }
  return space;
}

inline std::map<std::int64_t, const ImageRecord*> index_images(const std::vector<ImageRecord>& images) {
  std::map<std::int64_t, const ImageRecord*> by_id;
  for (const auto& img : images) by_id[img.id] = &img;
  return by_id;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// dataset (ground truth) files

inline Dataset parse_dataset(const json& doc, const LoadOptions& opts = {}, Diagnostics* diag = nullptr) {
  using namespace detail;
  object_at(doc, "$");
  check_keys(doc, {"dataset_id", "categories", "images", "annotations"}, "$", opts.strict);
  Dataset ds;
  ds.space = parse_space(doc, opts.strict);
  ds.images = parse_images(required(doc, "images", "$"), "$.images", opts);
  const auto by_id = index_images(ds.images);
  std::set<int> cats;
  for (const auto& c : ds.space.categories) cats.insert(c.id);

  const json& arr = array_at(required(doc, "annotations", "$"), "$.annotations");
  std::set<std::int64_t> ann_ids;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto p = element("$.annotations", i);
    const json& o = object_at(arr[i], p);
    check_keys(o, {"id", "image_id", "category_id", "bbox"}, p, opts.strict);
    Annotation a;
    a.id = as_int(required(o, "id", p), member(p, "id"));
    a.image_id = as_int(required(o, "image_id", p), member(p, "image_id"));
    a.category = as_category(required(o, "category_id", p), member(p, "category_id"));
    const BBox raw = as_bbox(required(o, "bbox", p), member(p, "bbox"));
    if (!ann_ids.insert(a.id).second)
      throw Error(ErrorKind::validation, "duplicate annotation id " + std::to_string(a.id)).at_path(p).with_record(a.id);
    auto img = by_id.find(a.image_id);
    if (img == by_id.end())
      throw Error(ErrorKind::validation,
                  "annotation " + std::to_string(a.id) + " references unknown image " + std::to_string(a.image_id))
          .at_path(member(p, "image_id"))
          .with_record(a.id);
    if (cats.count(a.category) == 0)
      throw Error(ErrorKind::validation, "annotation " + std::to_string(a.id) + " references unknown category " +
                                             std::to_string(a.category))
          .at_path(member(p, "category_id"))
          .with_record(a.id);
    a.box = checked_box(raw, img->second, member(p, "bbox"), "annotation", a.id, opts, diag);
    ds.annotations.push_back(a);
  }
  return ds;
}

inline json dataset_json(const Dataset& ds) {
  json anns = json::array();
  for (const auto& a : ds.annotations)
    anns.push_back(
        json{{"id", a.id}, {"image_id", a.image_id}, {"category_id", a.category}, {"bbox", detail::bbox_json(a.box)}});
  return json{{"dataset_id", ds.space.dataset_id},
              {"categories", detail::categories_json(ds.space.categories)},
              {"images", detail::images_json(ds.images)},
              {"annotations", std::move(anns)}};
}

inline std::string dump_dataset(const Dataset& ds) { return detail::canonical_document(dataset_json(ds)); }

inline Dataset load_dataset(const std::string& path, const LoadOptions& opts = {}, Diagnostics* diag = nullptr) {
  return parse_dataset(parse_json_text(read_text_file(path), path), opts, diag);
}

inline void save_dataset(const std::string& path, const Dataset& ds) { write_file_atomic(path, dump_dataset(ds)); }

/// dataset_id + categories of any dataset-like file (ground truth or detections).
inline DatasetLabelSpace load_label_space(const std::string& path) {
  const json doc = parse_json_text(read_text_file(path), path);
  detail::object_at(doc, "$");
  return detail::parse_space(doc, false);
}

// ---------------------------------------------------------------------------
// detection files

inline DetectionSet parse_detections(const json& doc, const LoadOptions& opts = {}, Diagnostics* diag = nullptr) {
  using namespace detail;
  object_at(doc, "$");
  check_keys(doc, {"dataset_id", "categories", "images", "detections"}, "$", opts.strict);
  DetectionSet ds;
  ds.space = parse_space(doc, opts.strict);
  if (auto it = doc.find("images"); it != doc.end()) ds.images = parse_images(*it, "$.images", opts);
  const auto by_id = index_images(ds.images);
  std::set<int> cats;
  for (const auto& c : ds.space.categories) cats.insert(c.id);

  const json& arr = array_at(required(doc, "detections", "$"), "$.detections");
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto p = element("$.detections", i);
    const json& o = object_at(arr[i], p);
    check_keys(o, {"image_id", "category_id", "bbox", "score"}, p, opts.strict);
    Detection d;
    d.image_id = as_int(required(o, "image_id", p), member(p, "image_id"));
    d.category = as_category(required(o, "category_id", p), member(p, "category_id"));
    const BBox raw = as_bbox(required(o, "bbox", p), member(p, "bbox"));
    d.score = as_number(required(o, "score", p), member(p, "score"));
    const auto idx = static_cast<std::int64_t>(i);
    if (!(d.score >= 0.0 && d.score <= 1.0))
      throw Error(ErrorKind::validation, "detection " + std::to_string(i) + ": score outside [0,1]")
          .at_path(member(p, "score"))
          .with_record(idx);
    if (cats.count(d.category) == 0)
      throw Error(ErrorKind::validation,
                  "detection " + std::to_string(i) + " references unknown category " + std::to_string(d.category))
          .at_path(member(p, "category_id"))
          .with_record(idx);
    const ImageRecord* img = nullptr;
    if (!by_id.empty()) {
      auto it = by_id.find(d.image_id);
      if (it == by_id.end())
        throw Error(ErrorKind::validation,
                    "detection " + std::to_string(i) + " references unknown image " + std::to_string(d.image_id))
            .at_path(member(p, "image_id"))
            .with_record(idx);
      img = it->second;
    }
    d.box = checked_box(raw, img, member(p, "bbox"), "detection", idx, opts, diag);
    ds.detections.push_back(d);
  }
  return ds;
}

inline json detections_json(const DetectionSet& ds) {
  json dets = json::array();
  for (const auto& d : ds.detections)
    dets.push_back(json{{"image_id", d.image_id},
                        {"category_id", d.category},
                        {"bbox", detail::bbox_json(d.box)},
                        {"score", round_decimals(d.score, kScoreDecimals)}});
  return json{{"dataset_id", ds.space.dataset_id},
              {"categories", detail::categories_json(ds.space.categories)},
              {"images", detail::images_json(ds.images)},
              {"detections", std::move(dets)}};
}

inline std::string dump_detections(const DetectionSet& ds) { return detail::canonical_document(detections_json(ds)); }

inline DetectionSet load_detections(const std::string& path, const LoadOptions& opts = {},
                                    Diagnostics* diag = nullptr) {
  return parse_detections(parse_json_text(read_text_file(path), path), opts, diag);
}

inline void save_detections(const std::string& path, const DetectionSet& ds) {
  write_file_atomic(path, dump_detections(ds));
}

// ---------------------------------------------------------------------------
// alias map

inline AliasMap parse_alias_map(const json& doc) {
  using namespace detail;
  object_at(doc, "$");
  check_keys(doc, {"groups"}, "$", true);
  AliasMap map;
  const json& groups = array_at(required(doc, "groups", "$"), "$.groups");
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto p = element("$.groups", i);
    const json& g = object_at(groups[i], p);
    check_keys(g, {"unified_name", "members"}, p, true);
    AliasGroup group;
    group.unified_name = as_string(required(g, "unified_name", p), member(p, "unified_name"));
    const auto mp = member(p, "members");
    const json& members = array_at(required(g, "members", p), mp);
    for (std::size_t k = 0; k < members.size(); ++k) {
      const auto ep = element(mp, k);
      if (!members[k].is_array() || members[k].size() != 2) schema_error(ep, "expected [dataset_id, category_name]");
      group.members.push_back({as_string(members[k][0], element(ep, 0)), as_string(members[k][1], element(ep, 1))});
    }
    map.groups.push_back(std::move(group));
  }
  try {
    map.validate();
  } catch (Error& e) {
    e.at_path("$.groups");
    throw;
  }
  return map;
}

inline AliasMap load_alias_map(const std::string& path) {
  return parse_alias_map(parse_json_text(read_text_file(path), path));
}

inline json alias_map_json(const AliasMap& map) {
  json groups = json::array();
  for (const auto& g : map.groups) {
    json members = json::array();
    for (const auto& m : g.members) members.push_back(json::array({m.dataset_id, m.category_name}));
    groups.push_back(json{{"unified_name", g.unified_name}, {"members", std::move(members)}});
  }
  return json{{"groups", std::move(groups)}};
}

// ---------------------------------------------------------------------------
// unified label space

inline json unified_json(const UnifiedLabelSpace& u) {
  json datasets = json::array();
  for (const auto& ds : u.dataset_ids()) {
    json cats = json::array();
    for (const auto& c : u.local_categories(ds))
      cats.push_back(json{{"id", c.id}, {"name", c.name}, {"unified_id", u.to_unified(ds, c.id)}});
    datasets.push_back(json{{"dataset_id", ds}, {"categories", std::move(cats)}});
  }
  return json{{"background_id", u.background_id()},
              {"categories", detail::categories_json(u.categories())},
              {"datasets", std::move(datasets)}};
}

inline std::string dump_unified(const UnifiedLabelSpace& u) { return detail::canonical_document(unified_json(u)); }

inline UnifiedLabelSpace parse_unified(const json& doc) {
  using namespace detail;
  object_at(doc, "$");
  check_keys(doc, {"background_id", "categories", "datasets"}, "$", true);
  const auto cats = parse_categories(required(doc, "categories", "$"), "$.categories", true);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < cats.size(); ++i) {
    if (cats[i].id != static_cast<int>(i))
      schema_error(element("$.categories", i), "unified ids must be 0..n-1 in order");
    names.push_back(normalize_name(cats[i].name));
  }
  const auto bg = as_int(required(doc, "background_id", "$"), "$.background_id");
  if (bg != static_cast<std::int64_t>(cats.size())) schema_error("$.background_id", "must equal the category count");

  std::map<std::string, std::map<int, int>> per_dataset;
  std::map<std::string, std::vector<Category>> local;
  const json& arr = array_at(required(doc, "datasets", "$"), "$.datasets");
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto p = element("$.datasets", i);
    const json& o = object_at(arr[i], p);
    check_keys(o, {"dataset_id", "categories"}, p, true);
    const auto id = as_string(required(o, "dataset_id", p), member(p, "dataset_id"));
    if (per_dataset.count(id) != 0) schema_error(member(p, "dataset_id"), "duplicate dataset_id '" + id + "'");
    auto& m = per_dataset[id];
    auto& lc = local[id];
    const auto cp = member(p, "categories");
    const json& ca = array_at(required(o, "categories", p), cp);
    for (std::size_t k = 0; k < ca.size(); ++k) {
      const auto ep = element(cp, k);
      const json& co = object_at(ca[k], ep);
      check_keys(co, {"id", "name", "unified_id"}, ep, true);
      Category c{as_category(required(co, "id", ep), member(ep, "id")),
                 as_string(required(co, "name", ep), member(ep, "name"))};
      const int uid = as_category(required(co, "unified_id", ep), member(ep, "unified_id"));
      if (!m.emplace(c.id, uid).second) schema_error(member(ep, "id"), "duplicate local id");
      lc.push_back(std::move(c));
    }
  }
  try {
    return UnifiedLabelSpace(std::move(names), std::move(per_dataset), std::move(local));
  } catch (Error& e) {
    e.at_path("$");
    throw;
  }
}

inline UnifiedLabelSpace load_unified(const std::string& path) {
  return parse_unified(parse_json_text(read_text_file(path), path));
}

// ---------------------------------------------------------------------------
// proposal batches (JSON lines)

inline ProposalBatch parse_batch(const json& doc, const LoadOptions& opts = {}) {
  using namespace detail;
  object_at(doc, "$");
  check_keys(doc, {"image_id", "dataset_id", "proposals", "gt", "pgt"}, "$", opts.strict);
  ProposalBatch b;
  b.image_id = as_int(required(doc, "image_id", "$"), "$.image_id");
  b.dataset_id = as_string(required(doc, "dataset_id", "$"), "$.dataset_id");

  const json& props = array_at(required(doc, "proposals", "$"), "$.proposals");
  for (std::size_t i = 0; i < props.size(); ++i) {
    const auto p = element("$.proposals", i);
    const json& o = object_at(props[i], p);
    check_keys(o, {"bbox", "logits"}, p, opts.strict);
    Proposal prop;
    prop.box = checked_box(as_bbox(required(o, "bbox", p), member(p, "bbox")), nullptr, member(p, "bbox"), "proposal",
                           static_cast<std::int64_t>(i), opts, nullptr);
    const auto lp = member(p, "logits");
    const json& logits = array_at(required(o, "logits", p), lp);
    for (std::size_t k = 0; k < logits.size(); ++k) {
      const double v = as_number(logits[k], element(lp, k));
      if (!std::isfinite(v)) schema_error(element(lp, k), "logit must be finite");
      prop.logits.push_back(v);
    }
    b.proposals.push_back(std::move(prop));
  }

  if (auto it = doc.find("gt"); it != doc.end()) {
    const json& gt = array_at(*it, "$.gt");
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const auto p = element("$.gt", i);
      const json& o = object_at(gt[i], p);
      check_keys(o, {"id", "category_id", "bbox"}, p, opts.strict);
      Annotation a;
      a.id = o.contains("id") ? as_int(o["id"], member(p, "id")) : static_cast<std::int64_t>(i);
      a.image_id = b.image_id;
      a.category = as_category(required(o, "category_id", p), member(p, "category_id"));
      a.box = checked_box(as_bbox(required(o, "bbox", p), member(p, "bbox")), nullptr, member(p, "bbox"),
                          "annotation", a.id, opts, nullptr);
      b.gt.push_back(a);
    }
  }
  if (auto it = doc.find("pgt"); it != doc.end()) {
    const json& pgt = array_at(*it, "$.pgt");
    for (std::size_t i = 0; i < pgt.size(); ++i) {
      const auto p = element("$.pgt", i);
      const json& o = object_at(pgt[i], p);
      check_keys(o, {"category_id", "bbox", "score"}, p, opts.strict);
      Detection d;
      d.image_id = b.image_id;
      d.category = as_category(required(o, "category_id", p), member(p, "category_id"));
      d.box = checked_box(as_bbox(required(o, "bbox", p), member(p, "bbox")), nullptr, member(p, "bbox"),
                          "pseudo box", static_cast<std::int64_t>(i), opts, nullptr);
      d.score = as_number(required(o, "score", p), member(p, "score"));
      if (!(d.score >= 0.0 && d.score <= 1.0)) schema_error(member(p, "score"), "score outside [0,1]");
      b.pgt.push_back(d);
    }
  }
  return b;
}

inline json batch_json(const ProposalBatch& b) {
  json props = json::array();
  for (const auto& p : b.proposals) props.push_back(json{{"bbox", detail::bbox_json(p.box)}, {"logits", p.logits}});
  json gt = json::array();
  for (const auto& a : b.gt)
    gt.push_back(json{{"id", a.id}, {"category_id", a.category}, {"bbox", detail::bbox_json(a.box)}});
  json pgt = json::array();
  for (const auto& d : b.pgt)
    pgt.push_back(json{{"category_id", d.category},
                       {"bbox", detail::bbox_json(d.box)},
                       {"score", round_decimals(d.score, kScoreDecimals)}});
  return json{{"image_id", b.image_id},
              {"dataset_id", b.dataset_id},
              {"proposals", std::move(props)},
              {"gt", std::move(gt)},
              {"pgt", std::move(pgt)}};
}

/// One batch per line, no trailing whitespace.
inline std::string dump_batch_line(const ProposalBatch& b) { return batch_json(b).dump() + "\n"; }

/// Reads a JSON-lines stream; blank lines are skipped. Errors name the line.
class BatchReader {
 public:
  BatchReader(std::istream& in, LoadOptions opts = {}) : in_(in), opts_(opts) {}

  /// Next batch, or false at end of stream.
  bool next(ProposalBatch& out) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const std::string origin = "line " + std::to_string(line_no_);
      try {
        out = parse_batch(parse_json_text(line, origin), opts_);
      } catch (Error& e) {
        throw Error(e.kind(), origin + ": " + e.what()).at_path(e.path());
      }
      return true;
    }
    return false;
  }

  std::size_t line_number() const { return line_no_; }

 private:
  std::istream& in_;
  LoadOptions opts_;
  std::size_t line_no_ = 0;
};

}  // namespace unidet
