#pragma once

// The command-line pipeline as plain functions. Each command reads its
// inputs, computes everything in memory and returns the files it wants
// written plus what it prints; the caller does the (atomic) writing, so a
// failing command never leaves partial output behind.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "unidet/annotations.hpp"
#include "unidet/error.hpp"
#include "unidet/evaluation.hpp"
#include "unidet/io.hpp"
#include "unidet/labelspace.hpp"
#include "unidet/losses.hpp"
#include "unidet/matching.hpp"
#include "unidet/merge.hpp"
#include "unidet/parallel.hpp"
#include "unidet/pseudogen.hpp"

namespace unidet::cli {

struct OutputFile {
  std::string path;
  std::string content;
};

struct Outcome {
  std::vector<OutputFile> files;
  std::string stdout_text;
  Diagnostics diag;
};

inline void write_outputs(const Outcome& outcome) {
  for (const auto& f : outcome.files) write_file_atomic(f.path, f.content);
}

namespace detail {

/// Non-empty lines with surrounding whitespace removed; '#' starts a comment line.
inline std::vector<std::string> read_name_list(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    const auto begin = line.find_first_not_of(" \t\r");
    if (begin == std::string::npos || line[begin] == '#') continue;
    const auto end = line.find_last_not_of(" \t\r");
    names.push_back(line.substr(begin, end - begin + 1));
  }
  return names;
}

inline AliasMap load_aliases(const std::optional<std::string>& path) {
  return path ? load_alias_map(*path) : AliasMap{};
}

/// Union of image lists by id; the same id must describe the same image.
inline std::vector<ImageRecord> union_images(const std::vector<const std::vector<ImageRecord>*>& lists) {
  std::map<std::int64_t, ImageRecord> by_id;
  for (const auto* list : lists)
    for (const auto& img : *list) {
      auto [it, inserted] = by_id.emplace(img.id, img);
      if (!inserted && !(it->second == img))
        throw Error(ErrorKind::validation, "image " + std::to_string(img.id) + " is described differently by two inputs")
            .with_record(img.id);
    }
  std::vector<ImageRecord> out;
  for (auto& [_, img] : by_id) out.push_back(img);
  return out;
}

inline DatasetLabelSpace unified_space_record(const UnifiedLabelSpace& u, const std::string& id) {
  return {id, u.categories()};
}

inline json optional_number(const std::optional<double>& v) { return v ? json(round_significant(*v, 9)) : json(); }

inline json counts_json(const BranchCounts& c) {
  return json{{"positive", c.positive},
              {"partial", c.partial},
              {"pseudo", c.pseudo},
              {"background", c.background},
              {"ignored", c.ignored}};
}

inline json rounded_vector(const std::vector<double>& v) {
  json arr = json::array();
  for (double x : v) arr.push_back(round_significant(x, 9));
  return arr;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// validate

/// Detects the kind of `path` (or uses `kind` when not "auto") and runs the
/// full loader on it. Prints a one-line JSON summary.
inline Outcome validate(const std::string& path, const std::string& kind = "auto", bool strict = false) {
  Outcome out;
  const LoadOptions opts{strict};
  std::string k = kind;
  json summary;
  auto ends_with = [&](const std::string& suffix) {
    return path.size() >= suffix.size() && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0;
  };

  if (k == "batches" || (k == "auto" && ends_with(".jsonl"))) {
    k = "batches";
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open '" + path + "' for reading");
    BatchReader reader(in, opts);
    ProposalBatch b;
    std::size_t batches = 0, proposals = 0;
    while (reader.next(b)) {
      ++batches;
      proposals += b.proposals.size();
    }
    summary = json{{"batches", batches}, {"proposals", proposals}};
  } else {
    const json doc = parse_json_text(read_text_file(path), path);
    if (k == "auto") {
      if (!doc.is_object()) fail(ErrorKind::validation, "'" + path + "' is not a JSON object");
      if (doc.contains("annotations"))
        k = "dataset";
      else if (doc.contains("detections"))
        k = "detections";
      else if (doc.contains("groups"))
        k = "alias";
      else if (doc.contains("background_id"))
        k = "unified";
      else
        fail(ErrorKind::validation, "cannot tell what kind of file '" + path + "' is");
    }
    if (k == "dataset") {
      const auto ds = parse_dataset(doc, opts, &out.diag);
      summary = json{{"dataset_id", ds.space.dataset_id},
                     {"categories", ds.space.categories.size()},
                     {"images", ds.images.size()},
                     {"annotations", ds.annotations.size()}};
    } else if (k == "detections") {
      const auto ds = parse_detections(doc, opts, &out.diag);
      summary = json{{"dataset_id", ds.space.dataset_id},
                     {"categories", ds.space.categories.size()},
                     {"images", ds.images.size()},
                     {"detections", ds.detections.size()}};
    } else if (k == "alias") {
      summary = json{{"groups", parse_alias_map(doc).groups.size()}};
    } else if (k == "unified") {
      const auto u = parse_unified(doc);
      summary = json{{"categories", u.size()}, {"datasets", u.dataset_ids().size()}};
    } else {
      fail(ErrorKind::configuration, "unknown file kind '" + kind + "'");
    }
  }
  json report{{"ok", true}, {"kind", k}, {"counts", summary}, {"warnings", out.diag.warnings}};
  out.stdout_text = report.dump() + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// unify / ablate / mix

inline Outcome unify(const std::vector<std::string>& space_paths, const std::optional<std::string>& alias_path,
                     const std::string& out_path) {
  std::vector<DatasetLabelSpace> spaces;
  for (const auto& p : space_paths) spaces.push_back(load_label_space(p));
  const auto u = build_unified(spaces, detail::load_aliases(alias_path));
  Outcome out;
  out.files.push_back({out_path, dump_unified(u)});
  return out;
}

inline Outcome ablate(const std::string& dataset_path, const std::string& remove_path, const std::string& out_path,
                      bool strict = false) {
  Outcome out;
  const auto ds = load_dataset(dataset_path, LoadOptions{strict}, &out.diag);
  const auto names = detail::read_name_list(remove_path);
  const auto result = unidet::ablate(ds, std::set<std::string>(names.begin(), names.end()), &out.diag);
  out.files.push_back({out_path, dump_dataset(result)});
  return out;
}

/// Pools test sets. Without `unified_path` the sets must share one category
/// list; with it, each set is first relabelled into the unified space.
inline Outcome mix(const std::vector<std::string>& set_paths, const std::optional<std::string>& unified_path,
                   const std::string& out_path, const std::string& mixed_id = "mixed", bool strict = false) {
  Outcome out;
  std::vector<Dataset> sets;
  for (const auto& p : set_paths) sets.push_back(load_dataset(p, LoadOptions{strict}, &out.diag));
  if (unified_path) {
    const auto u = load_unified(*unified_path);
    for (auto& s : sets) {
      for (auto& a : s.annotations) a.category = u.to_unified(s.space.dataset_id, a.category);
      s.space.categories = u.categories();
    }
  }
  out.files.push_back({out_path, dump_dataset(mix_testsets(sets, mixed_id))});
  return out;
}

// ---------------------------------------------------------------------------
// gen-pgt / merge-detections

struct GenPgtArgs {
  std::string target;
  std::vector<std::string> sources;
  std::optional<std::string> alias;
  std::optional<std::string> unified;
  std::vector<std::string> spaces;  // extra label spaces, e.g. the target's
  double floor = 0.05;
  std::string out;
  bool strict = false;
};

inline Outcome gen_pgt(const GenPgtArgs& args) {
  Outcome out;
  std::vector<DetectionSet> sets;
  for (const auto& p : args.sources) sets.push_back(load_detections(p, LoadOptions{args.strict}, &out.diag));

  UnifiedLabelSpace u;
  if (args.unified) {
    u = load_unified(*args.unified);
  } else {
    std::vector<DatasetLabelSpace> spaces;
    for (const auto& s : sets) spaces.push_back(s.space);
    for (const auto& p : args.spaces) spaces.push_back(load_label_space(p));
    u = build_unified(spaces, detail::load_aliases(args.alias));
  }
  if (!u.has_dataset(args.target))
    fail(ErrorKind::configuration,
         "target dataset '" + args.target + "' is not in the label space; pass it with --unified or --spaces");

  std::vector<HeadDetections> heads;
  std::vector<const std::vector<ImageRecord>*> images;
  for (const auto& s : sets) {
    heads.push_back({s.space.dataset_id, s.detections});
    images.push_back(&s.images);
  }
  DetectionSet pgt;
  pgt.space = detail::unified_space_record(u, "unified");
  pgt.images = detail::union_images(images);
  pgt.detections = generate_pgt(args.target, u, heads, args.floor);
  out.files.push_back({args.out, dump_detections(pgt)});
  return out;
}

struct MergeArgs {
  std::vector<std::string> heads;
  std::optional<std::string> alias;
  NMSConfig nms;
  unsigned threads = 1;
  std::string out;
  bool strict = false;
};

inline Outcome merge(const MergeArgs& args) {
  Outcome out;
  std::vector<DetectionSet> sets;
  for (const auto& p : args.heads) sets.push_back(load_detections(p, LoadOptions{args.strict}, &out.diag));
  std::vector<DatasetLabelSpace> spaces;
  for (const auto& s : sets) spaces.push_back(s.space);
  const auto u = build_unified(spaces, detail::load_aliases(args.alias));

  std::vector<HeadDetections> heads;
  std::vector<const std::vector<ImageRecord>*> images;
  for (const auto& s : sets) {
    heads.push_back({s.space.dataset_id, s.detections});
    images.push_back(&s.images);
  }
  DetectionSet merged;
  merged.space = detail::unified_space_record(u, "merged");
  merged.images = detail::union_images(images);
  merged.detections = merge_detections(heads, u, args.nms, args.threads);
  out.files.push_back({args.out, dump_detections(merged)});
  return out;
}

// ---------------------------------------------------------------------------
// loss

struct LossArgs {
  std::string batches;
  std::string unified;
  LossMode mode = LossMode::pseudo;
  MatchConfig match;
  LossConfig loss;
  unsigned threads = 1;
  std::string out;
  bool strict = false;
};

inline json proposal_json(const ProposalLoss& p) {
  json targets = json::array();
  for (const auto& t : p.targets) targets.push_back(json::array({t.category, round_significant(t.weight, 9)}));
  json o{{"branch", to_string(p.branch)},
         {"loss", round_significant(p.loss, 9)},
         {"cls_loss", round_significant(p.cls_loss, 9)},
         {"reg_loss", round_significant(p.reg_loss, 9)},
         {"grad", detail::rounded_vector(p.grad)},
         {"targets", std::move(targets)}};
  if (p.reg_grad) o["reg_grad"] = detail::rounded_vector({p.reg_grad->begin(), p.reg_grad->end()});
  return o;
}

/// batch_loss over a JSON-lines stream, processed in blocks so memory stays
/// bounded by the block size plus the report. Batches are evaluated in
/// parallel and reduced in file order.
inline Outcome loss(const LossArgs& args, std::size_t block = 1024) {
  check_compatible(args.match, args.loss);
  const auto u = load_unified(args.unified);
  std::ifstream in(args.batches, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + args.batches + "' for reading");
  BatchReader reader(in, LoadOptions{args.strict});

  std::string records;
  BranchCounts counts;
  double sum = 0.0;
  std::size_t n_batches = 0;
  std::vector<ProposalBatch> pending;
  std::vector<std::size_t> lines;

  auto flush = [&] {
    std::vector<LossReport> reports(pending.size());
    parallel_for(pending.size(), args.threads, [&](std::size_t i) {
      try {
        reports[i] = batch_loss(pending[i], u, args.match, args.loss, args.mode);
      } catch (const Error& e) {
        Error located(e.kind(), "line " + std::to_string(lines[i]) + ": " + e.what());
        located.at_path(e.path());
        if (e.record_id()) located.with_record(*e.record_id());
        throw located;
      }
    });
    for (std::size_t i = 0; i < pending.size(); ++i) {
      const auto& r = reports[i];
      json proposals = json::array();
      for (const auto& p : r.per_proposal) proposals.push_back(proposal_json(p));
      const json rec{{"line", lines[i]},
                     {"image_id", pending[i].image_id},
                     {"dataset_id", pending[i].dataset_id},
                     {"total", round_significant(r.total, 9)},
                     {"sum", round_significant(r.sum, 9)},
                     {"counts", detail::counts_json(r.counts)},
                     {"proposals", std::move(proposals)}};
      records += (n_batches == 0 ? "    " : ",\n    ") + rec.dump();
      counts += r.counts;
      sum += r.sum;
      ++n_batches;
    }
    pending.clear();
    lines.clear();
  };

  ProposalBatch b;
  while (reader.next(b)) {
    pending.push_back(std::move(b));
    lines.push_back(reader.line_number());
    if (pending.size() >= block) flush();
  }
  flush();

  const auto n = counts.contributing();
  const json aggregate{{"batches", n_batches},
                       {"counts", detail::counts_json(counts)},
                       {"sum", round_significant(sum, 9)},
                       {"total", round_significant(n == 0 ? 0.0 : sum / static_cast<double>(n), 9)}};
  const json config{{"mode", to_string(args.mode)},
                    {"variant", to_string(args.loss.variant)},
                    {"lambda_me", args.loss.lambda_me},
                    {"gamma", to_string(args.loss.gamma)},
                    {"kappa_ignore", args.loss.kappa_ignore},
                    {"epsilon", args.loss.epsilon},
                    {"with_regression", args.loss.with_regression},
                    {"tau", args.match.tau},
                    {"kappa_bg", args.match.kappa_bg},
                    {"force_match_gt", args.match.force_match_gt}};
  // same layout as the other canonical documents: keys sorted, one batch per line
  std::string text = "{\n  \"aggregate\": " + aggregate.dump() + ",\n  \"batches\": ";
  text += n_batches == 0 ? "[]" : "[\n" + records + "\n  ]";
  text += ",\n  \"config\": " + config.dump() + "\n}\n";

  Outcome out;
  out.files.push_back({args.out, std::move(text)});
  out.stdout_text = aggregate.dump() + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// eval-map / eval-pgt

struct EvalMapArgs {
  std::string dets;
  std::string gt;
  std::optional<std::string> alias;
  std::optional<std::string> unified;
  std::optional<std::string> views;
  EvalOptions options;
  std::optional<std::string> out;
  std::optional<std::string> table;
  bool strict = false;
};

inline std::vector<View> load_views(const std::string& path) {
  const json doc = parse_json_text(read_text_file(path), path);
  using namespace unidet::detail;
  object_at(doc, "$");
  check_keys(doc, {"views"}, "$", true);
  const json& arr = array_at(required(doc, "views", "$"), "$.views");
  std::vector<View> views;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto p = element("$.views", i);
    const json& o = object_at(arr[i], p);
    check_keys(o, {"name", "sources", "categories"}, p, true);
    View v;
    v.name = as_string(required(o, "name", p), member(p, "name"));
    for (const char* key : {"sources", "categories"}) {
      if (!o.contains(key)) continue;
      const auto kp = member(p, key);
      const json& list = array_at(o[key], kp);
      auto& dest = std::string(key) == "sources" ? v.sources : v.categories;
      for (std::size_t k = 0; k < list.size(); ++k) dest.push_back(as_string(list[k], element(kp, k)));
    }
    views.push_back(std::move(v));
  }
  return views;
}

inline std::string format_table(const EvalReport& report, const UnifiedLabelSpace& u) {
  std::set<int> rows;
  for (const auto& v : report.views)
    for (const auto& [c, res] : v.per_class)
      if (res.ap) rows.insert(c);
  std::size_t first = 8;
  for (int c : rows) first = std::max(first, u.name(c).size());
  std::vector<std::size_t> widths;
  for (const auto& v : report.views) widths.push_back(std::max<std::size_t>(6, v.name.size()));

  auto cell = [](const std::optional<double>& ap) {
    if (!ap) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * *ap);
    return std::string(buf);
  };
  auto pad_left = [](const std::string& s, std::size_t w) { return std::string(w - std::min(w, s.size()), ' ') + s; };
  auto pad_right = [](const std::string& s, std::size_t w) { return s + std::string(w - std::min(w, s.size()), ' '); };

  std::string text = pad_right("category", first);
  for (std::size_t i = 0; i < report.views.size(); ++i) text += "  " + pad_left(report.views[i].name, widths[i]);
  text += "\n";
  for (int c : rows) {
    text += pad_right(u.name(c), first);
    for (std::size_t i = 0; i < report.views.size(); ++i) {
      const auto& pc = report.views[i].per_class;
      auto it = pc.find(c);
      text += "  " + pad_left(cell(it == pc.end() ? std::nullopt : it->second.ap), widths[i]);
    }
    text += "\n";
  }
  text += pad_right("mAP", first);
  for (std::size_t i = 0; i < report.views.size(); ++i) text += "  " + pad_left(cell(report.views[i].map), widths[i]);
  text += "\n";
  return text;
}

inline json eval_report_json(const EvalReport& report, const UnifiedLabelSpace& u) {
  json views = json::array();
  for (const auto& v : report.views) {
    json classes = json::array();
    for (const auto& [c, res] : v.per_class)
      classes.push_back(json{{"id", c},
                             {"category", u.name(c)},
                             {"ap", detail::optional_number(res.ap)},
                             {"num_gt", res.curve.num_gt},
                             {"tp", res.curve.tp},
                             {"fp", res.curve.fp}});
    views.push_back(json{{"name", v.name},
                         {"map", detail::optional_number(v.map)},
                         {"num_images", v.num_images},
                         {"per_class", std::move(classes)}});
  }
  return json{{"iou_threshold", report.iou_threshold}, {"interp", to_string(report.interp)}, {"views", std::move(views)}};
}

/// Category mapping from `space` into `u`: either `space` lists exactly the
/// unified categories (merged detections, mixed test sets) or it is one of
/// the datasets `u` was built from.
inline std::map<int, int> mapping_into(const UnifiedLabelSpace& u, const DatasetLabelSpace& space) {
  std::map<int, int> m;
  if (space.categories == u.categories()) {
    for (const auto& c : space.categories) m[c.id] = c.id;
  } else if (u.has_dataset(space.dataset_id)) {
    for (const auto& c : space.categories) m[c.id] = u.to_unified(space.dataset_id, c.id);
  } else {
    fail(ErrorKind::configuration, "'" + space.dataset_id +
                                       "' is neither part of the unified label space nor uses its category list");
  }
  return m;
}

/// Detections and ground truth are brought into one unified space. With
/// `unified` both files are mapped into it; otherwise files sharing a
/// dataset_id must use the same categories, and different datasets are
/// unified with the alias file.
inline Outcome eval_map(const EvalMapArgs& args) {
  Outcome out;
  auto gt = load_dataset(args.gt, LoadOptions{args.strict}, &out.diag);
  auto dets = load_detections(args.dets, LoadOptions{args.strict}, &out.diag);
  UnifiedLabelSpace u;
  if (args.unified) {
    u = load_unified(*args.unified);
    const auto gm = mapping_into(u, gt.space);
    const auto dm = mapping_into(u, dets.space);
    for (auto& a : gt.annotations) a.category = gm.at(a.category);
    for (auto& d : dets.detections) d.category = dm.at(d.category);
  } else if (gt.space.dataset_id == dets.space.dataset_id) {
    if (gt.space.categories != dets.space.categories)
      fail(ErrorKind::configuration, "detections and ground truth share dataset_id '" + gt.space.dataset_id +
                                         "' but list different categories");
    u = build_unified({gt.space}, detail::load_aliases(args.alias));
    for (auto& d : dets.detections) d.category = u.to_unified(gt.space.dataset_id, d.category);
  } else {
    u = build_unified({gt.space, dets.space}, detail::load_aliases(args.alias));
    for (auto& d : dets.detections) d.category = u.to_unified(dets.space.dataset_id, d.category);
  }
  if (!args.unified)
    for (auto& a : gt.annotations) a.category = u.to_unified(gt.space.dataset_id, a.category);

  const auto views = args.views ? load_views(*args.views) : std::vector<View>{};
  const auto report = evaluate(dets.detections, gt.images, gt.annotations, u, views, args.options, gt.space.dataset_id);
  const auto table = format_table(report, u);
  if (args.out) out.files.push_back({*args.out, unidet::detail::canonical_document(eval_report_json(report, u))});
  if (args.table) out.files.push_back({*args.table, table});
  out.stdout_text = table;
  return out;
}

struct EvalPgtArgs {
  std::string pgt;
  std::string gt;
  double iou_threshold = 0.5;
  std::vector<double> score_thresholds{0.0};
  std::optional<std::string> classes;
  std::optional<std::string> out;
  bool strict = false;
};

/// Ground-truth categories are matched to the pseudo-label categories by
/// normalized name; categories absent from the pseudo-label file are left
/// out (they are never pseudo-labelled). `classes` narrows both sides.
inline Outcome eval_pgt(const EvalPgtArgs& args) {
  Outcome out;
  const auto pgt = load_detections(args.pgt, LoadOptions{args.strict}, &out.diag);
  const auto gt = load_dataset(args.gt, LoadOptions{args.strict}, &out.diag);

  std::set<std::string> keep;
  if (args.classes) {
    for (const auto& n : detail::read_name_list(*args.classes)) {
      const auto norm = normalize_name(n);
      if (pgt.space.find_name(norm) == nullptr)
        fail(ErrorKind::configuration, "class '" + n + "' is not in the pseudo-label file");
      keep.insert(norm);
    }
  }
  auto wanted = [&](const std::string& name) { return keep.empty() || keep.count(normalize_name(name)) != 0; };

  std::map<int, int> gt_to_pgt;
  std::vector<std::string> dropped;
  for (const auto& c : gt.space.categories) {
    const auto* hit = pgt.space.find_name(c.name);
    if (hit == nullptr)
      dropped.push_back(normalize_name(c.name));
    else if (wanted(c.name))
      gt_to_pgt[c.id] = hit->id;
  }
  std::vector<Annotation> ref;
  for (const auto& a : gt.annotations) {
    auto it = gt_to_pgt.find(a.category);
    if (it == gt_to_pgt.end()) continue;
    Annotation r = a;
    r.category = it->second;
    ref.push_back(r);
  }
  std::vector<Detection> boxes;
  for (const auto& d : pgt.detections)
    if (wanted(pgt.space.find_id(d.category)->name)) boxes.push_back(d);

  json points = json::array();
  for (double thr : args.score_thresholds) {
    const auto q = eval_pgt_quality(boxes, ref, args.iou_threshold, thr);
    if (q.recall_undefined) warn(&out.diag, "no reference boxes: recall reported as 1");
    points.push_back(json{{"score_threshold", thr},
                          {"precision", round_significant(q.precision, 9)},
                          {"recall", round_significant(q.recall, 9)},
                          {"tp", q.tp},
                          {"fp", q.fp},
                          {"num_gt", q.num_gt},
                          {"precision_undefined", q.precision_undefined},
                          {"recall_undefined", q.recall_undefined}});
  }
  const json report{{"iou_threshold", args.iou_threshold},
                    {"points", std::move(points)},
                    {"categories_without_pseudo_labels", dropped}};
  const auto text = unidet::detail::canonical_document(report);
  if (args.out)
    out.files.push_back({*args.out, text});
  else
    out.stdout_text = text;
  return out;
}

}  // namespace unidet::cli
