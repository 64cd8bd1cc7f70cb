#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "unidet/annotations.hpp"
#include "unidet/error.hpp"
#include "unidet/geometry.hpp"

namespace unidet {

struct MatchConfig {
  double tau = 0.5;         // IoU needed to associate a proposal with a box
  double kappa_bg = 0.05;   // pseudo boxes must score above this
  bool force_match_gt = true;

  void validate() const {
    require(tau > 0.0 && tau < 1.0, ErrorKind::configuration, "tau must lie in (0,1)");
    require(kappa_bg >= 0.0 && kappa_bg <= 1.0, ErrorKind::configuration, "kappa_bg must lie in [0,1]");
  }
};

enum class ProposalTag {
  positive,    // matched to a ground-truth box
  pseudo,      // unmatched, with at least one qualifying pseudo box
  background,  // unmatched, nothing qualifies
};

inline const char* to_string(ProposalTag tag) {
  switch (tag) {
    case ProposalTag::positive: return "positive";
    case ProposalTag::pseudo: return "pseudo";
    case ProposalTag::background: return "background";
  }
  return "unknown";
}

struct GtMatch {
  std::vector<std::pair<std::size_t, std::size_t>> positives;  // (proposal, gt), ascending proposal
  std::vector<std::size_t> unmatched;                          // the ambiguous set, ascending
};

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> positives;
  std::vector<std::size_t> unmatched;
  /// proposal index -> ascending pseudo-box indices; keys are a subset of `unmatched`.
  std::map<std::size_t, std::vector<std::size_t>> pseudo_matches;
  std::vector<std::size_t> background;
  std::vector<ProposalTag> tags;  // one per proposal
};

/// Standard assignment. A proposal is positive when its best IoU exceeds tau
/// (argmax gt, lowest index on ties). With force_match_gt, every gt left
/// without a proposal then claims its best-overlapping proposal (lowest
/// index on ties) provided the overlap is non-zero, taking it over from any
/// earlier assignment. Gts are visited in index order.
inline GtMatch match_gt(std::span<const BBox> proposals, std::span<const BBox> gt, const MatchConfig& cfg) {
  cfg.validate();
  const IoUMatrix s = iou_matrix(proposals, gt);
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> assigned(proposals.size(), kNone);

  for (std::size_t l = 0; l < proposals.size(); ++l) {
    double best = 0.0;
    std::size_t arg = kNone;
    for (std::size_t k = 0; k < gt.size(); ++k) {
      if (arg == kNone || s(l, k) > best) {
        best = s(l, k);
        arg = k;
      }
    }
    if (arg != kNone && best > cfg.tau) assigned[l] = arg;
  }

  if (cfg.force_match_gt) {
    std::vector<bool> covered(gt.size(), false);
    for (auto a : assigned)
      if (a != kNone) covered[a] = true;
    for (std::size_t k = 0; k < gt.size(); ++k) {
      if (covered[k]) continue;
      double best = 0.0;
      std::size_t arg = kNone;
      for (std::size_t l = 0; l < proposals.size(); ++l) {
        if (s(l, k) > best) {
          best = s(l, k);
          arg = l;
        }
      }
      if (arg == kNone) continue;  // no proposal touches this gt
      assigned[arg] = k;
      covered[k] = true;
    }
  }

  GtMatch out;
  for (std::size_t l = 0; l < proposals.size(); ++l) {
    if (assigned[l] != kNone)
      out.positives.emplace_back(l, assigned[l]);
    else
      out.unmatched.push_back(l);
  }
  return out;
}

inline GtMatch match_gt(std::span<const BBox> proposals, std::span<const Annotation> gt, const MatchConfig& cfg) {
  std::vector<BBox> boxes;
  boxes.reserve(gt.size());
  for (const auto& a : gt) boxes.push_back(a.box);
  return match_gt(proposals, std::span<const BBox>(boxes), cfg);
}

/// For each unmatched proposal, every pseudo box with IoU > tau and score >
/// kappa_bg. All qualifying boxes are kept, not just the closest one.
inline std::vector<std::vector<std::size_t>> match_pseudo(std::span<const BBox> unmatched,
                                                          std::span<const Detection> pgt, const MatchConfig& cfg) {
  cfg.validate();
  std::vector<BBox> boxes;
  boxes.reserve(pgt.size());
  for (const auto& d : pgt) {
    require(d.score >= 0.0 && d.score <= 1.0, ErrorKind::validation, "pseudo box score outside [0,1]");
    boxes.push_back(d.box);
  }
  const IoUMatrix s = iou_matrix(unmatched, boxes);
  std::vector<std::vector<std::size_t>> out(unmatched.size());
  for (std::size_t l = 0; l < unmatched.size(); ++l)
    for (std::size_t k = 0; k < pgt.size(); ++k)
      if (s(l, k) > cfg.tau && pgt[k].score > cfg.kappa_bg) out[l].push_back(k);
  return out;
}

/// Ground-truth matching first, then pseudo matching on what is left.
inline MatchResult match(std::span<const BBox> proposals, std::span<const Annotation> gt,
                         std::span<const Detection> pgt, const MatchConfig& cfg) {
  GtMatch g = match_gt(proposals, gt, cfg);
  MatchResult r;
  r.tags.assign(proposals.size(), ProposalTag::background);
  for (const auto& [l, k] : g.positives) r.tags[l] = ProposalTag::positive;

  std::vector<BBox> rest;
  rest.reserve(g.unmatched.size());
  for (auto l : g.unmatched) rest.push_back(proposals[l]);
  auto pm = match_pseudo(rest, pgt, cfg);
  for (std::size_t i = 0; i < g.unmatched.size(); ++i) {
    const auto l = g.unmatched[i];
    if (pm[i].empty()) {
      r.background.push_back(l);
    } else {
      r.tags[l] = ProposalTag::pseudo;
      r.pseudo_matches.emplace(l, std::move(pm[i]));
    }
  }
  r.positives = std::move(g.positives);
  r.unmatched = std::move(g.unmatched);
  return r;
}

}  // namespace unidet
