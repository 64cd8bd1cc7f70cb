#pragma once

// Classification losses over the unified label space and their analytic
// gradients with respect to the pre-softmax logits.
//
//  * ce_loss       standard cross-entropy, for proposals matched to ground truth
//  * partial_loss  losses for proposals whose label is only known to lie in
//                  L* = (L_u \ L_i) u {background}:
//                    sum     -log(sum_{c in L*} p_c)
//                    sum_me  sum + lambda * entropy of p restricted to L*
//                    max     -log(max_{c in L*} p_c)
//  * pseudo_loss   Gamma-weighted mean of cross-entropies against every
//                  matched pseudo box, normalized by Z = max(sum Gamma, eps)
//  * regression_loss  smooth-L1 on the usual (dx/w, dy/h, log w, log h) deltas
//
// Every log argument is clamped at LossConfig::clamp_floor.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "unidet/annotations.hpp"
#include "unidet/error.hpp"
#include "unidet/geometry.hpp"
#include "unidet/labelspace.hpp"
#include "unidet/matching.hpp"

namespace unidet {

enum class PartialVariant { sum, sum_me, max };
enum class GammaKind { hard, soft };
enum class LossMode { naive_bg, partial, pseudo };

inline const char* to_string(PartialVariant v) {
  switch (v) {
    case PartialVariant::sum: return "sum";
    case PartialVariant::sum_me: return "sum_me";
    case PartialVariant::max: return "max";
  }
  return "unknown";
}
inline const char* to_string(GammaKind g) { return g == GammaKind::hard ? "hard" : "soft"; }
inline const char* to_string(LossMode m) {
  switch (m) {
    case LossMode::naive_bg: return "naive_bg";
    case LossMode::partial: return "partial";
    case LossMode::pseudo: return "pseudo";
  }
  return "unknown";
}

struct LossConfig {
  PartialVariant variant = PartialVariant::sum;
  double lambda_me = 0.1;  // arbitrary default; tune per setup
  GammaKind gamma = GammaKind::hard;
  double kappa_ignore = 0.7;
  double epsilon = 1e-8;
  bool with_regression = false;
  double clamp_floor = 1e-12;

  void validate() const {
    require(lambda_me >= 0.0, ErrorKind::configuration, "lambda_me must be >= 0");
    require(kappa_ignore >= 0.0 && kappa_ignore <= 1.0, ErrorKind::configuration, "kappa_ignore must lie in [0,1]");
    require(epsilon > 0.0, ErrorKind::configuration, "epsilon must be > 0");
    require(clamp_floor > 0.0 && clamp_floor < 1.0, ErrorKind::configuration, "clamp_floor must lie in (0,1)");
  }
};

/// Threshold ordering shared by matching and loss configuration.
inline void check_compatible(const MatchConfig& mcfg, const LossConfig& lcfg) {
  mcfg.validate();
  lcfg.validate();
  require(lcfg.kappa_ignore >= mcfg.kappa_bg, ErrorKind::configuration, "kappa_ignore must be >= kappa_bg");
}

/// Softmax of a logit vector, computed with the max subtracted.
class ProbVector {
 public:
  explicit ProbVector(std::vector<double> logits) : logits_(std::move(logits)) {
    require(!logits_.empty(), ErrorKind::contract, "empty logit vector");
    for (double z : logits_) require(std::isfinite(z), ErrorKind::validation, "non-finite logit");
    const double m = *std::max_element(logits_.begin(), logits_.end());
    probs_.resize(logits_.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits_.size(); ++i) {
      probs_[i] = std::exp(logits_[i] - m);
      total += probs_[i];
    }
    for (auto& p : probs_) p /= total;
  }

  std::size_t size() const { return logits_.size(); }
  const std::vector<double>& logits() const { return logits_; }
  const std::vector<double>& probs() const { return probs_; }
  double operator[](std::size_t c) const { return probs_[c]; }

  /// p_c / sum_{k in subset} p_k for each c in `subset`, evaluated from the
  /// logits so it stays finite when the subset mass underflows.
  std::vector<double> conditional(std::span<const int> subset) const {
    double m = logits_[static_cast<std::size_t>(subset.front())];
    for (int c : subset) m = std::max(m, logits_[static_cast<std::size_t>(c)]);
    std::vector<double> q(subset.size());
    double total = 0.0;
    for (std::size_t i = 0; i < subset.size(); ++i) {
      q[i] = std::exp(logits_[static_cast<std::size_t>(subset[i])] - m);
      total += q[i];
    }
    for (auto& v : q) v /= total;
    return q;
  }

 private:
  std::vector<double> logits_;
  std::vector<double> probs_;
};

struct LossValue {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d logits
};

namespace detail {

inline void check_class(const ProbVector& p, int c, const char* what) {
  require(c >= 0 && static_cast<std::size_t>(c) < p.size(), ErrorKind::contract,
          std::string(what) + " " + std::to_string(c) + " outside the " + std::to_string(p.size()) + "-class space");
}

inline double clamped_log(double x, double floor) { return std::log(std::max(x, floor)); }

}  // namespace detail

/// -log p_target; gradient p - onehot(target).
inline LossValue ce_loss(const ProbVector& p, int target, double clamp_floor = 1e-12) {
  detail::check_class(p, target, "target");
  LossValue out;
  out.loss = -detail::clamped_log(p[static_cast<std::size_t>(target)], clamp_floor);
  out.grad = p.probs();
  out.grad[static_cast<std::size_t>(target)] -= 1.0;
  return out;
}

/// Loss for a proposal whose label is only known to be in `ambiguous`
/// (ascending ids, background included).
inline LossValue partial_loss(const ProbVector& p, std::span<const int> ambiguous, const LossConfig& cfg) {
  require(!ambiguous.empty(), ErrorKind::contract, "ambiguous set is empty");
  for (int c : ambiguous) detail::check_class(p, c, "ambiguous class");
  const auto& probs = p.probs();
  LossValue out;

  if (cfg.variant == PartialVariant::max) {
    int arg = ambiguous.front();
    for (int c : ambiguous)
      if (probs[static_cast<std::size_t>(c)] > probs[static_cast<std::size_t>(arg)] ||
          (probs[static_cast<std::size_t>(c)] == probs[static_cast<std::size_t>(arg)] && c < arg))
        arg = c;
    return ce_loss(p, arg, cfg.clamp_floor);
  }

  // -log S with S = sum over L*; d/dz_j = p_j - [j in L*] p_j / S.
  double mass = 0.0;
  for (int c : ambiguous) mass += probs[static_cast<std::size_t>(c)];
  out.loss = -detail::clamped_log(mass, cfg.clamp_floor);
  out.grad = probs;
  const auto cond = p.conditional(ambiguous);
  for (std::size_t i = 0; i < ambiguous.size(); ++i) out.grad[static_cast<std::size_t>(ambiguous[i])] -= cond[i];

  if (cfg.variant == PartialVariant::sum_me && cfg.lambda_me > 0.0) {
    // H = -sum_{c in L*} p_c log p_c
    // dH/dz_j = -[j in L*] p_j d_j + p_j * sum_{c in L*} p_c d_c, d_c = d(p log p)/dp at p_c
    double entropy = 0.0;
    double weighted = 0.0;
    std::vector<double> dlog(ambiguous.size());
    for (std::size_t i = 0; i < ambiguous.size(); ++i) {
      const double pc = probs[static_cast<std::size_t>(ambiguous[i])];
      const double lp = detail::clamped_log(pc, cfg.clamp_floor);
      entropy -= pc * lp;
      dlog[i] = pc >= cfg.clamp_floor ? lp + 1.0 : lp;
      weighted += pc * dlog[i];
    }
    out.loss += cfg.lambda_me * entropy;
    for (std::size_t j = 0; j < probs.size(); ++j) out.grad[j] += cfg.lambda_me * probs[j] * weighted;
    for (std::size_t i = 0; i < ambiguous.size(); ++i) {
      const auto j = static_cast<std::size_t>(ambiguous[i]);
      out.grad[j] -= cfg.lambda_me * probs[j] * dlog[i];
    }
  }
  return out;
}

/// Gamma: hard keeps scores strictly above kappa_ignore with weight 1,
/// soft uses the score itself.
inline double pseudo_weight(double score, const LossConfig& cfg) {
  require(score >= 0.0 && score <= 1.0, ErrorKind::validation, "pseudo box score outside [0,1]");
  if (cfg.gamma == GammaKind::soft) return score;
  return score > cfg.kappa_ignore ? 1.0 : 0.0;
}

struct PseudoLossValue {
  double loss = 0.0;
  std::vector<double> grad;
  std::vector<double> weights;  // Gamma(s_k) / Z per matched box
  double gamma_sum = 0.0;       // sum of Gamma before normalization

  /// Every matched box had zero weight; the proposal contributes nothing.
  bool ignored() const { return gamma_sum <= 0.0; }
};

/// (1/Z) sum_k Gamma(s_k) CE(p, c_k) over the matched pseudo boxes.
inline PseudoLossValue pseudo_loss(const ProbVector& p, std::span<const Detection> matched, const LossConfig& cfg) {
  require(!matched.empty(), ErrorKind::contract,
          "pseudo_loss needs at least one matched pseudo box; unmatched proposals take the background loss");
  PseudoLossValue out;
  out.grad.assign(p.size(), 0.0);
  std::vector<double> gamma(matched.size());
  for (std::size_t k = 0; k < matched.size(); ++k) {
    detail::check_class(p, matched[k].category, "pseudo box category");
    gamma[k] = pseudo_weight(matched[k].score, cfg);
    out.gamma_sum += gamma[k];
  }
  const double z = std::max(out.gamma_sum, cfg.epsilon);
  out.weights.resize(matched.size());
  double total = 0.0;
  for (std::size_t k = 0; k < matched.size(); ++k) {
    out.weights[k] = gamma[k] / z;
    if (gamma[k] == 0.0) continue;
    const auto ce = ce_loss(p, matched[k].category, cfg.clamp_floor);
    total += gamma[k] * ce.loss;
    for (std::size_t j = 0; j < p.size(); ++j) out.grad[j] += gamma[k] * ce.grad[j];
  }
  out.loss = total / z;
  for (auto& g : out.grad) g /= z;
  return out;
}

// ---------------------------------------------------------------------------
// box regression

/// (dx/w, dy/h, log(w_t/w), log(h_t/h)) of `target` relative to `anchor`.
inline std::array<double, 4> encode_box(const BBox& anchor, const BBox& target) {
  return {(target.center_x() - anchor.center_x()) / anchor.width(),
          (target.center_y() - anchor.center_y()) / anchor.height(), std::log(target.width() / anchor.width()),
          std::log(target.height() / anchor.height())};
}

inline double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

inline double smooth_l1_grad(double x) {
  if (x >= 1.0) return 1.0;
  if (x <= -1.0) return -1.0;
  return x;
}

struct RegressionValue {
  double loss = 0.0;
  /// d loss / d (x1, y1, x2, y2) of the proposal box.
  std::array<double, 4> grad_box{};
  /// d loss / d predicted delta, for a head that predicts an offset d
  /// applied to the proposal: loss(d) = w * sum smooth_l1(t - d), at d = 0.
  std::array<double, 4> grad_delta{};
};

inline RegressionValue regression_loss(const BBox& proposal, const BBox& target, double weight) {
  validate_box(proposal);
  validate_box(target);
  require(weight >= 0.0 && std::isfinite(weight), ErrorKind::contract, "regression weight must be >= 0");
  const auto t = encode_box(proposal, target);
  RegressionValue out;
  std::array<double, 4> g{};
  for (std::size_t i = 0; i < 4; ++i) {
    out.loss += weight * smooth_l1(t[i]);
    g[i] = weight * smooth_l1_grad(t[i]);
    out.grad_delta[i] = -g[i];
  }
  const double w = proposal.width(), h = proposal.height();
  // dt/dx1 = (t_x - 0.5)/w, dt/dx2 = -(t_x + 0.5)/w; dtw/dx1 = 1/w, dtw/dx2 = -1/w
  out.grad_box[0] = g[0] * (t[0] - 0.5) / w + g[2] / w;
  out.grad_box[2] = -g[0] * (t[0] + 0.5) / w - g[2] / w;
  out.grad_box[1] = g[1] * (t[1] - 0.5) / h + g[3] / h;
  out.grad_box[3] = -g[1] * (t[1] + 0.5) / h - g[3] / h;
  return out;
}

// ---------------------------------------------------------------------------
// per-image reduction

enum class Branch { positive, partial, pseudo, background, ignored };

inline const char* to_string(Branch b) {
  switch (b) {
    case Branch::positive: return "positive";
    case Branch::partial: return "partial";
    case Branch::pseudo: return "pseudo";
    case Branch::background: return "background";
    case Branch::ignored: return "ignored";
  }
  return "unknown";
}

struct ClassTarget {
  int category = 0;
  double weight = 1.0;
};

struct ProposalLoss {
  Branch branch = Branch::background;
  double loss = 0.0;  // classification + regression
  double cls_loss = 0.0;
  double reg_loss = 0.0;
  std::vector<double> grad;                    // w.r.t. logits
  std::optional<std::array<double, 4>> reg_grad;  // w.r.t. predicted deltas
  /// Classification targets with their weights; for partial losses the
  /// ambiguous set with weight 0 each (no single target).
  std::vector<ClassTarget> targets;
};

struct BranchCounts {
  std::size_t positive = 0;
  std::size_t partial = 0;
  std::size_t pseudo = 0;
  std::size_t background = 0;
  std::size_t ignored = 0;

  std::size_t contributing() const { return positive + partial + pseudo + background; }

  BranchCounts& operator+=(const BranchCounts& o) {
    positive += o.positive;
    partial += o.partial;
    pseudo += o.pseudo;
    background += o.background;
    ignored += o.ignored;
    return *this;
  }
  friend bool operator==(const BranchCounts&, const BranchCounts&) = default;
};

struct LossReport {
  double total = 0.0;  // mean over contributing (non-ignored) proposals
  double sum = 0.0;    // sum over contributing proposals
  BranchCounts counts;
  std::vector<ProposalLoss> per_proposal;
};

/// Sum of values in ascending order, so any permutation of the inputs gives
/// the same bits.
inline double ordered_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

/// Loss for one image's proposals. Ground truth claims proposals first;
/// what remains is handled according to `mode`:
///   naive_bg  cross-entropy against the unified background
///   partial   partial_loss over L* of the batch's dataset
///   pseudo    pseudo_loss over matched pseudo boxes, background CE otherwise
inline LossReport batch_loss(const ProposalBatch& batch, const UnifiedLabelSpace& u, const MatchConfig& mcfg,
                             const LossConfig& lcfg, LossMode mode) {
  check_compatible(mcfg, lcfg);
  const int classes = u.num_classes();
  const int bg = u.background_id();
  const auto annotated = u.mapped(batch.dataset_id);
  const auto ambiguous = ambiguous_set(u, batch.dataset_id);

  for (std::size_t i = 0; i < batch.proposals.size(); ++i)
    require(batch.proposals[i].logits.size() == static_cast<std::size_t>(classes), ErrorKind::validation,
            "proposal " + std::to_string(i) + " has " + std::to_string(batch.proposals[i].logits.size()) +
                " logits, expected " + std::to_string(classes));
  for (const auto& a : batch.gt) {
    if (!std::binary_search(annotated.begin(), annotated.end(), a.category))
      throw Error(ErrorKind::validation, "gt " + std::to_string(a.id) + " has category " + std::to_string(a.category) +
                                             " which is not annotated in dataset '" + batch.dataset_id + "'")
          .with_record(a.id);
  }
  std::span<const Detection> pgt;
  if (mode == LossMode::pseudo) {
    for (std::size_t k = 0; k < batch.pgt.size(); ++k) {
      const int c = batch.pgt[k].category;
      if (c == bg || !std::binary_search(ambiguous.begin(), ambiguous.end(), c))
        throw Error(ErrorKind::validation, "pseudo box " + std::to_string(k) + " has category " + std::to_string(c) +
                                               " outside the ambiguous set of dataset '" + batch.dataset_id + "'")
            .with_record(static_cast<std::int64_t>(k));
      require(batch.pgt[k].score >= 0.0 && batch.pgt[k].score <= 1.0, ErrorKind::validation,
              "pseudo box " + std::to_string(k) + " score outside [0,1]");
    }
    pgt = batch.pgt;
  }

  std::vector<BBox> boxes;
  boxes.reserve(batch.proposals.size());
  for (const auto& p : batch.proposals) boxes.push_back(p.box);
  const MatchResult m = match(boxes, batch.gt, pgt, mcfg);

  LossReport report;
  report.per_proposal.resize(boxes.size());
  auto background_ce = [&](ProposalLoss& out, const ProbVector& p) {
    auto ce = ce_loss(p, bg, lcfg.clamp_floor);
    out.branch = Branch::background;
    out.cls_loss = ce.loss;
    out.grad = std::move(ce.grad);
    out.targets = {{bg, 1.0}};
  };

  for (const auto& [l, k] : m.positives) {
    auto& out = report.per_proposal[l];
    const ProbVector p(batch.proposals[l].logits);
    auto ce = ce_loss(p, batch.gt[k].category, lcfg.clamp_floor);
    out.branch = Branch::positive;
    out.cls_loss = ce.loss;
    out.grad = std::move(ce.grad);
    out.targets = {{batch.gt[k].category, 1.0}};
    if (lcfg.with_regression) {
      const auto r = regression_loss(boxes[l], batch.gt[k].box, 1.0);
      out.reg_loss = r.loss;
      out.reg_grad = r.grad_delta;
    }
  }

  for (auto l : m.unmatched) {
    auto& out = report.per_proposal[l];
    const ProbVector p(batch.proposals[l].logits);
    if (mode == LossMode::naive_bg) {
      background_ce(out, p);
    } else if (mode == LossMode::partial) {
      auto pl = partial_loss(p, ambiguous, lcfg);
      out.branch = Branch::partial;
      out.cls_loss = pl.loss;
      out.grad = std::move(pl.grad);
      for (int c : ambiguous) out.targets.push_back({c, 0.0});
    } else {
      auto it = m.pseudo_matches.find(l);
      if (it == m.pseudo_matches.end()) {
        background_ce(out, p);
        continue;
      }
      std::vector<Detection> matched;
      for (auto k : it->second) matched.push_back(batch.pgt[k]);
      auto pl = pseudo_loss(p, matched, lcfg);
      out.grad = std::move(pl.grad);
      if (pl.ignored()) {
        out.branch = Branch::ignored;
        continue;
      }
      out.branch = Branch::pseudo;
      out.cls_loss = pl.loss;
      for (std::size_t i = 0; i < matched.size(); ++i)
        if (pl.weights[i] > 0.0) out.targets.push_back({matched[i].category, pl.weights[i]});
      if (lcfg.with_regression) {
        std::array<double, 4> g{};
        for (std::size_t i = 0; i < matched.size(); ++i) {
          if (pl.weights[i] == 0.0) continue;
          const auto r = regression_loss(boxes[l], matched[i].box, pl.weights[i]);
          out.reg_loss += r.loss;
          for (std::size_t d = 0; d < 4; ++d) g[d] += r.grad_delta[d];
        }
        out.reg_grad = g;
      }
    }
  }

  std::vector<double> contributions;
  for (auto& out : report.per_proposal) {
    out.loss = out.cls_loss + out.reg_loss;
    switch (out.branch) {
      case Branch::positive: ++report.counts.positive; break;
      case Branch::partial: ++report.counts.partial; break;
      case Branch::pseudo: ++report.counts.pseudo; break;
      case Branch::background: ++report.counts.background; break;
      case Branch::ignored: ++report.counts.ignored; continue;
    }
    contributions.push_back(out.loss);
  }
  report.sum = ordered_sum(contributions);
  const auto n = report.counts.contributing();
  report.total = n == 0 ? 0.0 : report.sum / static_cast<double>(n);
  return report;
}

}  // namespace unidet
