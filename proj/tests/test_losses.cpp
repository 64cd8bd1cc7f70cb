#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "unidet/losses.hpp"

using namespace unidet;

namespace {

LossConfig loss_config(PartialVariant v = PartialVariant::sum, GammaKind g = GammaKind::hard) {
  LossConfig c;
  c.variant = v;
  c.gamma = g;
  return c;
}

// logits whose softmax is exactly `probs` (up to rounding)
std::vector<double> logits_of(const std::vector<double>& probs) {
  std::vector<double> z;
  for (double p : probs) z.push_back(std::log(p));
  return z;
}

double ce_oracle(const std::vector<double>& z, int c) { return -std::log(oracle::softmax_at(z, static_cast<std::size_t>(c))); }

// L* as a random subset of the classes, always holding the last (background) id
std::vector<int> random_ambiguous(std::mt19937_64& rng, int classes) {
  std::vector<int> s;
  for (int c = 0; c + 1 < classes; ++c)
    if (rng() % 2) s.push_back(c);
  s.push_back(classes - 1);
  return s;
}

DatasetLabelSpace space(const std::string& id, const std::vector<std::string>& names) {
  DatasetLabelSpace s{id, {}};
  int next = 1;
  for (const auto& n : names) s.categories.push_back({next++, n});
  return s;
}

}  // namespace

TEST(ProbVector, SumsToOneAndStable) {
  const ProbVector p({1000.0, 999.0, -1000.0});
  double s = 0.0;
  for (double v : p.probs()) {
    EXPECT_GT(v, 0.0 - 1e-300);
    s += v;
  }
  EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_THROW(ProbVector({std::nan("")}), Error);
}

TEST(CeLoss, Examples) {
  const ProbVector sure({0.0, 50.0, 0.0});
  const auto a = ce_loss(sure, 1);
  EXPECT_NEAR(a.loss, 0.0, 1e-20);
  for (double g : a.grad) EXPECT_NEAR(g, 0.0, 1e-20);

  const ProbVector uniform({0.0, 0.0, 0.0, 0.0});
  for (int c = 0; c < 4; ++c) EXPECT_NEAR(ce_loss(uniform, c).loss, std::log(4.0), 1e-15);
  EXPECT_NEAR(ce_loss(uniform, 0).loss, 1.3863, 1e-4);
  EXPECT_THROW(ce_loss(uniform, 4), Error);
  EXPECT_THROW(ce_loss(uniform, -1), Error);
}

TEST(PartialLoss, Examples) {
  const auto cfg = loss_config();
  // all mass inside L*
  const ProbVector inside({-200.0, 3.0, 1.0});
  const std::vector<int> amb{1, 2};
  EXPECT_NEAR(partial_loss(inside, amb, cfg).loss, 0.0, 1e-15);

  const ProbVector uniform({0.0, 0.0, 0.0, 0.0});
  const std::vector<int> half{2, 3};
  EXPECT_NEAR(partial_loss(uniform, half, cfg).loss, -std::log(0.5), 1e-15);
  EXPECT_NEAR(partial_loss(uniform, half, cfg).loss, 0.6931, 1e-4);

  const ProbVector p(logits_of({0.1, 0.2, 0.3, 0.4}));
  const auto mx = partial_loss(p, half, loss_config(PartialVariant::max));
  EXPECT_NEAR(mx.loss, -std::log(0.4), 1e-12);
  EXPECT_NEAR(mx.loss, 0.9163, 1e-4);

  EXPECT_THROW(partial_loss(p, std::vector<int>{}, cfg), Error);
}

TEST(PartialLoss, MaxTiesRouteToLowestId) {
  const ProbVector p({1.0, 2.0, 2.0, 0.0});
  const std::vector<int> amb{1, 2, 3};
  const auto out = partial_loss(p, amb, loss_config(PartialVariant::max));
  EXPECT_LT(out.grad[1], 0.0);
  EXPECT_GT(out.grad[2], 0.0);
}

TEST(PartialLoss, SumWithOnlyBackgroundIsBackgroundCe) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 200; ++t) {
    const ProbVector p(oracle::random_logits(rng, 6));
    const std::vector<int> bg{5};
    const auto a = partial_loss(p, bg, loss_config());
    const auto b = ce_loss(p, 5);
    EXPECT_EQ(a.loss, b.loss);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(a.grad[j], b.grad[j], 1e-15);
  }
}

TEST(PartialLoss, ClampKeepsLossFinite) {
  const ProbVector p({800.0, 0.0, 0.0});
  const std::vector<int> amb{1, 2};
  const auto out = partial_loss(p, amb, loss_config(PartialVariant::sum_me));
  EXPECT_TRUE(std::isfinite(out.loss));
  EXPECT_NEAR(out.loss, -std::log(1e-12), 1e-9);
  for (double g : out.grad) EXPECT_TRUE(std::isfinite(g));
}

TEST(Gradients, CeMatchesFiniteDifferences) {
  std::mt19937_64 rng(100);
  for (int t = 0; t < 300; ++t) {
    const auto z = oracle::random_logits(rng, 2 + rng() % 10);
    const int c = static_cast<int>(rng() % z.size());
    const auto g = ce_loss(ProbVector(z), c).grad;
    const auto n = oracle::numeric_gradient([&](const std::vector<double>& x) { return ce_oracle(x, c); }, z);
    EXPECT_LT(oracle::relative_error(g, n), 1e-5);
  }
}

TEST(Gradients, PartialVariantsMatchFiniteDifferences) {
  std::mt19937_64 rng(101);
  for (auto variant : {PartialVariant::sum, PartialVariant::sum_me, PartialVariant::max}) {
    const auto cfg = loss_config(variant);
    for (int t = 0; t < 300; ++t) {
      const auto z = oracle::random_logits(rng, 3 + rng() % 10);
      const auto amb = random_ambiguous(rng, static_cast<int>(z.size()));
      if (variant == PartialVariant::max) {
        // stay away from ties between the two largest members of L*
        std::vector<double> v;
        for (int c : amb) v.push_back(z[static_cast<std::size_t>(c)]);
        std::sort(v.rbegin(), v.rend());
        if (v.size() > 1 && v[0] - v[1] < 1e-3) continue;
      }
      const auto g = partial_loss(ProbVector(z), amb, cfg).grad;
      const auto n = oracle::numeric_gradient(
          [&](const std::vector<double>& x) { return partial_loss(ProbVector(x), amb, cfg).loss; }, z);
      EXPECT_LT(oracle::relative_error(g, n), 1e-5) << to_string(variant);
    }
  }
}

TEST(Gradients, PartialSumAgainstIndependentFormula) {
  std::mt19937_64 rng(102);
  for (int t = 0; t < 200; ++t) {
    const auto z = oracle::random_logits(rng, 8);
    const auto amb = random_ambiguous(rng, 8);
    double mass = 0.0, ent = 0.0;
    for (int c : amb) {
      const double pc = oracle::softmax_at(z, static_cast<std::size_t>(c));
      mass += pc;
      ent -= pc * std::log(pc);
    }
    EXPECT_NEAR(partial_loss(ProbVector(z), amb, loss_config()).loss, -std::log(mass), 1e-12);
    auto me = loss_config(PartialVariant::sum_me);
    me.lambda_me = 0.3;
    EXPECT_NEAR(partial_loss(ProbVector(z), amb, me).loss, -std::log(mass) + 0.3 * ent, 1e-12);
  }
}

TEST(Gradients, PseudoMatchesFiniteDifferences) {
  std::mt19937_64 rng(103);
  std::uniform_real_distribution<double> score(0.06, 1.0);
  for (auto gamma : {GammaKind::hard, GammaKind::soft}) {
    const auto cfg = loss_config(PartialVariant::sum, gamma);
    for (int t = 0; t < 300; ++t) {
      const auto z = oracle::random_logits(rng, 6);
      std::vector<Detection> matched;
      for (std::size_t k = 0, n = 1 + rng() % 4; k < n; ++k)
        matched.push_back({1, static_cast<int>(rng() % 5), {0, 0, 1, 1}, score(rng)});
      const auto g = pseudo_loss(ProbVector(z), matched, cfg).grad;
      const auto n = oracle::numeric_gradient(
          [&](const std::vector<double>& x) { return pseudo_loss(ProbVector(x), matched, cfg).loss; }, z);
      EXPECT_LT(oracle::relative_error(g, n), 1e-5);
    }
  }
}

TEST(PseudoLoss, Examples) {
  const auto cfg = loss_config();
  const ProbVector half(logits_of({0.5, 0.25, 0.25}));
  const std::vector<Detection> one{{1, 0, {0, 0, 1, 1}, 0.9}};
  const auto a = pseudo_loss(half, one, cfg);
  EXPECT_NEAR(a.loss, -std::log(0.5), 1e-12);
  EXPECT_EQ(a.gamma_sum, 1.0);

  // the second box falls into the ignore band
  const ProbVector p({0.3, -0.2, 1.1, 0.0});
  const std::vector<Detection> two{{1, 0, {0, 0, 1, 1}, 0.9}, {1, 2, {0, 0, 1, 1}, 0.5}};
  const auto b = pseudo_loss(p, two, cfg);
  EXPECT_NEAR(b.loss, ce_loss(p, 0).loss, 1e-15);
  EXPECT_EQ(b.weights[1], 0.0);

  // nothing above kappa_ignore: fully ignored
  const std::vector<Detection> weak{{1, 0, {0, 0, 1, 1}, 0.6}, {1, 1, {0, 0, 1, 1}, 0.2}};
  const auto c = pseudo_loss(p, weak, cfg);
  EXPECT_TRUE(c.ignored());
  EXPECT_EQ(c.loss, 0.0);
  for (double g : c.grad) EXPECT_EQ(g, 0.0);

  // soft Gamma with Z = 1
  const std::vector<Detection> soft{{1, 0, {0, 0, 1, 1}, 0.6}, {1, 2, {0, 0, 1, 1}, 0.4}};
  const auto d = pseudo_loss(p, soft, loss_config(PartialVariant::sum, GammaKind::soft));
  EXPECT_NEAR(d.loss, 0.6 * ce_loss(p, 0).loss + 0.4 * ce_loss(p, 2).loss, 1e-15);

  EXPECT_THROW(pseudo_loss(p, std::vector<Detection>{}, cfg), Error);
  const std::vector<Detection> bad{{1, 0, {0, 0, 1, 1}, 1.2}};
  try {
    pseudo_loss(p, bad, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::validation);
  }
}

TEST(PseudoLoss, HardGammaThresholdIsStrict) {
  const auto cfg = loss_config();
  const ProbVector p({0.1, 0.2, 0.3});
  for (double s : {0.69, 0.7}) {
    const std::vector<Detection> m{{1, 0, {0, 0, 1, 1}, s}};
    EXPECT_TRUE(pseudo_loss(p, m, cfg).ignored()) << s;
  }
  const std::vector<Detection> m{{1, 0, {0, 0, 1, 1}, 0.71}};
  EXPECT_FALSE(pseudo_loss(p, m, cfg).ignored());
}

TEST(PseudoLossProperties, SoftScalingAndHardPiecewiseConstant) {
  std::mt19937_64 rng(104);
  std::uniform_real_distribution<double> score(0.1, 1.0), scale(0.1, 1.0), high(0.7001, 1.0);
  for (int t = 0; t < 500; ++t) {
    const ProbVector p(oracle::random_logits(rng, 5));
    std::vector<Detection> m;
    for (std::size_t k = 0, n = 1 + rng() % 4; k < n; ++k)
      m.push_back({1, static_cast<int>(rng() % 4), {0, 0, 1, 1}, score(rng)});

    auto scaled = m;
    const double c = scale(rng);
    for (auto& d : scaled) d.score *= c;
    const auto soft = loss_config(PartialVariant::sum, GammaKind::soft);
    EXPECT_NEAR(pseudo_loss(p, m, soft).loss, pseudo_loss(p, scaled, soft).loss, 1e-12);

    auto moved = m;
    for (auto& d : moved)
      if (d.score > 0.7) d.score = high(rng);
    const auto hard = loss_config();
    EXPECT_EQ(pseudo_loss(p, m, hard).loss, pseudo_loss(p, moved, hard).loss);
  }
}

TEST(PartialLossProperties, MovingMassIntoAmbiguousSetNeverHurts) {
  std::mt19937_64 rng(105);
  for (int t = 0; t < 500; ++t) {
    const auto z = oracle::random_logits(rng, 7);
    auto amb = random_ambiguous(rng, 7);
    if (amb.size() == 7) continue;
    auto raised = z;
    raised[static_cast<std::size_t>(amb[rng() % amb.size()])] += 0.5;  // more mass on one c in L*
    const auto cfg = loss_config();
    EXPECT_LE(partial_loss(ProbVector(raised), amb, cfg).loss, partial_loss(ProbVector(z), amb, cfg).loss + 1e-15);
  }
}

TEST(Regression, Examples) {
  const BBox b{10, 20, 30, 60};
  const auto same = regression_loss(b, b, 1.0);
  EXPECT_EQ(same.loss, 0.0);

  // centre shifted by one width: dx/w = 1, others 0
  const auto shifted = regression_loss(b, {30, 20, 50, 60}, 1.0);
  EXPECT_NEAR(shifted.loss, 0.5, 1e-15);
  EXPECT_EQ(smooth_l1(1.0), 0.5);
  EXPECT_EQ(smooth_l1(-3.0), 2.5);
  EXPECT_NEAR(regression_loss(b, {30, 20, 50, 60}, 0.25).loss, 0.125, 1e-15);

  EXPECT_THROW(regression_loss({0, 0, 0, 1}, b, 1.0), Error);
  EXPECT_THROW(regression_loss(b, b, -1.0), Error);
}

TEST(Gradients, RegressionMatchesFiniteDifferences) {
  std::mt19937_64 rng(106);
  std::uniform_real_distribution<double> weight(0.1, 2.0);
  int checked = 0;
  for (int t = 0; t < 600 && checked < 300; ++t) {
    const BBox a = oracle::random_box(rng, 100.0, 5.0, 40.0);
    const BBox b = oracle::jitter_box(rng, a, 0.6);
    const double w = weight(rng);
    const auto t4 = encode_box(a, b);
    // skip points near the smooth-L1 kink, where the derivative jumps
    bool near_kink = false;
    for (double v : t4) near_kink = near_kink || std::abs(std::abs(v) - 1.0) < 1e-2;
    if (near_kink) continue;
    ++checked;
    const auto r = regression_loss(a, b, w);

    const std::vector<double> corners{a.x1, a.y1, a.x2, a.y2};
    const auto nbox = oracle::numeric_gradient(
        [&](const std::vector<double>& x) { return regression_loss({x[0], x[1], x[2], x[3]}, b, w).loss; }, corners,
        1e-6);
    EXPECT_LT(oracle::relative_error({r.grad_box.begin(), r.grad_box.end()}, nbox), 1e-5);

    auto loss_of_delta = [&](const std::vector<double>& d) {
      double s = 0.0;
      for (std::size_t i = 0; i < 4; ++i) s += w * smooth_l1(t4[i] - d[i]);
      return s;
    };
    const auto ndelta = oracle::numeric_gradient(loss_of_delta, {0.0, 0.0, 0.0, 0.0});
    EXPECT_LT(oracle::relative_error({r.grad_delta.begin(), r.grad_delta.end()}, ndelta), 1e-5);
  }
  EXPECT_GE(checked, 200);
}

TEST(LossConfigCheck, KappaOrdering) {
  MatchConfig m;
  LossConfig l;
  EXPECT_NO_THROW(check_compatible(m, l));
  l.kappa_ignore = 0.01;
  EXPECT_THROW(check_compatible(m, l), Error);
}

// ---------------------------------------------------------------------------
// batch_loss

namespace {

struct Fixture {
  UnifiedLabelSpace u = build_unified({space("A", {"person", "car"}), space("B", {"dog"})}, {});
  // unified: car 0, dog 1, person 2, background 3
};

}  // namespace

TEST(BatchLoss, HandAssembledFixture) {
  Fixture f;
  ASSERT_EQ(f.u.find("person"), 2);
  ProposalBatch b;
  b.image_id = 1;
  b.dataset_id = "A";
  const std::vector<double> z0{0.1, 0.2, 1.5, -0.3}, z1{0.0, 0.8, -0.5, 0.4}, z2{0.3, 0.3, 0.1, 1.0};
  b.proposals = {{{0, 0, 10, 10}, z0}, {{20, 20, 30, 30}, z1}, {{50, 50, 60, 60}, z2}};
  b.gt = {{1, 1, 2, {0, 0, 10, 10}}};
  b.pgt = {{1, 1, {20, 20, 30, 30}, 0.9}, {1, 1, {20, 20, 30, 29}, 0.5}};

  const auto r = batch_loss(b, f.u, MatchConfig{}, loss_config(), LossMode::pseudo);
  const double expected = (ce_oracle(z0, 2) + ce_oracle(z1, 1) + ce_oracle(z2, 3)) / 3.0;
  EXPECT_NEAR(r.total, expected, 1e-12);
  EXPECT_EQ(r.counts.positive, 1u);
  EXPECT_EQ(r.counts.pseudo, 1u);
  EXPECT_EQ(r.counts.background, 1u);
  EXPECT_EQ(r.per_proposal[1].branch, Branch::pseudo);

  // partial mode: L* for A is {dog, background}
  const auto partial = batch_loss(b, f.u, MatchConfig{}, loss_config(), LossMode::partial);
  auto mass = [](const std::vector<double>& z) { return oracle::softmax_at(z, 1) + oracle::softmax_at(z, 3); };
  EXPECT_NEAR(partial.total, (ce_oracle(z0, 2) - std::log(mass(z1)) - std::log(mass(z2))) / 3.0, 1e-12);

  // soft Gamma averages both pseudo boxes, which share a category here
  const auto soft = batch_loss(b, f.u, MatchConfig{}, loss_config(PartialVariant::sum, GammaKind::soft),
                               LossMode::pseudo);
  EXPECT_NEAR(soft.total, expected, 1e-12);
}

TEST(BatchLoss, IgnoredProposalsLeaveTheMean) {
  Fixture f;
  ProposalBatch b;
  b.dataset_id = "A";
  const std::vector<double> z0{0.1, 0.2, 1.5, -0.3}, z1{0.0, 0.8, -0.5, 0.4};
  b.proposals = {{{0, 0, 10, 10}, z0}, {{20, 20, 30, 30}, z1}};
  b.pgt = {{1, 1, {20, 20, 30, 30}, 0.5}};
  const auto r = batch_loss(b, f.u, MatchConfig{}, loss_config(), LossMode::pseudo);
  EXPECT_EQ(r.counts.ignored, 1u);
  EXPECT_EQ(r.counts.background, 1u);
  EXPECT_NEAR(r.total, ce_oracle(z0, 3), 1e-12);
}

TEST(BatchLoss, DegenerateReductions) {
  std::mt19937_64 rng(107);
  Fixture f;
  const auto single = build_unified({space("A", {"person", "car"})}, {});
  for (int t = 0; t < 100; ++t) {
    ProposalBatch b;
    b.dataset_id = "A";
    for (int i = 0; i < 8; ++i) b.proposals.push_back({oracle::random_box(rng), oracle::random_logits(rng, 4)});
    b.gt = {{1, 0, 2, oracle::random_box(rng)}, {2, 0, 0, oracle::random_box(rng)}};
    const auto naive = batch_loss(b, f.u, MatchConfig{}, loss_config(), LossMode::naive_bg);
    const auto pseudo = batch_loss(b, f.u, MatchConfig{}, loss_config(), LossMode::pseudo);
    EXPECT_EQ(naive.total, pseudo.total);

    ProposalBatch s = b;
    for (auto& p : s.proposals) p.logits.resize(3);
    for (auto& a : s.gt) a.category = a.category == 2 ? 1 : 0;  // person 1, car 0 in the single space
    const auto n1 = batch_loss(s, single, MatchConfig{}, loss_config(), LossMode::naive_bg);
    const auto p1 = batch_loss(s, single, MatchConfig{}, loss_config(), LossMode::partial);
    EXPECT_EQ(n1.total, p1.total);
  }
}

TEST(BatchLoss, PermutationInvariant) {
  std::mt19937_64 rng(108);
  Fixture f;
  for (int t = 0; t < 100; ++t) {
    ProposalBatch b;
    b.dataset_id = "A";
    for (int i = 0; i < 12; ++i) b.proposals.push_back({oracle::random_box(rng), oracle::random_logits(rng, 4)});
    b.pgt = {{0, 1, b.proposals[0].box, 0.8}, {0, 1, b.proposals[3].box, 0.95}};
    const auto r = batch_loss(b, f.u, MatchConfig{}, loss_config(), LossMode::pseudo);
    auto shuffled = b;
    std::shuffle(shuffled.proposals.begin(), shuffled.proposals.end(), rng);
    EXPECT_EQ(batch_loss(shuffled, f.u, MatchConfig{}, loss_config(), LossMode::pseudo).total, r.total);
  }
}

TEST(BatchLoss, Regression) {
  Fixture f;
  ProposalBatch b;
  b.dataset_id = "A";
  b.proposals = {{{0, 0, 10, 10}, {0, 0, 0, 0}}};
  b.gt = {{1, 0, 2, {1, 0, 11, 10}}};
  auto cfg = loss_config();
  cfg.with_regression = true;
  const auto r = batch_loss(b, f.u, MatchConfig{}, cfg, LossMode::pseudo);
  ASSERT_TRUE(r.per_proposal[0].reg_grad.has_value());
  EXPECT_NEAR(r.per_proposal[0].reg_loss, 0.5 * 0.1 * 0.1, 1e-15);
  EXPECT_NEAR((*r.per_proposal[0].reg_grad)[0], -0.1, 1e-15);
  EXPECT_NEAR(r.total, std::log(4.0) + 0.005, 1e-12);
}

TEST(BatchLoss, ValidationErrors) {
  Fixture f;
  ProposalBatch b;
  b.dataset_id = "A";
  b.proposals = {{{0, 0, 10, 10}, {0, 0, 0}}};
  EXPECT_THROW(batch_loss(b, f.u, MatchConfig{}, loss_config(), LossMode::naive_bg), Error);  // logits length
  b.proposals[0].logits = {0, 0, 0, 0};
  b.gt = {{1, 0, 1, {0, 0, 10, 10}}};  // dog is not annotated in A
  EXPECT_THROW(batch_loss(b, f.u, MatchConfig{}, loss_config(), LossMode::naive_bg), Error);
  b.gt.clear();
  b.pgt = {{0, 2, {0, 0, 10, 10}, 0.9}};  // person leaks into pseudo labels
  try {
    batch_loss(b, f.u, MatchConfig{}, loss_config(), LossMode::pseudo);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::validation);
  }
  // pgt is not consulted outside pseudo mode
  EXPECT_NO_THROW(batch_loss(b, f.u, MatchConfig{}, loss_config(), LossMode::partial));
  b.pgt = {{0, 3, {0, 0, 10, 10}, 0.9}};  // background is never a pseudo label
  EXPECT_THROW(batch_loss(b, f.u, MatchConfig{}, loss_config(), LossMode::pseudo), Error);
}
