// Command-line front end: argument parsing only, the commands themselves
// live in unidet/cli.hpp.

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "unidet/cli.hpp"

namespace {

using unidet::json;

void report_error(const std::string& kind, const std::string& message, const std::string& path = "",
                  std::optional<std::int64_t> record = std::nullopt) {
  json err{{"kind", kind}, {"message", message}};
  if (!path.empty()) err["path"] = path;
  if (record) err["record_id"] = *record;
  std::cerr << json{{"error", err}}.dump() << "\n";
}

void report_warnings(const unidet::Diagnostics& diag) {
  for (const auto& w : diag.warnings) std::cerr << json{{"warning", w}}.dump() << "\n";
}

// unset std::optional<std::string> members stay empty when the flag is absent
std::optional<std::string> opt(const std::string& value) {
  return value.empty() ? std::nullopt : std::optional<std::string>(value);
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = unidet::cli;
  CLI::App app{"Unified multi-dataset object detection toolkit"};
  app.require_subcommand(1);
  unsigned threads = unidet::default_threads();
  bool strict = false;
  app.add_option("--threads", threads, "Worker threads (default: UNIDET_THREADS or 1)")->check(CLI::PositiveNumber);
  app.add_flag("--strict", strict, "Reject unknown keys and out-of-bounds boxes instead of warning");

  std::function<cli::Outcome()> command;

  // validate
  auto* validate = app.add_subcommand("validate", "Check a dataset, detection, alias, unified or batch file");
  std::string v_file, v_kind = "auto";
  validate->add_option("file", v_file)->required();
  validate->add_option("--kind", v_kind)
      ->check(CLI::IsMember({"auto", "dataset", "detections", "alias", "unified", "batches"}));
  validate->callback([&] { command = [&] { return cli::validate(v_file, v_kind, strict); }; });

  // unify
  auto* unify = app.add_subcommand("unify", "Build the unified label space");
  std::vector<std::string> u_spaces;
  std::string u_alias, u_out;
  unify->add_option("--spaces", u_spaces, "Dataset or detection files whose label spaces are merged")->required();
  unify->add_option("--alias", u_alias, "Alias file grouping synonymous categories");
  unify->add_option("--out", u_out)->required();
  unify->callback([&] { command = [&] { return cli::unify(u_spaces, opt(u_alias), u_out); }; });

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Remove categories (and their boxes) from a dataset");
  std::string a_dataset, a_remove, a_out;
  ablate->add_option("--dataset", a_dataset)->required();
  ablate->add_option("--remove", a_remove, "Text file with one category name per line")->required();
  ablate->add_option("--out", a_out)->required();
  ablate->callback([&] { command = [&] { return cli::ablate(a_dataset, a_remove, a_out, strict); }; });

  // mix
  auto* mix = app.add_subcommand("mix", "Pool several test sets into one");
  std::vector<std::string> m_sets;
  std::string m_unified, m_out, m_id = "mixed";
  mix->add_option("--sets", m_sets)->required();
  mix->add_option("--unified", m_unified, "Relabel every set into this unified space first");
  mix->add_option("--id", m_id, "dataset_id of the pooled set");
  mix->add_option("--out", m_out)->required();
  mix->callback([&] { command = [&] { return cli::mix(m_sets, opt(m_unified), m_out, m_id, strict); }; });

  // gen-pgt
  auto* gen = app.add_subcommand("gen-pgt", "Pseudo-label a dataset with detectors trained on other datasets");
  cli::GenPgtArgs g;
  std::string g_alias, g_unified;
  gen->add_option("--target", g.target, "dataset_id of the dataset to pseudo-label")->required();
  gen->add_option("--sources", g.sources, "Detection files of the source detectors")->required();
  gen->add_option("--alias", g_alias);
  gen->add_option("--unified", g_unified, "Unified label space file");
  gen->add_option("--spaces", g.spaces, "Extra label-space files (the target's) when --unified is not given");
  gen->add_option("--floor", g.floor, "Drop boxes scoring below this")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--out", g.out)->required();
  gen->callback([&] {
    command = [&] {
      g.alias = opt(g_alias);
      g.unified = opt(g_unified);
      g.strict = strict;
      return cli::gen_pgt(g);
    };
  });

  // merge-detections
  auto* merge = app.add_subcommand("merge-detections", "Merge per-dataset detector heads into the unified space");
  cli::MergeArgs mg;
  std::string mg_alias;
  std::size_t mg_cap = 100;
  merge->add_option("--heads", mg.heads)->required();
  merge->add_option("--alias", mg_alias);
  merge->add_option("--nms-iou", mg.nms.iou_threshold)->check(CLI::Range(0.0, 1.0));
  merge->add_option("--score-floor", mg.nms.score_floor);
  merge->add_option("--max-per-image", mg_cap, "0 keeps everything");
  merge->add_option("--out", mg.out)->required();
  merge->callback([&] {
    command = [&] {
      mg.alias = opt(mg_alias);
      mg.nms.max_per_image = mg_cap == 0 ? std::nullopt : std::optional<std::size_t>(mg_cap);
      mg.threads = threads;
      mg.strict = strict;
      return cli::merge(mg);
    };
  });

  // loss
  auto* loss = app.add_subcommand("loss", "Classification (and box) loss over proposal batches");
  cli::LossArgs la;
  bool no_force = false;
  const std::map<std::string, unidet::LossMode> modes{
      {"naive_bg", unidet::LossMode::naive_bg}, {"partial", unidet::LossMode::partial}, {"pseudo", unidet::LossMode::pseudo}};
  const std::map<std::string, unidet::PartialVariant> variants{{"sum", unidet::PartialVariant::sum},
                                                               {"sum_me", unidet::PartialVariant::sum_me},
                                                               {"max", unidet::PartialVariant::max}};
  const std::map<std::string, unidet::GammaKind> gammas{{"hard", unidet::GammaKind::hard},
                                                        {"soft", unidet::GammaKind::soft}};
  loss->add_option("--batches", la.batches, "JSON-lines file, one batch per line")->required();
  loss->add_option("--unified", la.unified)->required();
  loss->add_option("--mode", la.mode)->transform(CLI::CheckedTransformer(modes));
  loss->add_option("--variant", la.loss.variant, "Partial-loss variant")->transform(CLI::CheckedTransformer(variants));
  loss->add_option("--gamma", la.loss.gamma, "Pseudo-box weighting")->transform(CLI::CheckedTransformer(gammas));
  loss->add_option("--tau", la.match.tau, "IoU needed to match a box");
  loss->add_option("--kbg", la.match.kappa_bg, "Pseudo boxes must score above this");
  loss->add_option("--kignore", la.loss.kappa_ignore, "Hard weighting: score needed for weight 1");
  loss->add_option("--lambda", la.loss.lambda_me, "Weight of the sum_me penalty");
  loss->add_option("--eps", la.loss.epsilon, "Normaliser floor");
  loss->add_flag("--regression", la.loss.with_regression, "Add the smooth-L1 box term");
  loss->add_flag("--no-force-match", no_force, "Only threshold matching for ground truth");
  loss->add_option("--out", la.out)->required();
  loss->callback([&] {
    command = [&] {
      la.match.force_match_gt = !no_force;
      la.threads = threads;
      la.strict = strict;
      return cli::loss(la);
    };
  });

  // eval-map
  auto* evm = app.add_subcommand("eval-map", "AP50 per class and mAP per evaluation view");
  cli::EvalMapArgs ea;
  std::string ea_alias, ea_unified, ea_views, ea_out, ea_table, ea_interp = "all";
  evm->add_option("--dets", ea.dets)->required();
  evm->add_option("--gt", ea.gt)->required();
  evm->add_option("--alias", ea_alias);
  evm->add_option("--unified", ea_unified, "Map both files into this unified space");
  evm->add_option("--views", ea_views, "JSON file listing the views next to MIX");
  evm->add_option("--iou", ea.options.iou_threshold)->check(CLI::Range(0.0, 1.0));
  evm->add_option("--interp", ea_interp)->check(CLI::IsMember({"all", "11pt"}));
  evm->add_option("--out", ea_out, "JSON report");
  evm->add_option("--table", ea_table, "Also write the text table here");
  evm->callback([&] {
    command = [&] {
      ea.alias = opt(ea_alias);
      ea.unified = opt(ea_unified);
      ea.views = opt(ea_views);
      ea.out = opt(ea_out);
      ea.table = opt(ea_table);
      ea.options.interp = ea_interp == "all" ? unidet::Interpolation::all_point : unidet::Interpolation::eleven_point;
      ea.options.threads = threads;
      ea.strict = strict;
      return cli::eval_map(ea);
    };
  });

  // eval-pgt
  auto* evp = app.add_subcommand("eval-pgt", "Precision and recall of pseudo labels against held-out boxes");
  cli::EvalPgtArgs pa;
  std::string pa_classes, pa_out;
  evp->add_option("--pgt", pa.pgt)->required();
  evp->add_option("--gt", pa.gt)->required();
  evp->add_option("--iou", pa.iou_threshold)->check(CLI::Range(0.0, 1.0));
  evp->add_option("--score-thr", pa.score_thresholds, "One or more score thresholds");
  evp->add_option("--classes", pa_classes, "Text file restricting the evaluated categories");
  evp->add_option("--out", pa_out);
  evp->callback([&] {
    command = [&] {
      pa.classes = opt(pa_classes);
      pa.out = opt(pa_out);
      pa.strict = strict;
      return cli::eval_pgt(pa);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("configuration", e.what());
    return 2;
  }

  try {
    const auto outcome = command();
    report_warnings(outcome.diag);
    cli::write_outputs(outcome);
    std::cout << outcome.stdout_text;
    return 0;
  } catch (const unidet::Error& e) {
    report_error(unidet::to_string(e.kind()), e.what(), e.path(), e.record_id());
    return unidet::exit_code(e.kind());
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return 1;
  }
}
