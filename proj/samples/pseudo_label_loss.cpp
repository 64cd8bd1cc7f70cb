// Two datasets that annotate different classes share one image. The loss
// for a proposal on the unannotated dog depends on how missing labels are
// treated.

#include <cstdio>

#include "unidet/unidet.hpp"

int main() {
  using namespace unidet;
  const DatasetLabelSpace people{"people", {{1, "person"}}};
  const DatasetLabelSpace pets{"pets", {{1, "dog"}, {2, "cat"}}};
  const auto u = build_unified({people, pets}, {});  // cat 0, dog 1, person 2, background 3

  ProposalBatch batch;
  batch.image_id = 1;
  batch.dataset_id = "people";
  batch.gt.push_back({1, 1, u.find("person"), {10, 10, 40, 90}});
  batch.proposals.push_back({{12, 10, 40, 88}, {0.1, 0.2, 2.0, 0.3}});  // on the person
  batch.proposals.push_back({{60, 50, 95, 90}, {0.2, 1.5, 0.1, 0.8}});  // on an unlabelled dog

  // a detector trained on "pets" proposes the dog with high confidence
  const std::vector<HeadDetections> heads{{"pets", {{1, 1, {58, 50, 95, 92}, 0.93}}}};
  batch.pgt = generate_pgt("people", u, heads);

  for (auto mode : {LossMode::naive_bg, LossMode::partial, LossMode::pseudo}) {
    const auto report = batch_loss(batch, u, MatchConfig{}, LossConfig{}, mode);
    std::printf("%-9s mean %.4f  dog proposal: %-10s %.4f\n", to_string(mode), report.total,
                to_string(report.per_proposal[1].branch), report.per_proposal[1].loss);
  }
}
