#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "sane/eval.hpp"
#include "sane/reservoir.hpp"
#include "support.hpp"

using namespace sane;

namespace {

EvalRequest one_user(std::vector<ItemId> ranked, std::vector<ItemId> truth) {
  EvalRequest r;
  r.ranked = {std::move(ranked)};
  r.ground_truth = {std::move(truth)};
  return r;
}

}  // namespace

TEST_CASE("metrics by hand") {
  const auto r = one_user({1, 2, 3}, {1, 3});
  CHECK(ndcg_at_k(r, 3).mean == doctest::Approx(0.70392).epsilon(1e-5));
  CHECK(ndcg_at_k(one_user({5, 6}, {5}), 2).mean == doctest::Approx(0.61315).epsilon(1e-5));
  CHECK(map_at_k(one_user({7, 5}, {5}), 2).mean == doctest::Approx(0.5));
  const auto rp = recall_precision_at_k(one_user({4, 9}, {1, 2, 3, 4}), 2);
  CHECK(rp.recall.mean == doctest::Approx(0.25));
  CHECK(rp.precision.mean == doctest::Approx(0.5));
  CHECK_THROWS_AS(ndcg_at_k(r, 0), Error);
}

TEST_CASE("users without ground truth are skipped") {
  EvalRequest r;
  r.ranked = {{1, 2}, {1, 2}};
  r.ground_truth = {{}, {2}};
  const auto rp = recall_precision_at_k(r, 2);
  CHECK(std::isnan(rp.recall.per_user[0]));
  CHECK(rp.recall.n_evaluated == 1);
  CHECK(rp.recall.mean == doctest::Approx(1.0));
  r.ground_truth = {{}, {}};
  CHECK_THROWS_AS(recall_precision_at_k(r, 2), Error);
}

TEST_CASE("evaluate_request orders rows") {
  auto r = one_user({1, 2, 3}, {1});
  r.cutoffs = {2, 1, 2};
  const auto rows = evaluate_request(r, 4);
  REQUIRE(rows.size() == 8);
  CHECK(rows[0].cutoff == 1);
  CHECK(rows[0].metric == "recall");
  CHECK(rows[3].metric == "ndcg");
  CHECK(rows[4].cutoff == 2);
  CHECK(rows[7].block == 4);
  std::ostringstream out;
  write_metrics_csv(out, {rows[0]});
  CHECK(out.str() == "block,cutoff,metric,value\n4,1,recall,1\n");
}

TEST_CASE("build_request excludes history and unknown items") {
  // users 0,1; items 0,1,2 in the first four events, item 3 only in the target
  std::vector<InteractionEvent> ev{{0, 0, 0}, {0, 1, 1}, {1, 2, 2}, {1, 0, 3},
                                   {0, 2, 4}, {0, 1, 5}, {1, 3, 6}, {1, 1, 7}};
  const auto log = make_log(ev);
  Rng rng(1);
  const auto reps = test::random_reps(2, 3, 2, rng);
  const auto req = build_request(reps, log, {4, 8}, {1, 3});
  CHECK(req.ground_truth[0] == std::vector<ItemId>{1, 2});
  CHECK(req.ground_truth[1] == std::vector<ItemId>{1});
  CHECK(req.ranked[0] == std::vector<ItemId>{2});
  REQUIRE(req.ranked[1].size() == 1);
  CHECK(req.ranked[1][0] == 1);
  CHECK_THROWS_AS(build_request(reps, log, {4, 9}, {1}), Error);
  CHECK_THROWS_AS(build_request(reps, log, {4, 8}, {}), Error);
  CHECK(std::isnan(recall_at_20(reps, log, {8, 8})));
}

TEST_CASE("interest shift indicator and cohort") {
  CategoryHistogram cur{1, 2, {{3, 1}, {0, 0}, {2, 2}, {0, 4}}};
  CategoryHistogram prev{0, 2, {{1, 3}, {1, 1}, {2, 2}, {4, 0}}};
  const auto a = normalized_histograms(cur);
  CHECK(a(1, 0) == doctest::Approx(0.5));
  const auto iss = interest_shift_indicator(a, normalized_histograms(prev));
  CHECK(iss[0] == doctest::Approx(0.25));
  CHECK(iss[2] == doctest::Approx(0.0));
  CHECK(iss[3] == doctest::Approx(1.0));
  CHECK(high_shift_cohort(iss, {true, true, true, true}, 0.5) == std::vector<UserId>{0, 3});
  CHECK(high_shift_cohort(iss, {true, true, true, false}, 0.15) == std::vector<UserId>{0});
  // ties go to the lower id
  CHECK(high_shift_cohort({1.0, 1.0, 1.0}, {true, true, true}, 0.5) == std::vector<UserId>{0, 1});
  CHECK_THROWS_AS(interest_shift_indicator(a, Matrix::Zero(3, 2)), Error);
  CHECK_THROWS_AS(high_shift_cohort(iss, {true}, 0.0), Error);

  MetricValues mv;
  mv.per_user = {0.5, std::nan(""), 1.0};
  CHECK(cohort_mean(mv, {0, 1, 2}) == doctest::Approx(0.75));
  CHECK(std::isnan(cohort_mean(mv, {1})));
}

TEST_CASE("synthetic drift dataset") {
  const auto d = synth_drift_dataset(50, 40, 4, 0.3, 2, 4, 5, 7);
  CHECK(d.log.n_users == 50);
  CHECK(d.log.events.size() == 50 * (30 + 4 * 5));
  CHECK(d.base_events_per_user == 30);
  std::size_t drifting = 0;
  for (std::size_t u = 0; u < 50; ++u) {
    if (d.drifting[u]) {
      ++drifting;
      CHECK(d.dominant_after[u] != d.dominant_before[u]);
    } else {
      CHECK(d.dominant_after[u] == d.dominant_before[u]);
    }
  }
  CHECK(drifting == 15);
  for (std::size_t i = 0; i < d.log.n_items; ++i) {
    const int raw = std::stoi(d.log.raw_item_ids[i]);
    CHECK(d.categories[i] == raw * 4 / 40);
  }
  const auto before = synth_category_probs(d, 0, 1);
  CHECK(before[d.dominant_before[0]] == doctest::Approx(0.7));
  CHECK(std::accumulate(before.begin(), before.end(), 0.0) == doctest::Approx(1.0));
  const auto after = synth_category_probs(d, 0, 2);
  CHECK(after[d.dominant_after[0]] == doctest::Approx(0.7));

  const auto again = synth_drift_dataset(50, 40, 4, 0.3, 2, 4, 5, 7);
  CHECK(again.log.raw_user_ids == d.log.raw_user_ids);
  CHECK(again.drifting == d.drifting);
  CHECK_THROWS_AS(synth_drift_dataset(50, 40, 1, 0.3, 2, 4, 5, 7), Error);
  CHECK_THROWS_AS(synth_drift_dataset(50, 40, 4, 0.3, 5, 4, 5, 7), Error);
  CHECK_THROWS_AS(synth_drift_dataset(50, 40, 4, 1.3, 2, 4, 5, 7), Error);
}

TEST_CASE("drifting users move their mass at the flip block") {
  const auto d = synth_drift_dataset(200, 300, 4, 0.3, 2, 4, 10, 3);
  const auto s = split_blocks(d.log, 0.6, 4, 0.0, SplitMode::standard);
  const auto h1 = category_histogram(build_block_graph(d.log, s, 1), d.categories, 4);
  const auto h2 = category_histogram(build_block_graph(d.log, s, 2), d.categories, 4);
  double old_share_before = 0.0, old_share_after = 0.0, n = 0.0;
  for (std::size_t u = 0; u < 200; ++u) {
    if (!d.drifting[u]) continue;
    const auto b = normalize_histogram(h1.counts[u]);
    const auto a = normalize_histogram(h2.counts[u]);
    old_share_before += b[d.dominant_before[u]];
    old_share_after += a[d.dominant_before[u]];
    n += 1.0;
  }
  CHECK(old_share_before / n > 0.5);
  CHECK(old_share_after / n < 0.3);
}

TEST_CASE("raw category files round trip") {
  const auto d = synth_drift_dataset(10, 12, 3, 0.2, 1, 2, 3, 5);
  std::stringstream buf;
  write_raw_categories(buf, d.log, d.categories);
  CHECK(read_raw_categories(buf, d.log) == d.categories);
  std::istringstream missing("0,1\n");
  CHECK_THROWS_AS(read_raw_categories(missing, d.log), Error);
  std::istringstream bad("0;1\n");
  CHECK_THROWS_AS(read_raw_categories(bad, d.log), IngestError);

  std::stringstream inter;
  write_interactions(inter, d.log);
  const auto back = ingest_interactions(inter);
  CHECK(back.raw_user_ids == d.log.raw_user_ids);
  CHECK(back.events.size() == d.log.events.size());
}
