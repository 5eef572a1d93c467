#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sane/backbone.hpp"
#include "sane/common.hpp"
#include "sane/data.hpp"

namespace sane {

struct EvalRequest {
  std::vector<std::vector<ItemId>> ranked;        // per user, best first
  std::vector<std::vector<ItemId>> ground_truth;  // per user, sorted ascending
  std::vector<std::size_t> cutoffs{5, 10, 15, 20};
};

// Per-user values are NaN for users without ground truth; `mean` averages
// over the remaining `n_evaluated` users.
struct MetricValues {
  std::vector<double> per_user;
  double mean = 0.0;
  std::size_t n_evaluated = 0;
};

struct RecallPrecision {
  MetricValues recall;
  MetricValues precision;
};

RecallPrecision recall_precision_at_k(const EvalRequest& request, std::size_t k);

// DCG over the top K divided by sum_{k<=K} 1/log2(1+k).
MetricValues ndcg_at_k(const EvalRequest& request, std::size_t k);

MetricValues map_at_k(const EvalRequest& request, std::size_t k);

struct MetricRow {
  std::size_t block = 0;
  std::size_t cutoff = 0;
  std::string metric;  // recall | precision | map | ndcg
  double value = 0.0;
};

// Every metric at every cutoff of the request, in the order
// cutoff ascending, then recall, precision, map, ndcg.
std::vector<MetricRow> evaluate_request(const EvalRequest& request, std::size_t block);

// Top `k` items per user over the whole item universe, skipping each user's
// `excluded` items (sorted ascending).
std::vector<std::vector<ItemId>> rank_items(const NodeRepresentations& reps,
                                            const std::vector<std::vector<ItemId>>& excluded,
                                            std::size_t k);

// Request for ranking with `reps` against the events in `target`, excluding
// everything the user interacted with before `target.begin`. Ground-truth items
// outside the representation universe are dropped.
EvalRequest build_request(const NodeRepresentations& reps, const InteractionLog& log,
                          Range target, const std::vector<std::size_t>& cutoffs);

// Mean Recall@20 on `target`; returns NaN when no user has ground truth there.
double recall_at_20(const NodeRepresentations& reps, const InteractionLog& log, Range target);

// Row-normalised category proportions (all-zero rows become uniform).
Matrix normalized_histograms(const CategoryHistogram& hist);

// ISS_u = (1/K) sum_k (a_uk - b_uk)^2.
std::vector<double> interest_shift_indicator(const Matrix& current, const Matrix& previous);

// Indices of the ceil(fraction * |eligible|) eligible users with the highest
// ISS, ties broken by lower user id. Result sorted ascending.
std::vector<UserId> high_shift_cohort(const std::vector<double>& iss,
                                      const std::vector<bool>& eligible, double fraction = 0.15);

// Mean over the users in `cohort` with ground truth.
double cohort_mean(const MetricValues& values, const std::vector<UserId>& cohort);

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows);

struct SynthDataset {
  InteractionLog log;
  CategoryMap categories;                    // dense item id -> true category
  std::vector<bool> drifting;                // dense user id -> flips at flip_block
  std::vector<Category> dominant_before;     // dense user id
  std::vector<Category> dominant_after;      // equals dominant_before for non-drifting users
  std::size_t n_categories = 0;
  std::size_t flip_block = 0;
  double dominant_prob = 0.0;
  std::size_t base_events_per_user = 0;
};

// Base period plus `n_blocks` incremental periods. Each user draws
// `events_per_user_block` events per incremental period (1.5 * n_blocks times
// that in the base period, so the base holds 60% of the log) from a personal
// category distribution: `dominant_prob` on one category, the rest spread evenly.
// Drifting users switch dominant category from incremental period `flip_block` on.
SynthDataset synth_drift_dataset(std::size_t n_users, std::size_t n_items, std::size_t k_true,
                                 double drift_fraction, std::size_t flip_block,
                                 std::size_t n_blocks, std::size_t events_per_user_block,
                                 std::uint64_t seed, double dominant_prob = 0.7);

// Personal category distribution of a (dense) user in period b (0 = base).
std::vector<double> synth_category_probs(const SynthDataset& data, UserId u, std::size_t period);

// `user,item,timestamp` lines with raw ids.
void write_interactions(std::ostream& out, const InteractionLog& log);

// `item,category` lines with raw item ids.
void write_raw_categories(std::ostream& out, const InteractionLog& log,
                          const CategoryMap& categories);

// Reads `item,category` lines keyed by raw item id and maps them onto the
// log's dense ids. Items of the log missing from the file are an error.
CategoryMap read_raw_categories(std::istream& in, const InteractionLog& log);

}  // namespace sane
