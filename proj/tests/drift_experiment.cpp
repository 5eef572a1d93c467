#include "drift_experiment.hpp"

#include <algorithm>
#include <cmath>

namespace sane::drift {

namespace {

TrainerConfig trainer_config(const Setup& setup, std::uint64_t seed) {
  TrainerConfig c;
  c.batch_size = 64;
  c.learning_rate = setup.learning_rate;
  c.dim = setup.dim;
  c.n_layers = setup.n_layers;
  c.min_epochs_base = 3;
  c.max_epochs_base = 20;
  c.min_epochs_incremental = 3;
  c.max_epochs_incremental = setup.max_epochs_incremental;
  c.patience = setup.patience;
  c.restore_best = setup.restore_best;
  c.seed = seed;
  return c;
}

struct Tally {
  double abandoned = 0.0;
  double total = 0.0;

  double share() const { return total > 0.0 ? abandoned / total : 0.0; }
};

void count(Tally& tally, const TripletBatch& batch, const SynthDataset& data) {
  for (const auto& tr : batch.triples) {
    if (!data.drifting[tr.user]) continue;
    const double w = tr.multiplicity;
    tally.total += w;
    if (data.categories[tr.negative] == data.dominant_before[tr.user]) tally.abandoned += w;
  }
}

std::vector<UserId> shift_cohort(const SynthDataset& data, const InteractionLog& log,
                                 const BlockSchedule& schedule, std::size_t flip) {
  const auto k = data.n_categories;
  const auto cur = category_histogram(build_block_graph(log, schedule, flip), data.categories, k);
  const auto prev =
      category_histogram(build_block_graph(log, schedule, flip - 1), data.categories, k);
  const std::size_t n = prev.counts.size();
  CategoryHistogram cur_trim = cur;
  cur_trim.counts.resize(n);
  const auto iss = interest_shift_indicator(normalized_histograms(cur_trim), normalized_histograms(prev));
  std::vector<bool> eligible(n);
  for (std::size_t u = 0; u < n; ++u) {
    const auto nz = [](const std::vector<std::int64_t>& r) {
      return std::any_of(r.begin(), r.end(), [](std::int64_t c) { return c > 0; });
    };
    eligible[u] = nz(cur.counts[u]) && nz(prev.counts[u]);
  }
  return high_shift_cohort(iss, eligible, 0.15);
}

}  // namespace

IncrementalOptions sane_options(const Setup& setup, std::uint64_t seed) {
  IncrementalOptions o;
  o.trainer = trainer_config(setup, seed);
  o.trainer.n_uniform = 5;
  o.trainer.n_reservoir = 5;
  o.reservoir.q = setup.reservoir_q;
  o.reservoir.lambda = setup.reservoir_lambda;
  o.reservoir.n_categories = setup.k_true;
  o.reservoir.refresh_every = 2;
  o.weights.beta = setup.beta;
  o.weights.lambda_reg = 0.0;
  o.distill.seed = seed;
  return o;
}

IncrementalOptions finetune_options(const Setup& setup, std::uint64_t seed) {
  IncrementalOptions o;
  o.trainer = trainer_config(setup, seed);
  o.trainer.n_uniform = 10;
  o.trainer.n_reservoir = 0;
  o.reservoir.n_categories = setup.k_true;
  o.weights.beta = 0.0;
  o.weights.lambda_reg = 0.0;
  o.distill.seed = seed;
  return o;
}

Outcome run_seed(const Setup& setup, std::uint64_t seed) {
  const auto data = synth_drift_dataset(setup.n_users, setup.n_items, setup.k_true,
                                        setup.drift_fraction, setup.flip_block, setup.n_blocks,
                                        setup.events_per_block, seed);
  const auto& log = data.log;
  const auto schedule = split_blocks(log, 0.6, setup.n_blocks, 0.05, SplitMode::standard);
  const auto cohort = shift_cohort(data, log, schedule, setup.flip_block);

  auto sane_opts = sane_options(setup, seed);
  if (setup.true_categories) sane_opts.categories = &data.categories;
  const auto ft_opts = finetune_options(setup, seed);
  const auto base = train_base_block(log, schedule, sane_opts.trainer, sane_opts.weights.lambda_reg);

  Outcome out;
  out.cohort_size = cohort.size();
  for (int arm = 0; arm < 2; ++arm) {
    const auto& opts = arm == 0 ? sane_opts : ft_opts;
    Tally tally;
    TrainerHooks hooks;
    hooks.on_batch = [&](std::size_t block, std::size_t, const TripletBatch& uniform,
                         const TripletBatch& reservoir) {
      if (block < setup.flip_block) return;
      count(tally, arm == 0 ? reservoir : uniform, data);
    };
    EmbeddingState state = base.state;
    double recall = 0.0;
    std::size_t n_eval = 0;
    for (std::size_t t = 1; t + 1 < schedule.size(); ++t) {
      auto inc = train_incremental_block(&state, log, schedule, t, opts, hooks);
      state = std::move(inc.state);
      if (t < setup.flip_block) continue;
      const auto graph = build_block_graph(log, schedule, t);
      const auto req = build_request(forward(state, graph), log, schedule.at(t).test, {20});
      const auto rp = recall_precision_at_k(req, 20);
      const double r = cohort_mean(rp.recall, cohort);
      (arm == 0 ? out.block_recall_sane : out.block_recall_finetune).push_back(r);
      recall += r;
      ++n_eval;
    }
    recall /= static_cast<double>(n_eval);
    if (arm == 0) {
      out.abandoned_share_sane = tally.share();
      out.cohort_recall_sane = recall;
    } else {
      out.abandoned_share_uniform = tally.share();
      out.cohort_recall_finetune = recall;
    }
  }
  return out;
}

}  // namespace sane::drift
