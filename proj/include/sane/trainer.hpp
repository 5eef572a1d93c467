#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <utility>
#include <vector>

#include "sane/backbone.hpp"
#include "sane/clustering.hpp"
#include "sane/common.hpp"
#include "sane/data.hpp"
#include "sane/losses.hpp"
#include "sane/reservoir.hpp"

namespace sane {

struct TrainerConfig {
  std::size_t batch_size = 64;  // positive edges per step
  double learning_rate = 5e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t n_uniform = 5;    // N1
  std::size_t n_reservoir = 5;  // N2
  std::size_t min_epochs_base = 3;
  std::size_t max_epochs_base = 30;
  std::size_t min_epochs_incremental = 3;
  std::size_t max_epochs_incremental = 15;
  std::size_t patience = 2;
  bool restore_best = true;  // return the best-validation epoch instead of the last
  double dropout = 0.0;
  std::size_t dim = 64;
  std::size_t n_layers = 2;  // 0 = plain matrix factorisation
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainRecord {
  std::size_t block = 0;
  std::size_t epoch = 0;
  std::size_t steps = 0;
  // Per-step means of the weighted components; they sum to `total`.
  double triplet = 0.0;
  double kd = 0.0;
  double sane = 0.0;
  double kl = 0.0;
  double reg = 0.0;
  double total = 0.0;
  double val_recall20 = 0.0;  // NaN when the block has no validation users
  bool reservoir_refreshed = false;
  double seconds = 0.0;
};

// `block,epoch,steps,triplet,kd,sane,kl,reg,total,val_recall20,refreshed,seconds`.
// Pass include_time = false to write 0 for the duration column.
void write_train_log(std::ostream& out, const std::vector<TrainRecord>& records,
                     bool include_time = true);

// Adam over a fixed list of parameter blocks.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double epsilon);

  // params[i] and grads[i] must keep their sizes between calls.
  void step(const std::vector<double*>& params, const std::vector<const double*>& grads,
            const std::vector<std::size_t>& sizes);
  std::size_t steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

using PositivePair = std::pair<UserId, ItemId>;

// N negatives per positive pair, drawn uniformly from items outside the
// user's positive set by rejection. positives[u] must be sorted ascending.
TripletBatch uniform_negatives(const std::vector<PositivePair>& pairs,
                               const std::vector<std::vector<ItemId>>& positives,
                               std::size_t n_items, std::size_t n_per_positive,
                               std::uint64_t seed);

// N2 reservoir draws per positive pair, folded into multiplicities. Users
// with an empty reservoir fall back to uniform negatives with unit multiplicity.
struct ReservoirBatch {
  TripletBatch reservoir;  // multiplicity-weighted
  TripletBatch fallback;   // uniform, for users without a reservoir
};
ReservoirBatch reservoir_negatives(const std::vector<PositivePair>& pairs,
                                   const ReservoirState& state,
                                   const std::vector<std::vector<ItemId>>& positives,
                                   std::size_t n_items, std::size_t n_per_positive,
                                   std::uint64_t seed);

// Frozen previous-block model used by the distillation terms.
struct TeacherView {
  const NodeRepresentations* reps = nullptr;
  const InteractionGraph* graph = nullptr;
  // Contrastive candidate sets; sampled once per block.
  const std::vector<std::vector<ItemId>>* contrastive_sets = nullptr;
};

struct StepResult {
  TotalLoss loss;
  ParamGradient grad;
  KlResult kl;  // empty unless beta > 0
};

// Loss of the base block: BPR with regularisation on `batch`.
StepResult base_step(const EmbeddingState& state, const InteractionGraph& graph,
                     const TripletBatch& batch, double lambda_reg, double dropout,
                     std::uint64_t dropout_seed);

// Full objective of an incremental step:
// triplet (uniform) + lambda_kd kd + sane (reservoir) + beta kl + reg.
StepResult incremental_step(const EmbeddingState& state, const InteractionGraph& graph,
                            const TripletBatch& uniform, const TripletBatch& reservoir,
                            const LossWeights& weights, const DistillConfig& distill,
                            const TeacherView& teacher, const ClusterState* clusters,
                            double dropout, std::uint64_t dropout_seed);

// Observer for the negatives used in each step.
struct TrainerHooks {
  std::function<void(std::size_t block, std::size_t epoch, const TripletBatch& uniform,
                     const TripletBatch& reservoir)>
      on_batch;
  std::function<void(std::size_t block, std::size_t epoch, const ReservoirState&,
                     const CategoryMap&)>
      on_refresh;
};

struct BaseResult {
  EmbeddingState state;
  std::vector<TrainRecord> records;
};

// BPR-only training on block 0 with N1 + N2 uniform negatives per positive,
// early stopping on validation Recall@20. Returns the best epoch's state.
BaseResult train_base_block(const InteractionLog& log, const BlockSchedule& schedule,
                            const TrainerConfig& config, double lambda_reg,
                            const TrainerHooks& hooks = {});

struct IncrementalOptions {
  TrainerConfig trainer;
  ReservoirConfig reservoir;
  LossWeights weights;
  DistillConfig distill;
  double cluster_nu = 1.0;
  double cluster_tau = 1.0;
  // Fixed item categories; when null, hard cluster assignments are used.
  const CategoryMap* categories = nullptr;
};

struct IncrementalResult {
  EmbeddingState state;
  ReservoirState reservoir;
  ClusterState clusters;
  CategoryMap categories;  // categories in force at the last refresh
  std::vector<TrainRecord> records;
};

// Trains block t >= 1 starting from the teacher (the final block t-1 state),
// which is left untouched.
IncrementalResult train_incremental_block(const EmbeddingState* teacher,
                                          const InteractionLog& log,
                                          const BlockSchedule& schedule, std::size_t t,
                                          const IncrementalOptions& options,
                                          const TrainerHooks& hooks = {});

// Training edges of block t as (user, item) pairs in log order.
std::vector<PositivePair> block_pairs(const InteractionLog& log, Range range);

}  // namespace sane
