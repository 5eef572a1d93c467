#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sane/backbone.hpp"
#include "sane/common.hpp"
#include "sane/data.hpp"

namespace sane {

struct Triple {
  UserId user = 0;
  ItemId positive = 0;
  ItemId negative = 0;
  std::int32_t multiplicity = 1;  // N_{u,j}
};

struct TripletBatch {
  std::vector<Triple> triples;
  bool from_reservoir = false;
};

struct LossWeights {
  double lambda_kd = 0.0;   // distillation weight
  double beta = 0.0;        // clustering weight
  double lambda_reg = 0.0;  // L2 on touched representation rows

  void validate() const;
};

enum class DistillMode { none, local, contrastive };

struct DistillConfig {
  DistillMode mode = DistillMode::none;
  double tau = 1.0;             // contrastive temperature
  std::size_t n_negatives = 5;  // uniformly sampled non-neighbours per user
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossValue {
  double value = 0.0;
  RepGradient grad;
};

// sum -ln sigma(y_ui - y_uj) + lambda_reg * (squared norms of touched rows).
// Every multiplicity must be 1.
LossValue bpr_loss(const TripletBatch& batch, const NodeRepresentations& reps, double lambda_reg);

// sum -N_uj ln sigma(y_ui - y_uj) + lambda_reg * (squared norms of touched rows).
LossValue sane_loss(const TripletBatch& batch, const NodeRepresentations& reps, double lambda_reg);

// lambda * sum of squared norms over the distinct user and item rows touched
// by any of the batches.
LossValue l2_touched(const std::vector<const TripletBatch*>& batches,
                     const NodeRepresentations& reps, double lambda);

// Distinct neighbour sets of the previous-block graph.
struct Neighbourhoods {
  std::vector<std::vector<ItemId>> user_items;
  std::vector<std::vector<UserId>> item_users;

  static Neighbourhoods of(const InteractionGraph& graph);
};

// Squared gap between teacher-side and student-side node . neighbourhood-mean
// products, averaged over users with a non-empty neighbourhood, plus the same
// term over items. Teacher representations are constants.
LossValue kd_local(const NodeRepresentations& teacher, const NodeRepresentations& student,
                   const InteractionGraph& graph_prev);

// Item-side local term only.
LossValue kd_local_items(const NodeRepresentations& teacher, const NodeRepresentations& student,
                         const Neighbourhoods& nbrs);

// Candidate sets D(u): the user's previous neighbours followed by up to
// `n_negatives` distinct uniformly drawn non-neighbours.
std::vector<std::vector<ItemId>> sample_contrastive_sets(const InteractionGraph& graph_prev,
                                                         std::size_t n_negatives,
                                                         std::uint64_t seed);

LossValue kd_contrastive(const NodeRepresentations& teacher, const NodeRepresentations& student,
                         const InteractionGraph& graph_prev,
                         const std::vector<std::vector<ItemId>>& candidate_sets, double tau);
LossValue kd_contrastive(const NodeRepresentations& teacher, const NodeRepresentations& student,
                         const InteractionGraph& graph_prev, const DistillConfig& config);

// Clustering contribution carried into the total: value plus gradients on
// item representations and centroids.
struct ClusterLoss {
  double value = 0.0;
  Matrix grad_items;
  Matrix grad_centroids;
};

struct LossComponents {
  LossValue triplet;
  LossValue kd;
  LossValue sane;
  ClusterLoss kl;
  LossValue reg;
};

struct TotalLoss {
  double value = 0.0;
  // Weighted contributions, summing to `value`.
  double triplet = 0.0;
  double kd = 0.0;
  double sane = 0.0;
  double kl = 0.0;
  double reg = 0.0;
  RepGradient grad;
  Matrix grad_centroids;
};

// triplet + lambda_kd * kd + sane + beta * kl + reg. Components with empty
// gradients contribute only their value.
TotalLoss total_loss(const LossComponents& parts, const LossWeights& weights,
                     const NodeRepresentations& reps);

// Numerically stable -ln sigma(x).
double neg_log_sigmoid(double x);

}  // namespace sane
