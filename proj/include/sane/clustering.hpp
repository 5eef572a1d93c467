#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "sane/common.hpp"

namespace sane {

// Item pseudo-categories from a Student-t soft assignment with
// self-training targets.
struct ClusterState {
  Matrix centroids;  // K x d
  double nu = 1.0;   // degrees of freedom
  double tau = 1.0;  // membership temperature
  Matrix q;          // n_items x K soft assignments
  Matrix p;          // n_items x K sharpened targets

  std::size_t n_clusters() const { return static_cast<std::size_t>(centroids.rows()); }
};

// Lloyd's algorithm with k-means++ seeding. A cluster that empties is
// re-seeded at the point farthest from its current centroid.
Matrix kmeans_init(const Matrix& item_reps, std::size_t k, std::uint64_t seed,
                   std::size_t max_iters = 100);

// Sum of squared distances from each row to its nearest centroid.
double kmeans_cost(const Matrix& item_reps, const Matrix& centroids);

// q_ik proportional to (1 + |h_i - mu_k|^2 / nu)^(-(nu+1)/2).
Matrix soft_assign(const Matrix& item_reps, const Matrix& centroids, double nu);

// p_ik proportional to q_ik^2 / f_k with f_k = sum_i q_ik.
Matrix sharpen(const Matrix& q);

struct KlResult {
  double value = 0.0;
  Matrix grad_items;      // n_items x d
  Matrix grad_centroids;  // K x d
};

// KL(P || Q) summed over items. P is a fixed target; the gradient flows
// through Q into the item representations and the centroids.
KlResult kl_loss(const Matrix& p, const Matrix& item_reps, const Matrix& centroids, double nu);

// Value only, for callers that already hold Q.
double kl_divergence(const Matrix& p, const Matrix& q);

struct Membership {
  std::vector<double> soft;  // softmax(p / tau)
  Category hard = 0;         // argmax p, lowest index on ties
};

Membership membership(std::span<const double> p_row, double tau);

// Hard categories for every row of p.
CategoryMap hard_categories(const Matrix& p);

void write_category_map(std::ostream& out, const CategoryMap& categories);

}  // namespace sane
