#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "sane/backbone.hpp"
#include "sane/common.hpp"
#include "sane/data.hpp"

namespace sane {

struct ReservoirConfig {
  std::size_t q = 100;            // reservoir size per user
  double lambda = 1.0;            // prior strength
  std::size_t n_categories = 10;  // K
  std::size_t refresh_every = 2;  // epochs between rebuilds
  // Uses softmax(+shift) for the prior instead of softmax(-shift). Ablation only.
  bool flip_prior_sign = false;

  void validate() const;
};

// L1-normalised histogram row; an all-zero row maps to the uniform 1/K.
std::vector<double> normalize_histogram(std::span<const std::int64_t> row);

// Normalised current row minus normalised previous row.
std::vector<double> interest_shift(std::span<const std::int64_t> current,
                                   std::span<const std::int64_t> previous);

// alpha = lambda * Q * softmax(-shift). Strictly positive, sums to lambda * Q.
std::vector<double> prior_alpha(std::span<const double> shift, double lambda, std::size_t q,
                                bool flip_sign = false);

// Dirichlet-multinomial posterior mean (alpha_k + c_k) / sum_j (alpha_j + c_j).
std::vector<double> posterior_theta(std::span<const double> alpha,
                                    std::span<const std::int64_t> counts);

// p(slot j) = theta[g(j)] / sum over reservoir slots of theta[g(i)].
std::vector<double> sampling_probs(std::span<const double> theta,
                                   std::span<const ItemId> reservoir,
                                   const CategoryMap& categories);

// Per-category tally of a reservoir's items.
std::vector<std::int64_t> reservoir_counts(std::span<const ItemId> reservoir,
                                           const CategoryMap& categories,
                                           std::size_t n_categories);

struct ReservoirState {
  std::vector<std::vector<ItemId>> items;         // top-Q negatives per user
  std::vector<std::vector<double>> alpha;         // n_users x K
  std::vector<std::vector<double>> theta_hat;     // n_users x K
  std::vector<std::vector<std::int64_t>> counts;  // n_users x K
  std::vector<std::vector<double>> probs;         // M: one entry per reservoir slot

  std::size_t n_users() const { return items.size(); }
};

// Rebuilds every user's reservoir from a fresh ranking. Users with no
// previous-block interactions get a zero shift (uniform prior).
ReservoirState update_reservoir(const RankingContext& ranking, const CategoryHistogram& current,
                                const CategoryHistogram& previous, const CategoryMap& categories,
                                const ReservoirConfig& config);
ReservoirState update_reservoir_serial(const RankingContext& ranking,
                                       const CategoryHistogram& current,
                                       const CategoryHistogram& previous,
                                       const CategoryMap& categories,
                                       const ReservoirConfig& config);

// Distinct drawn items with multiplicities N_{u,j}, in reservoir slot order.
struct NegativeDraw {
  UserId user = 0;
  std::vector<ItemId> items;
  std::vector<std::int32_t> multiplicity;

  std::int64_t total() const;
};

// Multinomial(n_draws, M_u) over the user's reservoir slots. Returns nullopt
// when the user's reservoir is empty so the caller can fall back to uniform
// negatives.
std::optional<NegativeDraw> draw_negatives(const ReservoirState& state, UserId u,
                                           std::size_t n_draws, std::uint64_t seed);

// Debug dump: header, then `user,alpha_0..alpha_{K-1},theta_0..theta_{K-1},items`
// with the reservoir items space-separated in the last column.
void write_reservoir_dump(std::ostream& out, const ReservoirState& state);

}  // namespace sane
