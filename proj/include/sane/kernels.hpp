#pragma once

// Data-parallel inner loops. Each kernel has an OpenMP version (used by the
// library) and a serial reference with the same per-row summation order, so
// the two agree bitwise; tests and bench/ compare them.

#include <cstddef>
#include <span>
#include <vector>

#include "sane/common.hpp"

namespace sane::kernels {

// out[v] = mean of src rows listed in adj[v]; zero row when adj[v] is empty.
Matrix mean_aggregate(const Matrix& src, const std::vector<std::vector<std::int32_t>>& adj);
Matrix mean_aggregate_serial(const Matrix& src,
                             const std::vector<std::vector<std::int32_t>>& adj);

// Adjoint of mean_aggregate: out[w] = sum over v in rev[w] of grad[v] / |fwd[v]|.
// `rev` must be the transpose of `fwd` (with multiplicity).
Matrix mean_aggregate_adjoint(const Matrix& grad,
                              const std::vector<std::vector<std::int32_t>>& fwd,
                              const std::vector<std::vector<std::int32_t>>& rev,
                              std::size_t n_out);
Matrix mean_aggregate_adjoint_serial(const Matrix& grad,
                                     const std::vector<std::vector<std::int32_t>>& fwd,
                                     const std::vector<std::vector<std::int32_t>>& rev,
                                     std::size_t n_out);

struct ScoredItem {
  std::int32_t item;
  double score;
};

// For each user row, the `count` highest-scoring item rows not listed in
// excluded[u] (sorted ascending), ordered by score descending then item id
// ascending. Uses nth_element for average-linear selection before the final sort.
std::vector<std::vector<ScoredItem>> top_scored_items(
    const Matrix& users, const Matrix& items,
    const std::vector<std::vector<std::int32_t>>& excluded, std::size_t count);
std::vector<std::vector<ScoredItem>> top_scored_items_serial(
    const Matrix& users, const Matrix& items,
    const std::vector<std::vector<std::int32_t>>& excluded, std::size_t count);

// Single-user selection used by both variants above.
std::vector<ScoredItem> top_scored_items_row(const Matrix& users, std::size_t u,
                                             const Matrix& items,
                                             std::span<const std::int32_t> excluded,
                                             std::size_t count);

}  // namespace sane::kernels
