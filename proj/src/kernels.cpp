#include "sane/kernels.hpp"

#include <algorithm>

namespace sane::kernels {

namespace {

inline void aggregate_row(const Matrix& src, const std::vector<std::int32_t>& nbrs,
                          Eigen::Ref<Eigen::RowVectorXd> out) {
  out.setZero();
  if (nbrs.empty()) return;
  for (const auto w : nbrs) out += src.row(w);
  out /= static_cast<double>(nbrs.size());
}

inline void adjoint_row(const Matrix& grad, const std::vector<std::vector<std::int32_t>>& fwd,
                        const std::vector<std::int32_t>& sources,
                        Eigen::Ref<Eigen::RowVectorXd> out) {
  out.setZero();
  for (const auto v : sources) out += grad.row(v) / static_cast<double>(fwd[v].size());
}

inline bool ranks_before(const ScoredItem& a, const ScoredItem& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.item < b.item;
}

}  // namespace

Matrix mean_aggregate(const Matrix& src, const std::vector<std::vector<std::int32_t>>& adj) {
  Matrix out(static_cast<Eigen::Index>(adj.size()), src.cols());
  const auto n = static_cast<std::ptrdiff_t>(adj.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t v = 0; v < n; ++v) aggregate_row(src, adj[v], out.row(v));
  return out;
}

Matrix mean_aggregate_serial(const Matrix& src,
                             const std::vector<std::vector<std::int32_t>>& adj) {
  Matrix out(static_cast<Eigen::Index>(adj.size()), src.cols());
  for (std::size_t v = 0; v < adj.size(); ++v) aggregate_row(src, adj[v], out.row(v));
  return out;
}

Matrix mean_aggregate_adjoint(const Matrix& grad,
                              const std::vector<std::vector<std::int32_t>>& fwd,
                              const std::vector<std::vector<std::int32_t>>& rev,
                              std::size_t n_out) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n_out), grad.cols());
  const auto n = static_cast<std::ptrdiff_t>(std::min(n_out, rev.size()));
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t w = 0; w < n; ++w) adjoint_row(grad, fwd, rev[w], out.row(w));
  return out;
}

Matrix mean_aggregate_adjoint_serial(const Matrix& grad,
                                     const std::vector<std::vector<std::int32_t>>& fwd,
                                     const std::vector<std::vector<std::int32_t>>& rev,
                                     std::size_t n_out) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n_out), grad.cols());
  const std::size_t n = std::min(n_out, rev.size());
  for (std::size_t w = 0; w < n; ++w) adjoint_row(grad, fwd, rev[w], out.row(w));
  return out;
}

std::vector<ScoredItem> top_scored_items_row(const Matrix& users, std::size_t u,
                                             const Matrix& items,
                                             std::span<const std::int32_t> excluded,
                                             std::size_t count) {
  const auto n_items = static_cast<std::size_t>(items.rows());
  std::vector<ScoredItem> cand;
  cand.reserve(n_items);
  const auto urow = users.row(static_cast<Eigen::Index>(u));
  std::size_t ex = 0;
  for (std::size_t i = 0; i < n_items; ++i) {
    while (ex < excluded.size() && static_cast<std::size_t>(excluded[ex]) < i) ++ex;
    if (ex < excluded.size() && static_cast<std::size_t>(excluded[ex]) == i) continue;
    cand.push_back({static_cast<std::int32_t>(i), urow.dot(items.row(static_cast<Eigen::Index>(i)))});
  }
  const std::size_t keep = std::min(count, cand.size());
  if (keep < cand.size()) {
    std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                     ranks_before);
    cand.resize(keep);
  }
  std::sort(cand.begin(), cand.end(), ranks_before);
  return cand;
}

std::vector<std::vector<ScoredItem>> top_scored_items(
    const Matrix& users, const Matrix& items,
    const std::vector<std::vector<std::int32_t>>& excluded, std::size_t count) {
  const auto n_users = static_cast<std::ptrdiff_t>(users.rows());
  std::vector<std::vector<ScoredItem>> out(static_cast<std::size_t>(n_users));
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t u = 0; u < n_users; ++u) {
    const auto uu = static_cast<std::size_t>(u);
    std::span<const std::int32_t> ex;
    if (uu < excluded.size()) ex = excluded[uu];
    out[uu] = top_scored_items_row(users, uu, items, ex, count);
  }
  return out;
}

std::vector<std::vector<ScoredItem>> top_scored_items_serial(
    const Matrix& users, const Matrix& items,
    const std::vector<std::vector<std::int32_t>>& excluded, std::size_t count) {
  const auto n_users = static_cast<std::size_t>(users.rows());
  std::vector<std::vector<ScoredItem>> out(n_users);
  for (std::size_t u = 0; u < n_users; ++u) {
    std::span<const std::int32_t> ex;
    if (u < excluded.size()) ex = excluded[u];
    out[u] = top_scored_items_row(users, u, items, ex, count);
  }
  return out;
}

}  // namespace sane::kernels
