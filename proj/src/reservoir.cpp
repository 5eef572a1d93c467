#include "sane/reservoir.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>

#include "sane/rng.hpp"

namespace sane {

void ReservoirConfig::validate() const {
  if (q < 1) throw Error("reservoir size Q must be at least 1");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw Error("prior strength lambda must be positive");
  if (n_categories < 1) throw Error("category count K must be at least 1");
  if (refresh_every < 1) throw Error("refresh_every_f must be at least 1");
}

std::vector<double> normalize_histogram(std::span<const std::int64_t> row) {
  if (row.empty()) throw Error("empty histogram row");
  std::int64_t total = 0;
  for (auto c : row) {
    if (c < 0) throw Error("negative histogram count");
    total += c;
  }
  std::vector<double> out(row.size());
  if (total == 0) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(row.size()));
    return out;
  }
  for (std::size_t k = 0; k < row.size(); ++k) {
    out[k] = static_cast<double>(row[k]) / static_cast<double>(total);
  }
  return out;
}

std::vector<double> interest_shift(std::span<const std::int64_t> current,
                                   std::span<const std::int64_t> previous) {
  if (current.size() != previous.size()) {
    throw Error("histogram length mismatch (" + std::to_string(current.size()) + " vs " +
                std::to_string(previous.size()) + ")");
  }
  const auto a = normalize_histogram(current);
  const auto b = normalize_histogram(previous);
  std::vector<double> shift(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) shift[k] = a[k] - b[k];
  return shift;
}

std::vector<double> prior_alpha(std::span<const double> shift, double lambda, std::size_t q,
                                bool flip_sign) {
  if (!(lambda > 0.0)) throw Error("prior strength lambda must be positive");
  if (q < 1) throw Error("reservoir size Q must be at least 1");
  if (shift.empty()) throw Error("empty shift vector");
  const double sign = flip_sign ? 1.0 : -1.0;
  double mx = -std::numeric_limits<double>::infinity();
  for (double s : shift) {
    if (!std::isfinite(s)) throw Error("non-finite interest shift");
    mx = std::max(mx, sign * s);
  }
  std::vector<double> alpha(shift.size());
  double total = 0.0;
  for (std::size_t k = 0; k < shift.size(); ++k) {
    alpha[k] = std::exp(sign * shift[k] - mx);
    total += alpha[k];
  }
  const double mass = lambda * static_cast<double>(q);
  for (auto& a : alpha) a = mass * (a / total);
  return alpha;
}

std::vector<double> posterior_theta(std::span<const double> alpha,
                                    std::span<const std::int64_t> counts) {
  if (alpha.size() != counts.size()) throw Error("alpha/count length mismatch");
  std::vector<double> theta(alpha.size());
  double denom = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    if (!(alpha[k] > 0.0)) throw Error("Dirichlet parameters must be positive");
    if (counts[k] < 0) throw Error("negative category count");
    theta[k] = alpha[k] + static_cast<double>(counts[k]);
    denom += theta[k];
  }
  for (auto& t : theta) t /= denom;
  return theta;
}

std::vector<double> sampling_probs(std::span<const double> theta,
                                   std::span<const ItemId> reservoir,
                                   const CategoryMap& categories) {
  if (reservoir.empty()) throw Error("empty reservoir");
  std::vector<double> probs(reservoir.size());
  double total = 0.0;
  for (std::size_t j = 0; j < reservoir.size(); ++j) {
    const auto item = reservoir[j];
    if (item < 0 || static_cast<std::size_t>(item) >= categories.size()) {
      throw Error("reservoir item " + std::to_string(item) + " has no category");
    }
    const auto c = categories[static_cast<std::size_t>(item)];
    if (c < 0 || static_cast<std::size_t>(c) >= theta.size()) {
      throw Error("reservoir item " + std::to_string(item) + " has out-of-range category");
    }
    probs[j] = theta[static_cast<std::size_t>(c)];
    total += probs[j];
  }
  for (auto& p : probs) p /= total;
  return probs;
}

std::vector<std::int64_t> reservoir_counts(std::span<const ItemId> reservoir,
                                           const CategoryMap& categories,
                                           std::size_t n_categories) {
  std::vector<std::int64_t> counts(n_categories, 0);
  for (auto item : reservoir) {
    if (item < 0 || static_cast<std::size_t>(item) >= categories.size()) {
      throw Error("reservoir item " + std::to_string(item) + " has no category");
    }
    const auto c = categories[static_cast<std::size_t>(item)];
    if (c < 0 || static_cast<std::size_t>(c) >= n_categories) {
      throw Error("reservoir item " + std::to_string(item) + " has out-of-range category");
    }
    ++counts[static_cast<std::size_t>(c)];
  }
  return counts;
}

namespace {

void check_inputs(const RankingContext& ranking, const CategoryHistogram& current,
                  const CategoryHistogram& previous, const ReservoirConfig& config) {
  config.validate();
  if (current.n_categories != config.n_categories || previous.n_categories != config.n_categories) {
    throw Error("histogram category count does not match the reservoir config");
  }
  if (current.counts.size() < ranking.top_negatives.size()) {
    throw Error("current histogram does not cover every ranked user");
  }
}

void update_user(std::size_t u, const RankingContext& ranking, const CategoryHistogram& current,
                 const CategoryHistogram& previous, const CategoryMap& categories,
                 const ReservoirConfig& config, ReservoirState& out) {
  const std::size_t k = config.n_categories;
  const auto& items = ranking.top_negatives[u];
  std::vector<double> shift(k, 0.0);
  const bool seen_before = u < previous.counts.size() &&
                           std::any_of(previous.counts[u].begin(), previous.counts[u].end(),
                                       [](std::int64_t c) { return c > 0; });
  if (seen_before) shift = interest_shift(current.counts[u], previous.counts[u]);
  out.items[u] = items;
  out.alpha[u] = prior_alpha(shift, config.lambda, config.q, config.flip_prior_sign);
  out.counts[u] = reservoir_counts(items, categories, k);
  out.theta_hat[u] = posterior_theta(out.alpha[u], out.counts[u]);
  if (!items.empty()) out.probs[u] = sampling_probs(out.theta_hat[u], items, categories);
}

ReservoirState allocate(std::size_t n) {
  ReservoirState s;
  s.items.resize(n);
  s.alpha.resize(n);
  s.theta_hat.resize(n);
  s.counts.resize(n);
  s.probs.resize(n);
  return s;
}

}  // namespace

ReservoirState update_reservoir(const RankingContext& ranking, const CategoryHistogram& current,
                                const CategoryHistogram& previous, const CategoryMap& categories,
                                const ReservoirConfig& config) {
  check_inputs(ranking, current, previous, config);
  const std::size_t n = ranking.top_negatives.size();
  ReservoirState out = allocate(n);
  const auto nn = static_cast<std::ptrdiff_t>(n);
  // Exceptions cannot cross the parallel region; capture the first one.
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 32)
  for (std::ptrdiff_t u = 0; u < nn; ++u) {
    try {
      update_user(static_cast<std::size_t>(u), ranking, current, previous, categories, config, out);
    } catch (...) {
#pragma omp critical(sane_reservoir_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

ReservoirState update_reservoir_serial(const RankingContext& ranking,
                                       const CategoryHistogram& current,
                                       const CategoryHistogram& previous,
                                       const CategoryMap& categories,
                                       const ReservoirConfig& config) {
  check_inputs(ranking, current, previous, config);
  const std::size_t n = ranking.top_negatives.size();
  ReservoirState out = allocate(n);
  for (std::size_t u = 0; u < n; ++u) update_user(u, ranking, current, previous, categories, config, out);
  return out;
}

std::int64_t NegativeDraw::total() const {
  std::int64_t t = 0;
  for (auto m : multiplicity) t += m;
  return t;
}

std::optional<NegativeDraw> draw_negatives(const ReservoirState& state, UserId u,
                                           std::size_t n_draws, std::uint64_t seed) {
  if (u < 0 || static_cast<std::size_t>(u) >= state.n_users()) {
    throw Error("user id " + std::to_string(u) + " out of range for the reservoir");
  }
  const auto& probs = state.probs[static_cast<std::size_t>(u)];
  const auto& items = state.items[static_cast<std::size_t>(u)];
  if (items.empty() || probs.empty()) return std::nullopt;

  Rng rng(seed);
  std::discrete_distribution<std::size_t> slot(probs.begin(), probs.end());
  std::vector<std::int32_t> tally(items.size(), 0);
  for (std::size_t d = 0; d < n_draws; ++d) ++tally[slot(rng)];

  NegativeDraw draw;
  draw.user = u;
  for (std::size_t j = 0; j < items.size(); ++j) {
    if (tally[j] == 0) continue;
    draw.items.push_back(items[j]);
    draw.multiplicity.push_back(tally[j]);
  }
  return draw;
}

void write_reservoir_dump(std::ostream& out, const ReservoirState& state) {
  const std::size_t k = state.alpha.empty() ? 0 : state.alpha.front().size();
  out << "user";
  for (std::size_t c = 0; c < k; ++c) out << ",alpha_" << c;
  for (std::size_t c = 0; c < k; ++c) out << ",theta_" << c;
  out << ",items\n";
  out << std::setprecision(10);
  for (std::size_t u = 0; u < state.n_users(); ++u) {
    out << u;
    for (double a : state.alpha[u]) out << "," << a;
    for (double t : state.theta_hat[u]) out << "," << t;
    out << ",";
    for (std::size_t j = 0; j < state.items[u].size(); ++j) {
      if (j) out << ' ';
      out << state.items[u][j];
    }
    out << "\n";
  }
}

}  // namespace sane
