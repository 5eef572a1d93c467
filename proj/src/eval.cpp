#include "sane/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <unordered_map>

#include "sane/kernels.hpp"
#include "sane/rng.hpp"

namespace sane {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_k(std::size_t k) {
  if (k < 1) throw Error("cutoff K must be at least 1");
}

bool relevant(const std::vector<ItemId>& truth, ItemId i) {
  return std::binary_search(truth.begin(), truth.end(), i);
}

std::size_t n_users(const EvalRequest& r) {
  return std::max(r.ranked.size(), r.ground_truth.size());
}

const std::vector<ItemId>& row_or_empty(const std::vector<std::vector<ItemId>>& rows,
                                        std::size_t u) {
  static const std::vector<ItemId> empty;
  return u < rows.size() ? rows[u] : empty;
}

void finish_mean(MetricValues& m) {
  double total = 0.0;
  m.n_evaluated = 0;
  for (double v : m.per_user) {
    if (std::isnan(v)) continue;
    total += v;
    ++m.n_evaluated;
  }
  m.mean = m.n_evaluated ? total / static_cast<double>(m.n_evaluated) : 0.0;
}

}  // namespace

RecallPrecision recall_precision_at_k(const EvalRequest& request, std::size_t k) {
  check_k(k);
  const std::size_t n = n_users(request);
  RecallPrecision out;
  out.recall.per_user.assign(n, kNaN);
  out.precision.per_user.assign(n, kNaN);
  for (std::size_t u = 0; u < n; ++u) {
    const auto& truth = row_or_empty(request.ground_truth, u);
    if (truth.empty()) continue;
    const auto& ranked = row_or_empty(request.ranked, u);
    std::size_t hits = 0;
    for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) hits += relevant(truth, ranked[r]);
    out.recall.per_user[u] = static_cast<double>(hits) / static_cast<double>(truth.size());
    out.precision.per_user[u] = static_cast<double>(hits) / static_cast<double>(k);
  }
  finish_mean(out.recall);
  finish_mean(out.precision);
  if (out.recall.n_evaluated == 0) throw Error("no user has ground-truth items to evaluate");
  return out;
}

MetricValues ndcg_at_k(const EvalRequest& request, std::size_t k) {
  check_k(k);
  double norm = 0.0;
  for (std::size_t r = 1; r <= k; ++r) norm += 1.0 / std::log2(1.0 + static_cast<double>(r));
  const std::size_t n = n_users(request);
  MetricValues out;
  out.per_user.assign(n, kNaN);
  for (std::size_t u = 0; u < n; ++u) {
    const auto& truth = row_or_empty(request.ground_truth, u);
    if (truth.empty()) continue;
    const auto& ranked = row_or_empty(request.ranked, u);
    double dcg = 0.0;
    for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
      if (relevant(truth, ranked[r])) dcg += 1.0 / std::log2(2.0 + static_cast<double>(r));
    }
    out.per_user[u] = dcg / norm;
  }
  finish_mean(out);
  return out;
}

MetricValues map_at_k(const EvalRequest& request, std::size_t k) {
  check_k(k);
  const std::size_t n = n_users(request);
  MetricValues out;
  out.per_user.assign(n, kNaN);
  for (std::size_t u = 0; u < n; ++u) {
    const auto& truth = row_or_empty(request.ground_truth, u);
    if (truth.empty()) continue;
    const auto& ranked = row_or_empty(request.ranked, u);
    std::size_t hits = 0;
    double ap = 0.0;
    for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
      if (!relevant(truth, ranked[r])) continue;
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
    out.per_user[u] = ap / static_cast<double>(truth.size());
  }
  finish_mean(out);
  return out;
}

std::vector<MetricRow> evaluate_request(const EvalRequest& request, std::size_t block) {
  auto cutoffs = request.cutoffs;
  std::sort(cutoffs.begin(), cutoffs.end());
  cutoffs.erase(std::unique(cutoffs.begin(), cutoffs.end()), cutoffs.end());
  std::vector<MetricRow> rows;
  for (auto k : cutoffs) {
    const auto rp = recall_precision_at_k(request, k);
    rows.push_back({block, k, "recall", rp.recall.mean});
    rows.push_back({block, k, "precision", rp.precision.mean});
    rows.push_back({block, k, "map", map_at_k(request, k).mean});
    rows.push_back({block, k, "ndcg", ndcg_at_k(request, k).mean});
  }
  return rows;
}

std::vector<std::vector<ItemId>> rank_items(const NodeRepresentations& reps,
                                            const std::vector<std::vector<ItemId>>& excluded,
                                            std::size_t k) {
  const auto top = kernels::top_scored_items(reps.user_reps, reps.item_reps, excluded, k);
  std::vector<std::vector<ItemId>> out(top.size());
  for (std::size_t u = 0; u < top.size(); ++u) {
    out[u].reserve(top[u].size());
    for (const auto& s : top[u]) out[u].push_back(s.item);
  }
  return out;
}

namespace {

void drop_unknown(std::vector<std::vector<ItemId>>& sets, std::size_t n_items) {
  for (auto& s : sets) {
    s.erase(std::remove_if(s.begin(), s.end(),
                           [&](ItemId i) { return static_cast<std::size_t>(i) >= n_items; }),
            s.end());
  }
}

}  // namespace

EvalRequest build_request(const NodeRepresentations& reps, const InteractionLog& log,
                          Range target, const std::vector<std::size_t>& cutoffs) {
  if (cutoffs.empty()) throw Error("no evaluation cutoffs");
  if (target.end > log.events.size() || target.begin > target.end) {
    throw Error("evaluation range outside the log");
  }
  EvalRequest req;
  req.cutoffs = cutoffs;
  auto history = user_items_in(log, Range{0, target.begin}, reps.n_users());
  drop_unknown(history, reps.n_items());
  req.ground_truth = user_items_in(log, target, reps.n_users());
  drop_unknown(req.ground_truth, reps.n_items());
  const auto max_k = *std::max_element(cutoffs.begin(), cutoffs.end());
  req.ranked = rank_items(reps, history, max_k);
  return req;
}

double recall_at_20(const NodeRepresentations& reps, const InteractionLog& log, Range target) {
  const auto req = build_request(reps, log, target, {20});
  bool any = false;
  for (const auto& g : req.ground_truth) any = any || !g.empty();
  if (!any) return kNaN;
  return recall_precision_at_k(req, 20).recall.mean;
}

Matrix normalized_histograms(const CategoryHistogram& hist) {
  const auto n = static_cast<Eigen::Index>(hist.counts.size());
  const auto k = static_cast<Eigen::Index>(hist.n_categories);
  Matrix out(n, k);
  for (Eigen::Index u = 0; u < n; ++u) {
    const auto& row = hist.counts[static_cast<std::size_t>(u)];
    const auto total = std::accumulate(row.begin(), row.end(), std::int64_t{0});
    for (Eigen::Index c = 0; c < k; ++c) {
      out(u, c) = total ? static_cast<double>(row[static_cast<std::size_t>(c)]) /
                              static_cast<double>(total)
                        : 1.0 / static_cast<double>(k);
    }
  }
  return out;
}

std::vector<double> interest_shift_indicator(const Matrix& current, const Matrix& previous) {
  if (current.rows() != previous.rows() || current.cols() != previous.cols()) {
    throw Error("histogram shape mismatch (" + std::to_string(current.rows()) + "x" +
                std::to_string(current.cols()) + " vs " + std::to_string(previous.rows()) + "x" +
                std::to_string(previous.cols()) + ")");
  }
  if (current.cols() == 0) throw Error("histograms have no categories");
  std::vector<double> iss(static_cast<std::size_t>(current.rows()));
  for (Eigen::Index u = 0; u < current.rows(); ++u) {
    iss[static_cast<std::size_t>(u)] =
        (current.row(u) - previous.row(u)).squaredNorm() / static_cast<double>(current.cols());
  }
  return iss;
}

std::vector<UserId> high_shift_cohort(const std::vector<double>& iss,
                                      const std::vector<bool>& eligible, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("cohort fraction must lie in (0, 1]");
  std::vector<UserId> pool;
  for (std::size_t u = 0; u < iss.size(); ++u) {
    if (u < eligible.size() && eligible[u]) pool.push_back(static_cast<UserId>(u));
  }
  const auto take = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(pool.size()) - 1e-9));
  std::stable_sort(pool.begin(), pool.end(), [&](UserId a, UserId b) { return iss[a] > iss[b]; });
  pool.resize(std::min(take, pool.size()));
  std::sort(pool.begin(), pool.end());
  return pool;
}

double cohort_mean(const MetricValues& values, const std::vector<UserId>& cohort) {
  double total = 0.0;
  std::size_t n = 0;
  for (auto u : cohort) {
    if (static_cast<std::size_t>(u) >= values.per_user.size()) continue;
    const double v = values.per_user[u];
    if (std::isnan(v)) continue;
    total += v;
    ++n;
  }
  return n ? total / static_cast<double>(n) : kNaN;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows) {
  out << "block,cutoff,metric,value\n";
  out << std::setprecision(10);
  for (const auto& r : rows) out << r.block << "," << r.cutoff << "," << r.metric << "," << r.value << "\n";
}

SynthDataset synth_drift_dataset(std::size_t n_users, std::size_t n_items, std::size_t k_true,
                                 double drift_fraction, std::size_t flip_block,
                                 std::size_t n_blocks, std::size_t events_per_user_block,
                                 std::uint64_t seed, double dominant_prob) {
  if (k_true < 2) throw Error("K_true must be at least 2");
  if (!(drift_fraction >= 0.0 && drift_fraction <= 1.0)) {
    throw Error("drift_fraction must lie in [0, 1]");
  }
  if (!(dominant_prob > 0.0 && dominant_prob <= 1.0)) {
    throw Error("dominant_prob must lie in (0, 1]");
  }
  if (n_users == 0 || n_blocks == 0 || events_per_user_block == 0) {
    throw Error("n_users, n_blocks and events_per_user_block must be positive");
  }
  if (n_items < k_true) throw Error("need at least one item per category");
  if (flip_block < 1 || flip_block > n_blocks) {
    throw Error("flip_block must name an incremental period in [1, n_blocks]");
  }

  // Contiguous item ranges per category.
  std::vector<Category> raw_cat(n_items);
  std::vector<std::vector<ItemId>> members(k_true);
  for (std::size_t i = 0; i < n_items; ++i) {
    raw_cat[i] = static_cast<Category>(i * k_true / n_items);
    members[static_cast<std::size_t>(raw_cat[i])].push_back(static_cast<ItemId>(i));
  }

  Rng rng(derive_seed(seed, {0}));
  std::uniform_int_distribution<Category> any_cat(0, static_cast<Category>(k_true - 1));
  std::vector<Category> before(n_users), after(n_users);
  for (auto& d : before) d = any_cat(rng);
  std::vector<std::size_t> order(n_users);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_drift =
      static_cast<std::size_t>(std::llround(drift_fraction * static_cast<double>(n_users)));
  std::vector<bool> drifting(n_users, false);
  for (std::size_t j = 0; j < n_drift; ++j) drifting[order[j]] = true;
  std::uniform_int_distribution<Category> other(0, static_cast<Category>(k_true - 2));
  for (std::size_t u = 0; u < n_users; ++u) {
    after[u] = before[u];
    if (!drifting[u]) continue;
    const Category c = other(rng);
    after[u] = c >= before[u] ? c + 1 : c;
  }

  const auto base_epu = static_cast<std::size_t>(
      std::llround(1.5 * static_cast<double>(n_blocks * events_per_user_block)));
  constexpr std::int64_t kPeriod = 1'000'000;
  const double rest = (1.0 - dominant_prob) / static_cast<double>(k_true - 1);
  std::vector<InteractionEvent> events;
  events.reserve(n_users * (base_epu + n_blocks * events_per_user_block));
  std::uniform_int_distribution<std::int64_t> when(0, kPeriod - 1);
  for (std::size_t b = 0; b <= n_blocks; ++b) {
    const std::size_t per_user = b == 0 ? base_epu : events_per_user_block;
    for (std::size_t u = 0; u < n_users; ++u) {
      const Category dom = b >= flip_block ? after[u] : before[u];
      std::vector<double> w(k_true, rest);
      w[static_cast<std::size_t>(dom)] = dominant_prob;
      std::discrete_distribution<std::size_t> pick_cat(w.begin(), w.end());
      for (std::size_t e = 0; e < per_user; ++e) {
        const auto& pool = members[pick_cat(rng)];
        std::uniform_int_distribution<std::size_t> pick_item(0, pool.size() - 1);
        events.push_back({static_cast<UserId>(u), pool[pick_item(rng)],
                          static_cast<std::int64_t>(b) * kPeriod + when(rng)});
      }
    }
  }

  SynthDataset out;
  out.log = make_log(std::move(events));
  out.n_categories = k_true;
  out.flip_block = flip_block;
  out.dominant_prob = dominant_prob;
  out.base_events_per_user = base_epu;
  out.categories.resize(out.log.n_items);
  for (std::size_t i = 0; i < out.log.n_items; ++i) {
    out.categories[i] = raw_cat[static_cast<std::size_t>(std::stoll(out.log.raw_item_ids[i]))];
  }
  out.drifting.resize(out.log.n_users);
  out.dominant_before.resize(out.log.n_users);
  out.dominant_after.resize(out.log.n_users);
  for (std::size_t u = 0; u < out.log.n_users; ++u) {
    const auto raw = static_cast<std::size_t>(std::stoll(out.log.raw_user_ids[u]));
    out.drifting[u] = drifting[raw];
    out.dominant_before[u] = before[raw];
    out.dominant_after[u] = after[raw];
  }
  return out;
}

std::vector<double> synth_category_probs(const SynthDataset& data, UserId u, std::size_t period) {
  if (u < 0 || static_cast<std::size_t>(u) >= data.dominant_before.size()) {
    throw Error("user id out of range");
  }
  const std::size_t k = data.n_categories;
  std::vector<double> w(k, (1.0 - data.dominant_prob) / static_cast<double>(k - 1));
  const Category dom = period >= data.flip_block ? data.dominant_after[u] : data.dominant_before[u];
  w[static_cast<std::size_t>(dom)] = data.dominant_prob;
  return w;
}

void write_interactions(std::ostream& out, const InteractionLog& log) {
  for (const auto& e : log.events) {
    out << log.raw_user_ids[e.user] << "," << log.raw_item_ids[e.item] << "," << e.timestamp << "\n";
  }
}

void write_raw_categories(std::ostream& out, const InteractionLog& log,
                          const CategoryMap& categories) {
  for (std::size_t i = 0; i < log.n_items && i < categories.size(); ++i) {
    out << log.raw_item_ids[i] << "," << categories[i] << "\n";
  }
}

CategoryMap read_raw_categories(std::istream& in, const InteractionLog& log) {
  std::unordered_map<std::string, std::size_t> dense;
  for (std::size_t i = 0; i < log.raw_item_ids.size(); ++i) dense.emplace(log.raw_item_ids[i], i);
  CategoryMap out(log.n_items, -1);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw IngestError(lineno, "expected 'item,category'");
    const auto item = line.substr(0, comma);
    const auto cat_text = line.substr(comma + 1);
    Category c = 0;
    const auto [ptr, ec] = std::from_chars(cat_text.data(), cat_text.data() + cat_text.size(), c);
    if (ec != std::errc() || ptr != cat_text.data() + cat_text.size() || c < 0) {
      throw IngestError(lineno, "bad category '" + cat_text + "'");
    }
    const auto it = dense.find(item);
    if (it == dense.end()) continue;  // item never interacted with
    out[it->second] = c;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] < 0) throw Error("item '" + log.raw_item_ids[i] + "' has no category");
  }
  return out;
}

}  // namespace sane
