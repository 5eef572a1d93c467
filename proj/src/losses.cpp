#include "sane/losses.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "sane/rng.hpp"

namespace sane {

void LossWeights::validate() const {
  if (!(lambda_kd >= 0.0) || !(beta >= 0.0) || !(lambda_reg >= 0.0)) {
    throw Error("loss weights must be non-negative");
  }
}

void DistillConfig::validate() const {
  if (!(tau > 0.0)) throw Error("contrastive temperature must be positive");
}

double neg_log_sigmoid(double x) {
  // -ln sigma(x) = softplus(-x)
  if (x > 0.0) return std::log1p(std::exp(-x));
  return -x + std::log1p(std::exp(x));
}

namespace {

void check_ids(const Triple& t, const NodeRepresentations& reps) {
  const auto nu = reps.n_users();
  const auto ni = reps.n_items();
  if (t.user < 0 || static_cast<std::size_t>(t.user) >= nu) {
    throw Error("triple user " + std::to_string(t.user) + " out of range");
  }
  if (t.positive < 0 || static_cast<std::size_t>(t.positive) >= ni ||
      t.negative < 0 || static_cast<std::size_t>(t.negative) >= ni) {
    throw Error("triple item out of range");
  }
}

// Shared by BPR and SANE so unit multiplicities give bit-identical results.
LossValue weighted_triplets(const TripletBatch& batch, const NodeRepresentations& reps,
                            double lambda_reg, bool use_multiplicity) {
  if (batch.triples.empty()) throw Error("empty triplet batch");
  LossValue out;
  out.grad = RepGradient::zeros_like(reps);
  for (const auto& t : batch.triples) {
    check_ids(t, reps);
    if (t.multiplicity < 1) throw Error("triple multiplicity must be at least 1");
    const double weight = use_multiplicity ? static_cast<double>(t.multiplicity) : 1.0;
    const auto eu = reps.user_reps.row(t.user);
    const auto ei = reps.item_reps.row(t.positive);
    const auto ej = reps.item_reps.row(t.negative);
    const double gap = eu.dot(ei) - eu.dot(ej);
    out.value += weight * neg_log_sigmoid(gap);
    // d/dgap of -ln sigma(gap) = -sigma(-gap)
    const double g = weight * (-1.0 / (1.0 + std::exp(gap)));
    out.grad.user.row(t.user) += g * (ei - ej);
    out.grad.item.row(t.positive) += g * eu;
    out.grad.item.row(t.negative) -= g * eu;
  }
  if (lambda_reg > 0.0) {
    const auto reg = l2_touched({&batch}, reps, lambda_reg);
    out.value += reg.value;
    out.grad += reg.grad;
  }
  return out;
}

}  // namespace

LossValue bpr_loss(const TripletBatch& batch, const NodeRepresentations& reps, double lambda_reg) {
  for (const auto& t : batch.triples) {
    if (t.multiplicity != 1) throw Error("BPR expects unit multiplicities");
  }
  return weighted_triplets(batch, reps, lambda_reg, false);
}

LossValue sane_loss(const TripletBatch& batch, const NodeRepresentations& reps, double lambda_reg) {
  return weighted_triplets(batch, reps, lambda_reg, true);
}

LossValue l2_touched(const std::vector<const TripletBatch*>& batches,
                     const NodeRepresentations& reps, double lambda) {
  LossValue out;
  out.grad = RepGradient::zeros_like(reps);
  if (lambda == 0.0) return out;
  std::set<UserId> users;
  std::set<ItemId> items;
  for (const auto* b : batches) {
    for (const auto& t : b->triples) {
      check_ids(t, reps);
      users.insert(t.user);
      items.insert(t.positive);
      items.insert(t.negative);
    }
  }
  for (auto u : users) {
    out.value += lambda * reps.user_reps.row(u).squaredNorm();
    out.grad.user.row(u) += 2.0 * lambda * reps.user_reps.row(u);
  }
  for (auto i : items) {
    out.value += lambda * reps.item_reps.row(i).squaredNorm();
    out.grad.item.row(i) += 2.0 * lambda * reps.item_reps.row(i);
  }
  return out;
}

Neighbourhoods Neighbourhoods::of(const InteractionGraph& graph) {
  Neighbourhoods n;
  n.user_items = graph.user_item_sets();
  n.item_users.resize(graph.item_adj.size());
  for (std::size_t i = 0; i < graph.item_adj.size(); ++i) {
    n.item_users[i] = graph.item_adj[i];
    std::sort(n.item_users[i].begin(), n.item_users[i].end());
    n.item_users[i].erase(std::unique(n.item_users[i].begin(), n.item_users[i].end()),
                          n.item_users[i].end());
  }
  return n;
}

namespace {

void check_coverage(const NodeRepresentations& teacher, const NodeRepresentations& student,
                    const InteractionGraph& graph_prev) {
  if (teacher.n_users() < graph_prev.n_users || teacher.n_items() < graph_prev.n_items ||
      student.n_users() < graph_prev.n_users || student.n_items() < graph_prev.n_items) {
    throw Error("teacher and student must cover the previous block's node universe");
  }
}

// One side of the local-structure term: nodes on `self` aggregate rows of `other`.
// Adds the gradient into (g_self, g_other) and returns the averaged squared gap.
double local_side(const Matrix& t_self, const Matrix& t_other, const Matrix& s_self,
                  const Matrix& s_other, const std::vector<std::vector<std::int32_t>>& nbrs,
                  Matrix& g_self, Matrix& g_other) {
  std::size_t active = 0;
  for (const auto& n : nbrs) active += n.empty() ? 0 : 1;
  if (active == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(active);
  double total = 0.0;
  for (std::size_t v = 0; v < nbrs.size(); ++v) {
    const auto& n = nbrs[v];
    if (n.empty()) continue;
    Eigen::RowVectorXd tc = Eigen::RowVectorXd::Zero(t_other.cols());
    Eigen::RowVectorXd sc = Eigen::RowVectorXd::Zero(s_other.cols());
    for (auto w : n) {
      tc += t_other.row(w);
      sc += s_other.row(w);
    }
    const double m = 1.0 / static_cast<double>(n.size());
    tc *= m;
    sc *= m;
    const auto vv = static_cast<Eigen::Index>(v);
    const double gap = t_self.row(vv).dot(tc) - s_self.row(vv).dot(sc);
    total += gap * gap;
    // d/ds of (t - s)^2 = -2 (t - s)
    const double g = -2.0 * gap * inv;
    g_self.row(vv) += g * sc;
    for (auto w : n) g_other.row(w) += g * m * s_self.row(vv);
  }
  return total * inv;
}

}  // namespace

LossValue kd_local_items(const NodeRepresentations& teacher, const NodeRepresentations& student,
                         const Neighbourhoods& nbrs) {
  LossValue out;
  out.grad = RepGradient::zeros_like(student);
  out.value = local_side(teacher.item_reps, teacher.user_reps, student.item_reps,
                         student.user_reps, nbrs.item_users, out.grad.item, out.grad.user);
  return out;
}

LossValue kd_local(const NodeRepresentations& teacher, const NodeRepresentations& student,
                   const InteractionGraph& graph_prev) {
  check_coverage(teacher, student, graph_prev);
  const auto nbrs = Neighbourhoods::of(graph_prev);
  LossValue out = kd_local_items(teacher, student, nbrs);
  out.value += local_side(teacher.user_reps, teacher.item_reps, student.user_reps,
                          student.item_reps, nbrs.user_items, out.grad.user, out.grad.item);
  return out;
}

std::vector<std::vector<ItemId>> sample_contrastive_sets(const InteractionGraph& graph_prev,
                                                         std::size_t n_negatives,
                                                         std::uint64_t seed) {
  const auto nbrs = graph_prev.user_item_sets();
  std::vector<std::vector<ItemId>> sets(nbrs.size());
  const std::size_t n_items = graph_prev.n_items;
  for (std::size_t u = 0; u < nbrs.size(); ++u) {
    const auto& pos = nbrs[u];
    if (pos.empty()) continue;
    sets[u] = pos;
    const std::size_t available = n_items - pos.size();
    const std::size_t want = std::min(n_negatives, available);
    if (want == 0) continue;
    Rng rng(derive_seed(seed, {u}));
    std::uniform_int_distribution<ItemId> pick(0, static_cast<ItemId>(n_items - 1));
    std::set<ItemId> drawn;
    while (drawn.size() < want) {
      const ItemId i = pick(rng);
      if (std::binary_search(pos.begin(), pos.end(), i)) continue;
      if (drawn.insert(i).second) sets[u].push_back(i);
    }
  }
  return sets;
}

LossValue kd_contrastive(const NodeRepresentations& teacher, const NodeRepresentations& student,
                         const InteractionGraph& graph_prev,
                         const std::vector<std::vector<ItemId>>& candidate_sets, double tau) {
  if (!(tau > 0.0)) throw Error("contrastive temperature must be positive");
  check_coverage(teacher, student, graph_prev);
  const auto nbrs = Neighbourhoods::of(graph_prev);
  LossValue out = kd_local_items(teacher, student, nbrs);

  std::size_t active = 0;
  for (const auto& n : nbrs.user_items) active += n.empty() ? 0 : 1;
  if (active == 0) return out;
  const double inv_users = 1.0 / static_cast<double>(active);

  for (std::size_t u = 0; u < nbrs.user_items.size(); ++u) {
    const auto& pos = nbrs.user_items[u];
    if (pos.empty()) continue;
    if (u >= candidate_sets.size() || candidate_sets[u].empty()) {
      throw Error("empty contrastive candidate set for user " + std::to_string(u));
    }
    const auto& cand = candidate_sets[u];
    const auto uu = static_cast<Eigen::Index>(u);
    const auto su = student.user_reps.row(uu);
    std::vector<double> logits(cand.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cand.size(); ++j) {
      logits[j] = su.dot(teacher.item_reps.row(cand[j])) / tau;
      mx = std::max(mx, logits[j]);
    }
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    const double log_z = mx + std::log(z);

    const double inv_pos = 1.0 / static_cast<double>(pos.size());
    double term = 0.0;
    Eigen::RowVectorXd pos_sum = Eigen::RowVectorXd::Zero(teacher.item_reps.cols());
    for (auto i : pos) {
      term -= su.dot(teacher.item_reps.row(i)) / tau - log_z;
      pos_sum += teacher.item_reps.row(i);
    }
    out.value += inv_users * inv_pos * term;

    Eigen::RowVectorXd expect = Eigen::RowVectorXd::Zero(teacher.item_reps.cols());
    for (std::size_t j = 0; j < cand.size(); ++j) {
      expect += std::exp(logits[j] - log_z) * teacher.item_reps.row(cand[j]);
    }
    // d/ds_u = -(1/|U|)(1/|N|)(1/tau) [sum_{i in N} t_i - |N| E_pi[t]]
    out.grad.user.row(uu) -= inv_users * inv_pos / tau *
                             (pos_sum - static_cast<double>(pos.size()) * expect);
  }
  return out;
}

LossValue kd_contrastive(const NodeRepresentations& teacher, const NodeRepresentations& student,
                         const InteractionGraph& graph_prev, const DistillConfig& config) {
  config.validate();
  const auto sets = sample_contrastive_sets(graph_prev, config.n_negatives, config.seed);
  return kd_contrastive(teacher, student, graph_prev, sets, config.tau);
}

namespace {

void require_finite(double v, const char* name) {
  if (!std::isfinite(v)) throw Error(std::string("non-finite loss component '") + name + "'");
}

void add_if_present(RepGradient& acc, const RepGradient& g, double w) {
  if (g.user.size() == acc.user.size() && g.user.size() > 0) acc.user += w * g.user;
  if (g.item.size() == acc.item.size() && g.item.size() > 0) acc.item += w * g.item;
}

}  // namespace

TotalLoss total_loss(const LossComponents& parts, const LossWeights& weights,
                     const NodeRepresentations& reps) {
  weights.validate();
  require_finite(parts.triplet.value, "triplet");
  require_finite(parts.kd.value, "kd");
  require_finite(parts.sane.value, "sane");
  require_finite(parts.kl.value, "kl");
  require_finite(parts.reg.value, "reg");

  TotalLoss t;
  t.triplet = parts.triplet.value;
  t.kd = weights.lambda_kd * parts.kd.value;
  t.sane = parts.sane.value;
  t.kl = weights.beta * parts.kl.value;
  t.reg = parts.reg.value;
  t.value = t.triplet + t.kd + t.sane + t.kl + t.reg;

  t.grad = RepGradient::zeros_like(reps);
  add_if_present(t.grad, parts.triplet.grad, 1.0);
  if (weights.lambda_kd != 0.0) add_if_present(t.grad, parts.kd.grad, weights.lambda_kd);
  add_if_present(t.grad, parts.sane.grad, 1.0);
  add_if_present(t.grad, parts.reg.grad, 1.0);
  if (weights.beta != 0.0 && parts.kl.grad_items.size() > 0) {
    // Clustering only reads the item rows.
    t.grad.item.topRows(parts.kl.grad_items.rows()) += weights.beta * parts.kl.grad_items;
  }
  if (parts.kl.grad_centroids.size() > 0) t.grad_centroids = weights.beta * parts.kl.grad_centroids;
  return t;
}

}  // namespace sane
