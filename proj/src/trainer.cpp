#include "sane/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

#include "sane/eval.hpp"
#include "sane/rng.hpp"

namespace sane {

void TrainerConfig::validate() const {
  if (batch_size < 1) throw Error("batch_size must be at least 1");
  if (n_uniform + n_reservoir < 1) throw Error("N1 + N2 must be at least 1");
  if (patience < 1) throw Error("patience must be at least 1");
  if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw Error("Adam decay rates must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw Error("adam_epsilon must be positive");
  if (max_epochs_base < 1 || max_epochs_incremental < 1) throw Error("max epochs must be at least 1");
  if (min_epochs_base > max_epochs_base || min_epochs_incremental > max_epochs_incremental) {
    throw Error("min epochs exceed max epochs");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("dropout must lie in [0, 1)");
  if (dim < 1) throw Error("dim must be at least 1");
}

void write_train_log(std::ostream& out, const std::vector<TrainRecord>& records,
                     bool include_time) {
  out << "block,epoch,steps,triplet,kd,sane,kl,reg,total,val_recall20,refreshed,seconds\n";
  out << std::setprecision(12);
  for (const auto& r : records) {
    out << r.block << "," << r.epoch << "," << r.steps << "," << r.triplet << "," << r.kd << ","
        << r.sane << "," << r.kl << "," << r.reg << "," << r.total << "," << r.val_recall20 << ","
        << (r.reservoir_refreshed ? 1 : 0) << "," << (include_time ? r.seconds : 0.0) << "\n";
  }
}

Adam::Adam(double lr, double beta1, double beta2, double epsilon)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(epsilon) {}

void Adam::step(const std::vector<double*>& params, const std::vector<const double*>& grads,
                const std::vector<std::size_t>& sizes) {
  if (params.size() != grads.size() || params.size() != sizes.size()) {
    throw Error("Adam: parameter/gradient list mismatch");
  }
  if (m_.empty()) {
    for (auto n : sizes) {
      m_.emplace_back(n, 0.0);
      v_.emplace_back(n, 0.0);
    }
  }
  if (m_.size() != sizes.size()) throw Error("Adam: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (m_[b].size() != sizes[b]) throw Error("Adam: parameter block resized between steps");
    auto& m = m_[b];
    auto& v = v_[b];
    for (std::size_t j = 0; j < sizes[b]; ++j) {
      const double g = grads[b][j];
      m[j] = b1_ * m[j] + (1.0 - b1_) * g;
      v[j] = b2_ * v[j] + (1.0 - b2_) * g * g;
      params[b][j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

TripletBatch uniform_negatives(const std::vector<PositivePair>& pairs,
                               const std::vector<std::vector<ItemId>>& positives,
                               std::size_t n_items, std::size_t n_per_positive,
                               std::uint64_t seed) {
  TripletBatch batch;
  if (n_per_positive == 0) return batch;
  if (n_items == 0) throw Error("no items to sample negatives from");
  Rng rng(seed);
  std::uniform_int_distribution<ItemId> pick(0, static_cast<ItemId>(n_items - 1));
  static const std::vector<ItemId> none;
  batch.triples.reserve(pairs.size() * n_per_positive);
  for (const auto& [u, i] : pairs) {
    const auto& pos = static_cast<std::size_t>(u) < positives.size() ? positives[u] : none;
    if (pos.size() >= n_items) {
      throw Error("user " + std::to_string(u) + " has interacted with every item");
    }
    for (std::size_t n = 0; n < n_per_positive; ++n) {
      ItemId j = pick(rng);
      while (std::binary_search(pos.begin(), pos.end(), j)) j = pick(rng);
      batch.triples.push_back({u, i, j, 1});
    }
  }
  return batch;
}

ReservoirBatch reservoir_negatives(const std::vector<PositivePair>& pairs,
                                   const ReservoirState& state,
                                   const std::vector<std::vector<ItemId>>& positives,
                                   std::size_t n_items, std::size_t n_per_positive,
                                   std::uint64_t seed) {
  ReservoirBatch out;
  out.reservoir.from_reservoir = true;
  if (n_per_positive == 0) return out;
  std::vector<PositivePair> missing;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [u, i] = pairs[p];
    std::optional<NegativeDraw> draw;
    if (static_cast<std::size_t>(u) < state.n_users()) {
      draw = draw_negatives(state, u, n_per_positive, derive_seed(seed, {p}));
    }
    if (!draw) {
      missing.push_back(pairs[p]);
      continue;
    }
    for (std::size_t j = 0; j < draw->items.size(); ++j) {
      out.reservoir.triples.push_back({u, i, draw->items[j], draw->multiplicity[j]});
    }
  }
  if (!missing.empty()) {
    out.fallback = uniform_negatives(missing, positives, n_items, n_per_positive,
                                     derive_seed(seed, {pairs.size() + 1}));
  }
  return out;
}

std::vector<PositivePair> block_pairs(const InteractionLog& log, Range range) {
  if (range.end > log.events.size()) throw Error("range outside the log");
  std::vector<PositivePair> pairs;
  pairs.reserve(range.size());
  for (std::size_t e = range.begin; e < range.end; ++e) {
    pairs.emplace_back(log.events[e].user, log.events[e].item);
  }
  return pairs;
}

StepResult base_step(const EmbeddingState& state, const InteractionGraph& graph,
                     const TripletBatch& batch, double lambda_reg, double dropout,
                     std::uint64_t dropout_seed) {
  const auto fw = forward_train(state, graph, dropout, dropout_seed);
  const auto bpr = bpr_loss(batch, fw.reps, lambda_reg);
  StepResult r;
  r.loss.value = bpr.value;
  r.loss.reg = lambda_reg > 0.0 ? l2_touched({&batch}, fw.reps, lambda_reg).value : 0.0;
  r.loss.triplet = bpr.value - r.loss.reg;
  r.loss.grad = bpr.grad;
  r.grad = backward(state, graph, fw.tape, bpr.grad);
  return r;
}

StepResult incremental_step(const EmbeddingState& state, const InteractionGraph& graph,
                            const TripletBatch& uniform, const TripletBatch& reservoir,
                            const LossWeights& weights, const DistillConfig& distill,
                            const TeacherView& teacher, const ClusterState* clusters,
                            double dropout, std::uint64_t dropout_seed) {
  weights.validate();
  const auto fw = forward_train(state, graph, dropout, dropout_seed);
  const auto& reps = fw.reps;
  LossComponents parts;
  if (!uniform.triples.empty()) parts.triplet = bpr_loss(uniform, reps, 0.0);
  if (!reservoir.triples.empty()) parts.sane = sane_loss(reservoir, reps, 0.0);
  if (weights.lambda_reg > 0.0) parts.reg = l2_touched({&uniform, &reservoir}, reps, weights.lambda_reg);
  if (weights.lambda_kd > 0.0 && distill.mode != DistillMode::none) {
    if (!teacher.reps || !teacher.graph) throw Error("distillation requires a teacher snapshot");
    if (distill.mode == DistillMode::local) {
      parts.kd = kd_local(*teacher.reps, reps, *teacher.graph);
    } else {
      if (!teacher.contrastive_sets) throw Error("contrastive distillation needs candidate sets");
      parts.kd = kd_contrastive(*teacher.reps, reps, *teacher.graph, *teacher.contrastive_sets,
                                distill.tau);
    }
  }
  StepResult r;
  if (weights.beta > 0.0) {
    if (!clusters) throw Error("clustering loss requires a cluster state");
    r.kl = kl_loss(clusters->p, reps.item_reps, clusters->centroids, clusters->nu);
    parts.kl.value = r.kl.value;
    parts.kl.grad_items = r.kl.grad_items;
    parts.kl.grad_centroids = r.kl.grad_centroids;
  }
  r.loss = total_loss(parts, weights, reps);
  r.grad = backward(state, graph, fw.tape, r.loss.grad);
  return r;
}

namespace {

using Clock = std::chrono::steady_clock;

struct ParamList {
  std::vector<double*> params;
  std::vector<const double*> grads;
  std::vector<std::size_t> sizes;

  void add(double* p, const double* g, std::size_t n) {
    params.push_back(p);
    grads.push_back(g);
    sizes.push_back(n);
  }
};

template <typename M>
std::size_t n_of(const M& m) {
  return static_cast<std::size_t>(m.size());
}

ParamList param_list(EmbeddingState& state, const ParamGradient& g) {
  ParamList l;
  l.add(state.user_table.data(), g.user_table.data(), n_of(state.user_table));
  l.add(state.item_table.data(), g.item_table.data(), n_of(state.item_table));
  for (std::size_t k = 0; k < state.layers.size(); ++k) {
    l.add(state.layers[k].weight.data(), g.layers[k].weight.data(), n_of(state.layers[k].weight));
    l.add(state.layers[k].bias.data(), g.layers[k].bias.data(), n_of(state.layers[k].bias));
  }
  return l;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// Early stopping on validation Recall@20.
class EarlyStop {
 public:
  EarlyStop(std::size_t min_epochs, std::size_t patience) : min_(min_epochs), patience_(patience) {}

  // Returns true when `value` is the new best.
  bool update(double value) {
    ++epochs_;
    if (std::isnan(value)) return true;  // nothing to monitor: keep the latest
    if (!seen_ || value > best_) {
      best_ = value;
      seen_ = true;
      bad_ = 0;
      return true;
    }
    ++bad_;
    return false;
  }

  bool stop() const { return epochs_ >= min_ && bad_ >= patience_; }

 private:
  std::size_t min_, patience_;
  std::size_t epochs_ = 0, bad_ = 0;
  double best_ = 0.0;
  bool seen_ = false;
};

void accumulate(TrainRecord& rec, const TotalLoss& l) {
  rec.triplet += l.triplet;
  rec.kd += l.kd;
  rec.sane += l.sane;
  rec.kl += l.kl;
  rec.reg += l.reg;
  rec.total += l.value;
  ++rec.steps;
}

void finish(TrainRecord& rec) {
  if (rec.steps == 0) return;
  const double inv = 1.0 / static_cast<double>(rec.steps);
  rec.triplet *= inv;
  rec.kd *= inv;
  rec.sane *= inv;
  rec.kl *= inv;
  rec.reg *= inv;
  rec.total *= inv;
}

std::vector<PositivePair> slice(const std::vector<PositivePair>& pairs,
                                const std::vector<std::size_t>& order, std::size_t begin,
                                std::size_t end) {
  std::vector<PositivePair> out;
  out.reserve(end - begin);
  for (std::size_t k = begin; k < end; ++k) out.push_back(pairs[order[k]]);
  return out;
}

}  // namespace

BaseResult train_base_block(const InteractionLog& log, const BlockSchedule& schedule,
                            const TrainerConfig& config, double lambda_reg,
                            const TrainerHooks& hooks) {
  config.validate();
  if (schedule.size() == 0) throw Error("schedule has no base block");
  const Block& block = schedule.at(0);
  if (block.train.empty()) throw Error("base block has no training events");
  const auto graph = build_block_graph(log, schedule, 0);
  const auto positives = graph.user_item_sets();
  const auto pairs = block_pairs(log, block.train);
  const std::size_t n_neg = config.n_uniform + config.n_reservoir;

  BaseResult result;
  result.state = init_embeddings(graph.n_users, graph.n_items, config.dim,
                                 derive_seed(config.seed, {0, 0}), config.n_layers);
  EmbeddingState best = result.state;
  Adam adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon);
  EarlyStop early(config.min_epochs_base, config.patience);

  for (std::size_t epoch = 0; epoch < config.max_epochs_base; ++epoch) {
    const auto start = Clock::now();
    TrainRecord rec;
    rec.block = 0;
    rec.epoch = epoch;
    const auto order = shuffled(pairs.size(), derive_seed(config.seed, {0, epoch, 1}));
    for (std::size_t b = 0, step = 0; b < pairs.size(); b += config.batch_size, ++step) {
      const auto batch_pairs = slice(pairs, order, b, std::min(pairs.size(), b + config.batch_size));
      const auto batch = uniform_negatives(batch_pairs, positives, graph.n_items, n_neg,
                                           derive_seed(config.seed, {0, epoch, 2, step}));
      if (hooks.on_batch) hooks.on_batch(0, epoch, batch, TripletBatch{});
      auto r = base_step(result.state, graph, batch, lambda_reg, config.dropout,
                         derive_seed(config.seed, {0, epoch, 3, step}));
      auto pl = param_list(result.state, r.grad);
      adam.step(pl.params, pl.grads, pl.sizes);
      accumulate(rec, r.loss);
    }
    finish(rec);
    rec.val_recall20 = recall_at_20(forward(result.state, graph), log, block.validation);
    rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    result.records.push_back(rec);
    if (early.update(rec.val_recall20)) best = result.state;
    if (early.stop()) break;
  }
  if (config.restore_best) result.state = std::move(best);
  return result;
}

IncrementalResult train_incremental_block(const EmbeddingState* teacher,
                                          const InteractionLog& log,
                                          const BlockSchedule& schedule, std::size_t t,
                                          const IncrementalOptions& options,
                                          const TrainerHooks& hooks) {
  const auto& config = options.trainer;
  config.validate();
  options.reservoir.validate();
  options.weights.validate();
  options.distill.validate();
  if (t == 0) throw Error("block 0 is the base block; use train_base_block");
  if (!teacher) throw Error("incremental training needs the previous block's teacher snapshot");
  const Block& block = schedule.at(t);
  if (block.train.empty()) throw Error("block " + std::to_string(t) + " has no training events");

  const auto graph = build_block_graph(log, schedule, t);
  const auto graph_prev = build_block_graph(log, schedule, t - 1);
  if (teacher->n_users() != graph_prev.n_users || teacher->n_items() != graph_prev.n_items) {
    throw Error("teacher snapshot does not match block " + std::to_string(t - 1));
  }
  const auto positives = graph.user_item_sets();
  const auto pairs = block_pairs(log, block.train);
  const std::size_t k = options.reservoir.n_categories;
  const bool use_clusters = options.weights.beta > 0.0 || options.categories == nullptr;
  if (options.categories && options.categories->size() < graph.n_items) {
    throw Error("category map does not cover the block's items");
  }

  const auto teacher_reps = forward(*teacher, graph_prev);
  std::vector<std::vector<ItemId>> contrastive_sets;
  if (options.distill.mode == DistillMode::contrastive && options.weights.lambda_kd > 0.0) {
    contrastive_sets = sample_contrastive_sets(graph_prev, options.distill.n_negatives,
                                               derive_seed(options.distill.seed, {t}));
  }
  const TeacherView view{&teacher_reps, &graph_prev, &contrastive_sets};

  IncrementalResult result;
  result.state = *teacher;
  grow_embeddings(result.state, graph.n_users, graph.n_items, derive_seed(config.seed, {t, 0}));
  result.clusters.nu = options.cluster_nu;
  result.clusters.tau = options.cluster_tau;

  EmbeddingState best = result.state;
  IncrementalResult best_aux;
  Adam adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon);
  EarlyStop early(config.min_epochs_incremental, config.patience);
  const std::size_t f = options.reservoir.refresh_every;

  for (std::size_t epoch = 0; epoch < config.max_epochs_incremental; ++epoch) {
    const auto start = Clock::now();
    TrainRecord rec;
    rec.block = t;
    rec.epoch = epoch;

    if (epoch % f == 0) {
      const auto reps = forward(result.state, graph);
      if (use_clusters) {
        if (result.clusters.centroids.size() == 0) {
          result.clusters.centroids =
              kmeans_init(reps.item_reps, k, derive_seed(config.seed, {t, 1}));
        }
        result.clusters.q = soft_assign(reps.item_reps, result.clusters.centroids, result.clusters.nu);
        result.clusters.p = sharpen(result.clusters.q);
      }
      result.categories = options.categories ? *options.categories : hard_categories(result.clusters.p);
      if (config.n_reservoir > 0) {
        const auto hist = category_histogram(graph, result.categories, k);
        const auto hist_prev = category_histogram(graph_prev, result.categories, k);
        const auto ranking = rank_top_negatives(reps, positives, options.reservoir.q);
        result.reservoir = update_reservoir(ranking, hist, hist_prev, result.categories, options.reservoir);
      }
      rec.reservoir_refreshed = true;
      if (hooks.on_refresh) hooks.on_refresh(t, epoch, result.reservoir, result.categories);
    }

    const auto order = shuffled(pairs.size(), derive_seed(config.seed, {t, epoch, 1}));
    for (std::size_t b = 0, step = 0; b < pairs.size(); b += config.batch_size, ++step) {
      const auto batch_pairs = slice(pairs, order, b, std::min(pairs.size(), b + config.batch_size));
      auto uniform = uniform_negatives(batch_pairs, positives, graph.n_items, config.n_uniform,
                                       derive_seed(config.seed, {t, epoch, 2, step}));
      auto res = reservoir_negatives(batch_pairs, result.reservoir, positives, graph.n_items,
                                     config.n_reservoir, derive_seed(config.seed, {t, epoch, 4, step}));
      uniform.triples.insert(uniform.triples.end(), res.fallback.triples.begin(),
                             res.fallback.triples.end());
      if (hooks.on_batch) hooks.on_batch(t, epoch, uniform, res.reservoir);
      auto r = incremental_step(result.state, graph, uniform, res.reservoir, options.weights,
                                options.distill, view, use_clusters ? &result.clusters : nullptr,
                                config.dropout, derive_seed(config.seed, {t, epoch, 3, step}));
      auto pl = param_list(result.state, r.grad);
      if (options.weights.beta > 0.0) {
        pl.add(result.clusters.centroids.data(), r.loss.grad_centroids.data(),
               n_of(result.clusters.centroids));
      }
      adam.step(pl.params, pl.grads, pl.sizes);
      accumulate(rec, r.loss);
    }
    finish(rec);
    rec.val_recall20 = recall_at_20(forward(result.state, graph), log, block.validation);
    rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    result.records.push_back(rec);
    if (early.update(rec.val_recall20)) {
      best = result.state;
      best_aux.reservoir = result.reservoir;
      best_aux.clusters = result.clusters;
      best_aux.categories = result.categories;
    }
    if (early.stop()) break;
  }
  if (config.restore_best) {
    result.state = std::move(best);
    result.reservoir = std::move(best_aux.reservoir);
    result.clusters = std::move(best_aux.clusters);
    result.categories = std::move(best_aux.categories);
  }
  return result;
}

}  // namespace sane
