// OpenMP kernels against their serial references.

#include <benchmark/benchmark.h>

#include <algorithm>
#include <random>

#include "sane/backbone.hpp"
#include "sane/kernels.hpp"
#include "sane/reservoir.hpp"
#include "sane/rng.hpp"

namespace {

using namespace sane;

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

std::vector<std::vector<std::int32_t>> random_adj(std::size_t n, std::size_t n_src, Rng& rng) {
  std::uniform_int_distribution<std::int32_t> pick(0, static_cast<std::int32_t>(n_src) - 1);
  std::vector<std::vector<std::int32_t>> adj(n);
  for (auto& row : adj) {
    row.resize(1 + rng() % 30);
    for (auto& w : row) w = pick(rng);
  }
  return adj;
}

struct Graph {
  Matrix src;
  std::vector<std::vector<std::int32_t>> fwd, rev;
  Matrix grad;
};

Graph make_graph(std::size_t n) {
  Rng rng(1);
  Graph g;
  g.src = random_matrix(static_cast<Eigen::Index>(n), 64, rng);
  g.fwd = random_adj(n, n, rng);
  g.rev.resize(n);
  for (std::size_t v = 0; v < n; ++v)
    for (auto w : g.fwd[v]) g.rev[w].push_back(static_cast<std::int32_t>(v));
  g.grad = random_matrix(static_cast<Eigen::Index>(n), 64, rng);
  return g;
}

template <bool Serial>
void BM_MeanAggregate(benchmark::State& state) {
  const auto g = make_graph(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(Serial ? kernels::mean_aggregate_serial(g.src, g.fwd)
                                    : kernels::mean_aggregate(g.src, g.fwd));
  }
}

template <bool Serial>
void BM_Adjoint(benchmark::State& state) {
  const auto g = make_graph(static_cast<std::size_t>(state.range(0)));
  const auto n = g.rev.size();
  for (auto _ : state) {
    benchmark::DoNotOptimize(Serial ? kernels::mean_aggregate_adjoint_serial(g.grad, g.fwd, g.rev, n)
                                    : kernels::mean_aggregate_adjoint(g.grad, g.fwd, g.rev, n));
  }
}

template <bool Serial>
void BM_TopScored(benchmark::State& state) {
  Rng rng(2);
  const auto n_users = static_cast<Eigen::Index>(state.range(0));
  const Matrix users = random_matrix(n_users, 64, rng);
  const Matrix items = random_matrix(5000, 64, rng);
  std::vector<std::vector<std::int32_t>> excl(static_cast<std::size_t>(n_users));
  for (auto& e : excl) {
    for (int k = 0; k < 20; ++k) e.push_back(static_cast<std::int32_t>(rng() % 5000));
    std::sort(e.begin(), e.end());
    e.erase(std::unique(e.begin(), e.end()), e.end());
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(Serial ? kernels::top_scored_items_serial(users, items, excl, 100)
                                    : kernels::top_scored_items(users, items, excl, 100));
  }
}

template <bool Serial>
void BM_UpdateReservoir(benchmark::State& state) {
  Rng rng(3);
  const auto n_users = static_cast<std::size_t>(state.range(0));
  const std::size_t k = 10, n_items = 2000;
  NodeRepresentations reps{random_matrix(static_cast<Eigen::Index>(n_users), 32, rng),
                           random_matrix(static_cast<Eigen::Index>(n_items), 32, rng)};
  const auto ranking = rank_top_negatives(reps, {}, 100);
  CategoryMap cats(n_items);
  for (auto& c : cats) c = static_cast<Category>(rng() % k);
  CategoryHistogram cur{1, k, {}}, prev{0, k, {}};
  for (std::size_t u = 0; u < n_users; ++u) {
    std::vector<std::int64_t> a(k), b(k);
    for (auto& x : a) x = static_cast<std::int64_t>(rng() % 6);
    for (auto& x : b) x = static_cast<std::int64_t>(rng() % 6);
    cur.counts.push_back(a);
    prev.counts.push_back(b);
  }
  ReservoirConfig cfg;
  cfg.n_categories = k;
  for (auto _ : state) {
    benchmark::DoNotOptimize(Serial ? update_reservoir_serial(ranking, cur, prev, cats, cfg)
                                    : update_reservoir(ranking, cur, prev, cats, cfg));
  }
}

}  // namespace

BENCHMARK(BM_MeanAggregate<true>)->Name("mean_aggregate/serial")->Arg(20000);
BENCHMARK(BM_MeanAggregate<false>)->Name("mean_aggregate/omp")->Arg(20000);
BENCHMARK(BM_Adjoint<true>)->Name("mean_aggregate_adjoint/serial")->Arg(20000);
BENCHMARK(BM_Adjoint<false>)->Name("mean_aggregate_adjoint/omp")->Arg(20000);
BENCHMARK(BM_TopScored<true>)->Name("top_scored_items/serial")->Arg(500);
BENCHMARK(BM_TopScored<false>)->Name("top_scored_items/omp")->Arg(500);
BENCHMARK(BM_UpdateReservoir<true>)->Name("update_reservoir/serial")->Arg(5000);
BENCHMARK(BM_UpdateReservoir<false>)->Name("update_reservoir/omp")->Arg(5000);

BENCHMARK_MAIN();
