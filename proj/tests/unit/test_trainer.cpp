#include <doctest.h>

#include <cmath>
#include <sstream>

#include "sane/trainer.hpp"
#include "support.hpp"

using namespace sane;

namespace {

struct Run {
  InteractionLog log;
  BlockSchedule schedule;
  IncrementalOptions options;

  Run() {
    log = test::random_log(20, 25, 600, 4);
    schedule = split_blocks(log, 0.6, 2, 0.05, SplitMode::standard);
    options.trainer.dim = 8;
    options.trainer.n_layers = 1;
    options.trainer.learning_rate = 1e-2;
    options.trainer.max_epochs_base = 4;
    options.trainer.max_epochs_incremental = 4;
    options.trainer.min_epochs_base = 1;
    options.trainer.min_epochs_incremental = 1;
    options.trainer.seed = 3;
    options.reservoir.q = 5;
    options.reservoir.n_categories = 3;
    options.weights.beta = 0.1;
    options.weights.lambda_kd = 0.5;
    options.distill.mode = DistillMode::local;
  }
};

}  // namespace

TEST_CASE("first Adam step moves each coordinate by the learning rate") {
  std::vector<double> p{1.0, -2.0, 3.0};
  const std::vector<double> g{0.5, -4.0, 0.0};
  Adam adam(0.1, 0.9, 0.999, 1e-12);
  adam.step({p.data()}, {g.data()}, {3});
  CHECK(p[0] == doctest::Approx(0.9));
  CHECK(p[1] == doctest::Approx(-1.9));
  CHECK(p[2] == doctest::Approx(3.0));
  CHECK(adam.steps() == 1);
  CHECK_THROWS_AS(adam.step({p.data()}, {g.data()}, {2}), Error);
}

TEST_CASE("uniform negatives avoid positives and are seeded") {
  const std::vector<std::vector<ItemId>> pos{{0, 1, 2}, {4}};
  const std::vector<PositivePair> pairs{{0, 1}, {1, 4}, {0, 2}};
  const auto a = uniform_negatives(pairs, pos, 5, 20, 9);
  REQUIRE(a.triples.size() == 60);
  for (const auto& t : a.triples) {
    CHECK(!std::binary_search(pos[t.user].begin(), pos[t.user].end(), t.negative));
    CHECK(t.multiplicity == 1);
  }
  CHECK(a.triples[0].user == 0);
  CHECK(a.triples[20].user == 1);
  const auto b = uniform_negatives(pairs, pos, 5, 20, 9);
  for (std::size_t k = 0; k < 60; ++k) CHECK(a.triples[k].negative == b.triples[k].negative);
  const std::vector<std::vector<ItemId>> full{{0, 1}};
  CHECK_THROWS_AS(uniform_negatives({{0, 0}}, full, 2, 1, 0), Error);
  CHECK(uniform_negatives(pairs, pos, 5, 0, 9).triples.empty());
}

TEST_CASE("reservoir negatives fall back to uniform for users without a reservoir") {
  ReservoirState s;
  s.items = {{3, 4}, {}};
  s.probs = {{0.5, 0.5}, {}};
  const std::vector<std::vector<ItemId>> pos{{0}, {1}, {2}};
  const std::vector<PositivePair> pairs{{0, 0}, {1, 1}, {2, 2}};
  const auto r = reservoir_negatives(pairs, s, pos, 6, 4, 1);
  CHECK(r.reservoir.from_reservoir);
  std::int64_t total = 0;
  for (const auto& t : r.reservoir.triples) {
    CHECK(t.user == 0);
    total += t.multiplicity;
  }
  CHECK(total == 4);
  CHECK(r.fallback.triples.size() == 8);
  for (const auto& t : r.fallback.triples) CHECK(t.multiplicity == 1);
}

TEST_CASE("block pairs follow log order") {
  const auto log = test::random_log(3, 3, 10, 1);
  const auto p = block_pairs(log, {2, 5});
  REQUIRE(p.size() == 3);
  CHECK(p[0].first == log.events[2].user);
  CHECK(p[2].second == log.events[4].item);
  CHECK_THROWS_AS(block_pairs(log, {0, 11}), Error);
}

TEST_CASE("base training reduces the loss and is deterministic") {
  Run run;
  run.options.trainer.max_epochs_base = 6;
  run.options.trainer.min_epochs_base = 6;
  const auto a = train_base_block(run.log, run.schedule, run.options.trainer, 0.0);
  const auto b = train_base_block(run.log, run.schedule, run.options.trainer, 0.0);
  REQUIRE(a.records.size() == 6);
  CHECK(a.records.back().total < a.records.front().total);
  CHECK(checksum(a.state) == checksum(b.state));
  for (const auto& r : a.records) {
    CHECK(r.total == doctest::Approx(r.triplet + r.kd + r.sane + r.kl + r.reg));
    CHECK(r.steps > 0);
  }
}

TEST_CASE("incremental training grows the model and leaves the teacher alone") {
  Run run;
  const auto base = train_base_block(run.log, run.schedule, run.options.trainer, 0.0);
  const auto before = checksum(base.state);
  std::size_t refreshes = 0, reservoir_batches = 0;
  TrainerHooks hooks;
  hooks.on_refresh = [&](std::size_t, std::size_t, const ReservoirState&, const CategoryMap&) {
    ++refreshes;
  };
  hooks.on_batch = [&](std::size_t, std::size_t, const TripletBatch&, const TripletBatch& r) {
    reservoir_batches += r.triples.empty() ? 0 : 1;
  };
  run.options.trainer.restore_best = false;
  run.options.trainer.min_epochs_incremental = 4;
  const auto inc = train_incremental_block(&base.state, run.log, run.schedule, 1, run.options, hooks);
  CHECK(checksum(base.state) == before);
  const auto g1 = build_block_graph(run.log, run.schedule, 1);
  CHECK(inc.state.n_users() == g1.n_users);
  CHECK(inc.state.n_items() == g1.n_items);
  CHECK(inc.records.size() == 4);
  CHECK(refreshes == 2);
  CHECK(inc.records[0].reservoir_refreshed);
  CHECK(!inc.records[1].reservoir_refreshed);
  CHECK(reservoir_batches > 0);
  CHECK(inc.categories.size() == g1.n_items);
  CHECK(inc.clusters.centroids.rows() == 3);
  for (const auto& r : inc.records) {
    CHECK(r.total == doctest::Approx(r.triplet + r.kd + r.sane + r.kl + r.reg));
    CHECK(r.kd >= 0.0);
    CHECK(r.kl > 0.0);
  }
}

TEST_CASE("incremental training rejects bad inputs") {
  Run run;
  const auto base = train_base_block(run.log, run.schedule, run.options.trainer, 0.0);
  CHECK_THROWS_AS(train_incremental_block(nullptr, run.log, run.schedule, 1, run.options), Error);
  CHECK_THROWS_AS(train_incremental_block(&base.state, run.log, run.schedule, 0, run.options), Error);
  CHECK_THROWS_AS(train_incremental_block(&base.state, run.log, run.schedule, 5, run.options), Error);
  const CategoryMap short_map(2, 0);
  auto opts = run.options;
  opts.categories = &short_map;
  CHECK_THROWS_AS(train_incremental_block(&base.state, run.log, run.schedule, 1, opts), Error);
}

TEST_CASE("config validation") {
  TrainerConfig c;
  CHECK_NOTHROW(c.validate());
  c.n_uniform = 0;
  c.n_reservoir = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainerConfig{};
  c.min_epochs_base = 40;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainerConfig{};
  c.n_layers = 0;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("train log layout") {
  TrainRecord r;
  r.block = 1;
  r.epoch = 2;
  r.steps = 3;
  r.total = 0.5;
  r.val_recall20 = 0.25;
  r.reservoir_refreshed = true;
  r.seconds = 9.0;
  std::ostringstream out;
  write_train_log(out, {r}, false);
  CHECK(out.str() ==
        "block,epoch,steps,triplet,kd,sane,kl,reg,total,val_recall20,refreshed,seconds\n"
        "1,2,3,0,0,0,0,0,0.5,0.25,1,0\n");
}
