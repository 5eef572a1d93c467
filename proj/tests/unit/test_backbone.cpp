#include <doctest.h>

#include <sstream>

#include "sane/backbone.hpp"
#include "support.hpp"

using namespace sane;

namespace {

struct Fixture {
  InteractionLog log;
  BlockSchedule schedule;
  InteractionGraph graph;

  explicit Fixture(std::uint64_t seed) {
    log = test::random_log(12, 15, 120, seed);
    schedule = split_blocks(log, 0.6, 2, 0.0, SplitMode::standard);
    graph = build_block_graph(log, schedule, 1);
  }
};

// Scalar objective sum(W_u . H_u) + sum(W_i . H_i) for fixed random weights.
double objective(const EmbeddingState& s, const InteractionGraph& g, const RepGradient& w) {
  const auto r = forward(s, g);
  return r.user_reps.cwiseProduct(w.user).sum() + r.item_reps.cwiseProduct(w.item).sum();
}

}  // namespace

TEST_CASE("init is seeded and shaped") {
  const auto a = init_embeddings(5, 7, 4, 9);
  const auto b = init_embeddings(5, 7, 4, 9);
  const auto c = init_embeddings(5, 7, 4, 10);
  CHECK(checksum(a) == checksum(b));
  CHECK(checksum(a) != checksum(c));
  CHECK(a.n_layers() == 2);
  CHECK(a.layers[0].weight.cols() == 8);
  CHECK_THROWS_AS(init_embeddings(0, 7, 4, 1), Error);
  CHECK_THROWS_AS(init_embeddings(5, 7, 0, 1), Error);
}

TEST_CASE("grow keeps old rows and appends new ones") {
  auto s = init_embeddings(3, 4, 5, 1);
  const Matrix old_u = s.user_table;
  grow_embeddings(s, 6, 4, 2);
  CHECK(s.n_users() == 6);
  CHECK(s.n_items() == 4);
  CHECK((s.user_table.topRows(3).array() == old_u.array()).all());
  CHECK(s.user_table.bottomRows(3).norm() > 0.0);
}

TEST_CASE("zero layers return the raw tables") {
  Fixture f(1);
  const auto s = init_embeddings(f.graph.n_users, f.graph.n_items, 4, 3, 0);
  const auto r = forward(s, f.graph);
  CHECK((r.user_reps.array() == s.user_table.array()).all());
  CHECK((r.item_reps.array() == s.item_table.array()).all());
}

TEST_CASE("training forward without dropout matches evaluation forward") {
  Fixture f(2);
  const auto s = init_embeddings(f.graph.n_users, f.graph.n_items, 4, 3);
  const auto a = forward(s, f.graph);
  const auto b = forward_train(s, f.graph, 0.0, 0);
  CHECK((a.user_reps.array() == b.reps.user_reps.array()).all());
  CHECK((a.item_reps.array() == b.reps.item_reps.array()).all());
  CHECK_THROWS_AS(forward_train(s, f.graph, 1.0, 0), Error);
  CHECK_THROWS_AS(forward(s, f.graph, 3), Error);
}

TEST_CASE("shape mismatch between state and graph is an error") {
  Fixture f(3);
  const auto s = init_embeddings(f.graph.n_users + 1, f.graph.n_items, 4, 3);
  CHECK_THROWS_AS(forward(s, f.graph), Error);
}

TEST_CASE("backward matches finite differences through every parameter") {
  for (const auto act : {Activation::tanh, Activation::identity}) {
    Fixture f(4);
    Rng rng(5);
    auto s = init_embeddings(f.graph.n_users, f.graph.n_items, 3, 6, 2, act);
    for (auto& l : s.layers) l.bias = test::random_matrix(3, 1, rng, 0.1);
    const RepGradient w{test::random_matrix(f.graph.n_users, 3, rng),
                        test::random_matrix(f.graph.n_items, 3, rng)};
    const auto tf = forward_train(s, f.graph, 0.0, 0);
    const auto g = backward(s, f.graph, tf.tape, w);
    const auto f_obj = [&] { return objective(s, f.graph, w); };
    CHECK(test::rel_error(g.user_table, test::numeric_gradient(s.user_table, f_obj)) < 1e-7);
    CHECK(test::rel_error(g.item_table, test::numeric_gradient(s.item_table, f_obj)) < 1e-7);
    for (std::size_t k = 0; k < s.n_layers(); ++k) {
      CHECK(test::rel_error(g.layers[k].weight, test::numeric_gradient(s.layers[k].weight, f_obj)) <
            1e-7);
      Matrix bias = s.layers[k].bias;
      const auto bias_obj = [&] {
        s.layers[k].bias = bias;
        return objective(s, f.graph, w);
      };
      const Matrix num = test::numeric_gradient(bias, bias_obj);
      s.layers[k].bias = bias;
      CHECK(test::rel_error(g.layers[k].bias, num) < 1e-7);
    }
  }
}

TEST_CASE("dropout masks scale the gradient") {
  Fixture f(5);
  Rng rng(1);
  const auto s = init_embeddings(f.graph.n_users, f.graph.n_items, 3, 6, 0);
  const auto tf = forward_train(s, f.graph, 0.5, 42);
  const RepGradient w{Matrix::Ones(f.graph.n_users, 3), Matrix::Ones(f.graph.n_items, 3)};
  const auto g = backward(s, f.graph, tf.tape, w);
  CHECK((g.user_table.array() == tf.tape.user_mask.array()).all());
  const auto again = forward_train(s, f.graph, 0.5, 42);
  CHECK((again.tape.item_mask.array() == tf.tape.item_mask.array()).all());
}

TEST_CASE("top negatives skip positives and agree with the serial path") {
  Rng rng(8);
  const NodeRepresentations reps = test::random_reps(10, 30, 4, rng);
  std::vector<std::vector<ItemId>> pos(8);
  pos[0] = {0, 3, 7};
  pos[5] = {29};
  const auto a = rank_top_negatives(reps, pos, 5);
  const auto b = rank_top_negatives_serial(reps, pos, 5);
  REQUIRE(a.top_negatives.size() == 10);
  CHECK(a.positives.size() == 10);
  CHECK(a.top_negatives == b.top_negatives);
  CHECK(a.scores == b.scores);
  for (auto i : a.top_negatives[0]) CHECK(!std::binary_search(pos[0].begin(), pos[0].end(), i));
  for (std::size_t j = 1; j < 5; ++j) CHECK(a.scores[3][j - 1] >= a.scores[3][j]);
  CHECK_THROWS_AS(rank_top_negatives(reps, pos, 0), Error);
}

TEST_CASE("checkpoint round trip stores f32 values") {
  const auto s = init_embeddings(4, 5, 3, 2);
  std::stringstream buf;
  save_checkpoint(buf, s);
  const auto back = load_checkpoint(buf);
  REQUIRE(back.n_users() == 4);
  REQUIRE(back.n_layers() == 2);
  for (Eigen::Index r = 0; r < 4; ++r)
    for (Eigen::Index c = 0; c < 3; ++c)
      CHECK(back.user_table(r, c) == static_cast<double>(static_cast<float>(s.user_table(r, c))));
  CHECK(back.layers[1].weight(2, 5) ==
        static_cast<double>(static_cast<float>(s.layers[1].weight(2, 5))));
  // Saving the reloaded state is a fixed point.
  std::stringstream a, b;
  save_checkpoint(a, back);
  save_checkpoint(b, load_checkpoint(a));
  a.seekg(0);
  CHECK(a.str() == b.str());

  std::stringstream junk("NOTACKPT........");
  CHECK_THROWS_AS(load_checkpoint(junk), Error);
  std::string truncated = buf.str().substr(0, 30);
  std::stringstream cut(truncated);
  CHECK_THROWS_AS(load_checkpoint(cut), Error);
}

TEST_CASE("score checks its ids") {
  Rng rng(1);
  const auto reps = test::random_reps(2, 3, 2, rng);
  CHECK(score(reps, 1, 2) == doctest::Approx(reps.user_reps.row(1).dot(reps.item_reps.row(2))));
  CHECK_THROWS_AS(score(reps, 2, 0), Error);
  CHECK_THROWS_AS(score(reps, 0, -1), Error);
}
