#include <doctest.h>

#include <numeric>
#include <sstream>

#include "sane/reservoir.hpp"
#include "support.hpp"

using namespace sane;

TEST_CASE("histogram normalisation and shift") {
  const std::vector<std::int64_t> a{1, 3}, zero{0, 0}, b{2, 2};
  CHECK(normalize_histogram(a) == std::vector<double>{0.25, 0.75});
  CHECK(normalize_histogram(zero) == std::vector<double>{0.5, 0.5});
  const auto s = interest_shift(a, b);
  CHECK(s[0] == doctest::Approx(-0.25));
  CHECK(s[1] == doctest::Approx(0.25));
  const std::vector<std::int64_t> three{1, 1, 1}, neg{-1, 2};
  CHECK_THROWS_AS(interest_shift(a, three), Error);
  CHECK_THROWS_AS(normalize_histogram(neg), Error);
}

TEST_CASE("prior by hand") {
  const std::vector<double> shift{-0.3, 0.0, 0.3};
  const auto alpha = prior_alpha(shift, 1.0, 100);
  CHECK(alpha[0] == doctest::Approx(43.675).epsilon(1e-4));
  CHECK(alpha[1] == doctest::Approx(32.355).epsilon(1e-4));
  CHECK(alpha[2] == doctest::Approx(23.9694).epsilon(1e-4));
  const auto flipped = prior_alpha(shift, 1.0, 100, true);
  CHECK(flipped[2] == doctest::Approx(43.675).epsilon(1e-4));
  const std::vector<double> zero(4, 0.0);
  for (double a : prior_alpha(zero, 2.0, 10)) CHECK(a == doctest::Approx(5.0));
  CHECK_THROWS_AS(prior_alpha(shift, 0.0, 100), Error);
  CHECK_THROWS_AS(prior_alpha(shift, 1.0, 0), Error);
}

TEST_CASE("posterior mean and slot probabilities by hand") {
  const std::vector<double> alpha{1.0, 1.0};
  const std::vector<std::int64_t> counts{4, 2};
  const auto theta = posterior_theta(alpha, counts);
  CHECK(theta[0] == doctest::Approx(5.0 / 8.0));
  CHECK(theta[1] == doctest::Approx(3.0 / 8.0));

  const std::vector<double> t{0.75, 0.25};
  const std::vector<ItemId> res{0, 1, 2, 3};
  const CategoryMap cats{0, 0, 1, 1};
  const auto m = sampling_probs(t, res, cats);
  CHECK(m[0] == doctest::Approx(0.375));
  CHECK(m[1] == doctest::Approx(0.375));
  CHECK(m[2] == doctest::Approx(0.125));
  CHECK(m[3] == doctest::Approx(0.125));

  CHECK(reservoir_counts(res, cats, 2) == std::vector<std::int64_t>{2, 2});
  const std::vector<ItemId> bad{7};
  CHECK_THROWS_AS(sampling_probs(t, bad, cats), Error);
  CHECK_THROWS_AS(sampling_probs(t, std::vector<ItemId>{}, cats), Error);
  const std::vector<double> zero_alpha{0.0, 1.0};
  CHECK_THROWS_AS(posterior_theta(zero_alpha, counts), Error);
}

namespace {

struct Instance {
  RankingContext ranking;
  CategoryHistogram cur, prev;
  CategoryMap cats;
  ReservoirConfig config;
};

Instance make_instance(std::size_t n_users, std::size_t n_items, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  Instance in;
  in.config.q = 6;
  in.config.lambda = 0.5;
  in.config.n_categories = k;
  for (std::size_t i = 0; i < n_items; ++i) in.cats.push_back(static_cast<Category>(rng() % k));
  const auto reps = test::random_reps(n_users, n_items, 3, rng);
  in.ranking = rank_top_negatives(reps, std::vector<std::vector<ItemId>>(n_users), in.config.q);
  in.cur.n_categories = in.prev.n_categories = k;
  in.cur.counts.assign(n_users, std::vector<std::int64_t>(k));
  in.prev.counts.assign(n_users - 1, std::vector<std::int64_t>(k));
  for (auto& r : in.cur.counts)
    for (auto& c : r) c = static_cast<std::int64_t>(rng() % 4);
  for (auto& r : in.prev.counts)
    for (auto& c : r) c = static_cast<std::int64_t>(rng() % 4);
  return in;
}

}  // namespace

TEST_CASE("update_reservoir: parallel and serial agree, new users get a uniform prior") {
  auto in = make_instance(40, 30, 3, 5);
  in.prev.counts[2].assign(3, 0);
  const auto a = update_reservoir(in.ranking, in.cur, in.prev, in.cats, in.config);
  const auto b = update_reservoir_serial(in.ranking, in.cur, in.prev, in.cats, in.config);
  CHECK(a.items == b.items);
  CHECK(a.alpha == b.alpha);
  CHECK(a.theta_hat == b.theta_hat);
  CHECK(a.probs == b.probs);
  for (const std::size_t u : {std::size_t{2}, std::size_t{39}}) {
    for (double x : a.alpha[u]) CHECK(x == doctest::Approx(in.config.lambda * in.config.q / 3.0));
  }
  for (std::size_t u = 0; u < 40; ++u) {
    CHECK(std::accumulate(a.probs[u].begin(), a.probs[u].end(), 0.0) == doctest::Approx(1.0));
    CHECK(a.items[u].size() == in.config.q);
  }
}

TEST_CASE("update_reservoir validates its inputs") {
  auto in = make_instance(5, 10, 2, 6);
  auto bad = in.config;
  bad.n_categories = 3;
  CHECK_THROWS_AS(update_reservoir(in.ranking, in.cur, in.prev, in.cats, bad), Error);
  in.cur.counts.pop_back();
  CHECK_THROWS_AS(update_reservoir(in.ranking, in.cur, in.prev, in.cats, in.config), Error);
  auto c2 = make_instance(5, 10, 2, 6);
  c2.cats[c2.ranking.top_negatives[0][0]] = 9;
  CHECK_THROWS_AS(update_reservoir(c2.ranking, c2.cur, c2.prev, c2.cats, c2.config), Error);
}

TEST_CASE("draw_negatives folds draws into multiplicities") {
  ReservoirState s;
  s.items = {{4, 7, 9}, {}};
  s.probs = {{0.5, 0.0, 0.5}, {}};
  const auto d = draw_negatives(s, 0, 50, 3);
  REQUIRE(d.has_value());
  CHECK(d->total() == 50);
  CHECK(d->items.size() == 2);
  CHECK(d->items[0] == 4);
  CHECK(d->items[1] == 9);
  const auto again = draw_negatives(s, 0, 50, 3);
  CHECK(again->multiplicity == d->multiplicity);
  CHECK(!draw_negatives(s, 1, 5, 3).has_value());
  CHECK_THROWS_AS(draw_negatives(s, 2, 5, 3), Error);
}

TEST_CASE("reservoir dump layout") {
  ReservoirState s;
  s.items = {{3, 1}};
  s.alpha = {{1.5, 0.5}};
  s.theta_hat = {{0.75, 0.25}};
  std::ostringstream out;
  write_reservoir_dump(out, s);
  CHECK(out.str() == "user,alpha_0,alpha_1,theta_0,theta_1,items\n0,1.5,0.5,0.75,0.25,3 1\n");
}

TEST_CASE("config validation") {
  ReservoirConfig c;
  CHECK_NOTHROW(c.validate());
  c.refresh_every = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}
