#pragma once

// Shared fixtures for the test binaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "sane/backbone.hpp"
#include "sane/data.hpp"
#include "sane/rng.hpp"

namespace sane::test {

inline InteractionLog random_log(std::size_t n_users, std::size_t n_items, std::size_t n_events,
                                 std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> u(0, static_cast<int>(n_users) - 1);
  std::uniform_int_distribution<int> i(0, static_cast<int>(n_items) - 1);
  std::vector<InteractionEvent> ev(n_events);
  for (std::size_t e = 0; e < n_events; ++e) {
    ev[e] = {u(rng), i(rng), static_cast<std::int64_t>(e)};
  }
  return make_log(std::move(ev));
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = n(rng);
  return m;
}

inline NodeRepresentations random_reps(std::size_t n_users, std::size_t n_items, std::size_t d,
                                       Rng& rng, double scale = 0.5) {
  return {random_matrix(static_cast<Eigen::Index>(n_users), static_cast<Eigen::Index>(d), rng, scale),
          random_matrix(static_cast<Eigen::Index>(n_items), static_cast<Eigen::Index>(d), rng, scale)};
}

// Central differences of f with respect to every entry of x.
inline Matrix numeric_gradient(Matrix& x, const std::function<double()>& f, double h = 1e-6) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double keep = x(r, c);
      x(r, c) = keep + h;
      const double up = f();
      x(r, c) = keep - h;
      const double down = f();
      x(r, c) = keep;
      g(r, c) = (up - down) / (2.0 * h);
    }
  }
  return g;
}

inline double rel_error(const Matrix& analytic, const Matrix& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-8});
  return (analytic - numeric).norm() / scale;
}

}  // namespace sane::test
