#include "sane/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "sane/rng.hpp"

namespace sane {

namespace {

double sq_dist(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index k) {
  return (a.row(i) - b.row(k)).squaredNorm();
}

std::pair<Eigen::Index, double> nearest(const Matrix& x, Eigen::Index i, const Matrix& c,
                                        Eigen::Index n_centroids) {
  Eigen::Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < n_centroids; ++k) {
    const double d = sq_dist(x, i, c, k);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return {best, best_d};
}

Matrix student_t_weights(const Matrix& items, const Matrix& centroids, double nu,
                         Matrix* sq_dists = nullptr) {
  const auto n = items.rows();
  const auto k = centroids.rows();
  Matrix w(n, k);
  if (sq_dists) sq_dists->resize(n, k);
  const double expo = -(nu + 1.0) / 2.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      const double d = sq_dist(items, i, centroids, j);
      if (sq_dists) (*sq_dists)(i, j) = d;
      w(i, j) = std::pow(1.0 + d / nu, expo);
    }
  }
  return w;
}

void normalise_rows(Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double s = m.row(i).sum();
    m.row(i) /= s;
  }
}

}  // namespace

Matrix kmeans_init(const Matrix& item_reps, std::size_t k, std::uint64_t seed,
                   std::size_t max_iters) {
  const auto n = item_reps.rows();
  const auto kk = static_cast<Eigen::Index>(k);
  if (k == 0) throw Error("K must be at least 1");
  if (kk > n) {
    throw Error("K = " + std::to_string(k) + " exceeds the number of items (" +
                std::to_string(n) + ")");
  }
  Rng rng(seed);
  Matrix c(kk, item_reps.cols());

  // k-means++ seeding
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  Eigen::Index pick = first(rng);
  c.row(0) = item_reps.row(pick);
  chosen[static_cast<std::size_t>(pick)] = true;
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index j = 1; j < kk; ++j) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[static_cast<std::size_t>(i)] = chosen[static_cast<std::size_t>(i)] ? 0.0 : nearest(item_reps, i, c, j).second;
      total += d2[static_cast<std::size_t>(i)];
    }
    if (total > 0.0) {
      std::discrete_distribution<Eigen::Index> dist(d2.begin(), d2.end());
      pick = dist(rng);
    } else {
      // Remaining points coincide with existing centroids.
      pick = 0;
      while (chosen[static_cast<std::size_t>(pick)]) ++pick;
    }
    c.row(j) = item_reps.row(pick);
    chosen[static_cast<std::size_t>(pick)] = true;
  }

  // Lloyd iterations
  std::vector<Eigen::Index> assign(static_cast<std::size_t>(n), -1);
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto a = nearest(item_reps, i, c, kk).first;
      if (a != assign[static_cast<std::size_t>(i)]) {
        assign[static_cast<std::size_t>(i)] = a;
        changed = true;
      }
    }
    Matrix sums = Matrix::Zero(kk, item_reps.cols());
    std::vector<std::size_t> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += item_reps.row(i);
      ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (Eigen::Index j = 0; j < kk; ++j) {
      if (counts[static_cast<std::size_t>(j)] > 0) {
        c.row(j) = sums.row(j) / static_cast<double>(counts[static_cast<std::size_t>(j)]);
        continue;
      }
      // Empty cluster: move it to the point farthest from its assigned centroid.
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = sq_dist(item_reps, i, c, assign[static_cast<std::size_t>(i)]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      c.row(j) = item_reps.row(far);
      assign[static_cast<std::size_t>(far)] = j;
      changed = true;
    }
    if (!changed) break;
  }
  return c;
}

double kmeans_cost(const Matrix& item_reps, const Matrix& centroids) {
  double cost = 0.0;
  for (Eigen::Index i = 0; i < item_reps.rows(); ++i) {
    cost += nearest(item_reps, i, centroids, centroids.rows()).second;
  }
  return cost;
}

Matrix soft_assign(const Matrix& item_reps, const Matrix& centroids, double nu) {
  if (!(nu > 0.0)) throw Error("degrees of freedom nu must be positive");
  if (item_reps.cols() != centroids.cols()) throw Error("item/centroid dimension mismatch");
  Matrix q = student_t_weights(item_reps, centroids, nu);
  normalise_rows(q);
  return q;
}

Matrix sharpen(const Matrix& q) {
  const Eigen::RowVectorXd f = q.colwise().sum();
  for (Eigen::Index k = 0; k < f.size(); ++k) {
    if (!(f(k) > 0.0)) {
      throw Error("cluster " + std::to_string(k) + " has zero total assignment");
    }
  }
  Matrix p(q.rows(), q.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    for (Eigen::Index k = 0; k < q.cols(); ++k) p(i, k) = q(i, k) * q(i, k) / f(k);
  }
  normalise_rows(p);
  return p;
}

double kl_divergence(const Matrix& p, const Matrix& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols()) throw Error("P/Q shape mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index k = 0; k < p.cols(); ++k) {
      const double pk = p(i, k);
      if (pk <= 0.0) continue;
      if (!(q(i, k) > 0.0)) {
        throw Error("q(" + std::to_string(i) + "," + std::to_string(k) +
                    ") is zero where the target is positive");
      }
      total += pk * std::log(pk / q(i, k));
    }
  }
  return total;
}

KlResult kl_loss(const Matrix& p, const Matrix& item_reps, const Matrix& centroids, double nu) {
  if (!(nu > 0.0)) throw Error("degrees of freedom nu must be positive");
  Matrix d2;
  Matrix q = student_t_weights(item_reps, centroids, nu, &d2);
  normalise_rows(q);
  KlResult r;
  r.value = kl_divergence(p, q);
  r.grad_items = Matrix::Zero(item_reps.rows(), item_reps.cols());
  r.grad_centroids = Matrix::Zero(centroids.rows(), centroids.cols());
  const double scale = (nu + 1.0) / nu;
  for (Eigen::Index i = 0; i < item_reps.rows(); ++i) {
    for (Eigen::Index k = 0; k < centroids.rows(); ++k) {
      // d/dh_i = (nu+1)/nu * (1 + d_ik/nu)^-1 * (p_ik - q_ik) * (h_i - mu_k)
      const double coef = scale / (1.0 + d2(i, k) / nu) * (p(i, k) - q(i, k));
      const Eigen::RowVectorXd diff = item_reps.row(i) - centroids.row(k);
      r.grad_items.row(i) += coef * diff;
      r.grad_centroids.row(k) -= coef * diff;
    }
  }
  return r;
}

Membership membership(std::span<const double> p_row, double tau) {
  if (!(tau > 0.0)) throw Error("membership temperature tau must be positive");
  if (p_row.empty()) throw Error("empty probability row");
  Membership m;
  m.soft.resize(p_row.size());
  double mx = p_row[0];
  for (std::size_t k = 1; k < p_row.size(); ++k) {
    if (p_row[k] > mx) {
      mx = p_row[k];
      m.hard = static_cast<Category>(k);
    }
  }
  double total = 0.0;
  for (std::size_t k = 0; k < p_row.size(); ++k) {
    m.soft[k] = std::exp((p_row[k] - mx) / tau);
    total += m.soft[k];
  }
  for (auto& v : m.soft) v /= total;
  return m;
}

CategoryMap hard_categories(const Matrix& p) {
  CategoryMap out(static_cast<std::size_t>(p.rows()), 0);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < p.cols(); ++k) {
      if (p(i, k) > p(i, best)) best = k;
    }
    out[static_cast<std::size_t>(i)] = static_cast<Category>(best);
  }
  return out;
}

void write_category_map(std::ostream& out, const CategoryMap& categories) {
  for (std::size_t i = 0; i < categories.size(); ++i) out << i << "," << categories[i] << "\n";
}

}  // namespace sane
