#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "dgmm/gaussian.hpp"
#include "dgmm/mixture.hpp"
#include "dgmm/rng.hpp"

namespace dgmm {

/// Densities below this are floored before taking logs.
inline constexpr double kDensityFloor = 1e-300;

/// Fixed-size Gaussian mixture; weights sum to 1.
struct Gmm {
  std::vector<WeightedGaussian> components;

  std::size_t size() const { return components.size(); }
  int dim() const { return components.empty() ? 0 : components.front().g.dim(); }
  double density(const Vector& x) const { return weighted_density(components, x); }
};

struct EmOptions {
  double tol = 1e-8;  ///< per-point log-likelihood improvement
  int max_iter = 500;
  int restarts = 5;
};

struct EmResult {
  Gmm gmm;
  double log_likelihood = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  /// Data log-likelihood at the initial parameters and after every
  /// iteration, one list per restart.
  std::vector<std::vector<double>> traces;
};

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline Vector mean_of(const std::vector<Vector>& points) {
  Vector m = Vector::Zero(points.front().size());
  for (const auto& p : points) m += p;
  return m / static_cast<double>(points.size());
}

// Maximum-likelihood (1/N) covariance about `mean`.
inline Matrix ml_cov(const std::vector<Vector>& points, const Vector& mean) {
  Matrix c = Matrix::Zero(mean.size(), mean.size());
  for (const auto& p : points) {
    const Vector d = p - mean;
    c += d * d.transpose();
  }
  return c / static_cast<double>(points.size());
}

// One E-step: fills responsibilities and returns the data log-likelihood.
inline double expectation(const std::vector<Vector>& points, const Gmm& gmm, Matrix& resp) {
  const std::size_t m = gmm.size();
  std::vector<double> logs(m);
  std::vector<double> log_w(m);
  for (std::size_t k = 0; k < m; ++k) log_w[k] = std::log(gmm.components[k].w);
  double ll = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t k = 0; k < m; ++k) logs[k] = log_w[k] + gmm.components[k].g.log_density(points[i]);
    const double lse = log_sum_exp(logs);
    ll += lse;
    for (std::size_t k = 0; k < m; ++k)
      resp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = std::exp(logs[k] - lse);
  }
  return ll;
}

inline Gmm maximization(const std::vector<Vector>& points, const Matrix& resp, const Gmm& previous) {
  const auto n = static_cast<double>(points.size());
  const Eigen::Index d = points.front().size();
  Gmm next;
  for (Eigen::Index k = 0; k < resp.cols(); ++k) {
    const double nk = resp.col(k).sum();
    if (!(nk > 0.0)) {
      // Component lost all support; keep its previous parameters at zero-ish weight.
      next.components.push_back({previous.components[static_cast<std::size_t>(k)].g,
                                 std::numeric_limits<double>::min()});
      continue;
    }
    Vector mean = Vector::Zero(d);
    for (std::size_t i = 0; i < points.size(); ++i) mean += resp(static_cast<Eigen::Index>(i), k) * points[i];
    mean /= nk;
    Matrix cov = Matrix::Zero(d, d);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const Vector diff = points[i] - mean;
      cov += resp(static_cast<Eigen::Index>(i), k) * (diff * diff.transpose());
    }
    cov /= nk;
    next.components.push_back({Gaussian::regularized(std::move(mean), symmetrize(cov)), nk / n});
  }
  double total = 0.0;
  for (const auto& c : next.components) total += c.w;
  for (auto& c : next.components) c.w /= total;
  return next;
}

}  // namespace detail

/// Offline fixed-size GMM fit by expectation-maximization. Each restart
/// starts from m distinct random data points as means, the data covariance
/// for every component and uniform weights; the best restart is returned.
inline EmResult em_fit(const std::vector<Vector>& points, int m, RngStream& rng,
                       const EmOptions& opts = {}) {
  if (points.empty()) throw InvalidArgument("em_fit: no points");
  if (m < 1) throw InvalidArgument("em_fit: need at least one component");
  if (points.size() < static_cast<std::size_t>(m))
    throw InvalidArgument("em_fit: fewer points than components");
  const Eigen::Index d = points.front().size();
  for (const auto& p : points)
    if (p.size() != d) throw DimensionError("em_fit: ragged points");

  const Vector data_mean = detail::mean_of(points);
  const Matrix data_cov = symmetrize(detail::ml_cov(points, data_mean));
  const auto n = static_cast<double>(points.size());

  EmResult best;
  std::vector<std::size_t> order(points.size());
  for (int restart = 0; restart < std::max(1, opts.restarts); ++restart) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    Gmm gmm;
    for (int k = 0; k < m; ++k)
      gmm.components.push_back({Gaussian::regularized(points[order[static_cast<std::size_t>(k)]], data_cov),
                                1.0 / m});

    Matrix resp(static_cast<Eigen::Index>(points.size()), m);
    double ll = detail::expectation(points, gmm, resp);
    std::vector<double> trace{ll};
    bool converged = false;
    int it = 0;
    while (it < opts.max_iter) {
      gmm = detail::maximization(points, resp, gmm);
      ++it;
      const double next = detail::expectation(points, gmm, resp);
      trace.push_back(next);
      const double gain = (next - ll) / n;
      ll = next;
      if (gain < opts.tol) {
        converged = true;
        break;
      }
    }
    if (ll > best.log_likelihood || best.traces.empty()) {
      best.gmm = gmm;
      best.log_likelihood = ll;
      best.iterations = it;
      best.converged = converged;
    }
    best.traces.push_back(std::move(trace));
  }
  return best;
}

/// sum_n ln max(p(x_n), floor)
template <typename Density>
double log_likelihood(const Density& density, std::span<const Vector> points) {
  double sum = 0.0;
  for (const auto& x : points) sum += std::log(std::max(density(x), kDensityFloor));
  return sum;
}

/// Axis-aligned evaluation grid for quadrature: `resolution` midpoint cells
/// per axis over [lo, hi].
struct Grid {
  Vector lo;
  Vector hi;
  int resolution = 150;

  double cell_volume() const {
    return ((hi - lo) / static_cast<double>(resolution)).prod();
  }

  void validate() const {
    if (lo.size() == 0 || lo.size() != hi.size()) throw InvalidArgument("Grid: bounds have mismatched dimension");
    if (resolution < 1) throw InvalidArgument("Grid: resolution must be positive");
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      if (!(hi(i) > lo(i)) || !std::isfinite(lo(i)) || !std::isfinite(hi(i)))
        throw InvalidArgument("Grid: empty or non-finite extent on axis " + std::to_string(i));
  }

  /// Calls f(point) at every cell midpoint.
  template <typename F>
  void for_each(F&& f) const {
    validate();
    const Eigen::Index d = lo.size();
    const Vector step = (hi - lo) / static_cast<double>(resolution);
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    Vector x(d);
    while (true) {
      for (Eigen::Index a = 0; a < d; ++a) x(a) = lo(a) + (idx[static_cast<std::size_t>(a)] + 0.5) * step(a);
      f(static_cast<const Vector&>(x));
      Eigen::Index a = 0;
      while (a < d && ++idx[static_cast<std::size_t>(a)] == resolution) idx[static_cast<std::size_t>(a++)] = 0;
      if (a == d) break;
    }
  }

  /// Bounding box of every component's mean +/- `sigmas` marginal standard
  /// deviations.
  static Grid covering(std::span<const WeightedGaussian> components, double sigmas = 8.0, int resolution = 150) {
    if (components.empty()) throw InvalidArgument("Grid::covering: no components");
    const Eigen::Index d = components.front().g.dim();
    Vector lo = Vector::Constant(d, std::numeric_limits<double>::infinity());
    Vector hi = -lo;
    for (const auto& c : components) {
      const Vector sd = c.g.effective_cov().diagonal().cwiseSqrt();
      lo = lo.cwiseMin(c.g.mean() - sigmas * sd);
      hi = hi.cwiseMax(c.g.mean() + sigmas * sd);
    }
    return {lo, hi, resolution};
  }
};

/// Riemann-sum integral of (p - q)^2 over the grid.
template <typename P, typename Q>
double mise(const P& p, const Q& q, const Grid& grid) {
  double sum = 0.0;
  grid.for_each([&](const Vector& x) {
    const double diff = p(x) - q(x);
    sum += diff * diff;
  });
  return sum * grid.cell_volume();
}

/// Riemann-sum integral of p over the grid.
template <typename P>
double integrate(const P& p, const Grid& grid) {
  double sum = 0.0;
  grid.for_each([&](const Vector& x) { sum += p(x); });
  return sum * grid.cell_volume();
}

}  // namespace dgmm
