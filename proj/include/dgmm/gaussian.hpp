#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "dgmm/error.hpp"

namespace dgmm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Default epsilon for trace-scaled covariance regularization.
inline constexpr double kRegularizationEpsilon = 1e-9;

/// A factorization whose smallest squared pivot falls below this fraction of
/// the trace scale is treated as singular.
inline constexpr double kSingularPivotTolerance = 1e-12;

/// Partition of coordinate indices {0..D-1} into a kept block and a dropped
/// (conditioned-on) block. Both lists are sorted.
struct IndexSplit {
  std::vector<int> kept;
  std::vector<int> dropped;

  /// Leading `kept_count` coordinates kept, the rest dropped.
  static IndexSplit leading(int kept_count, int dim) {
    IndexSplit s;
    for (int i = 0; i < dim; ++i) (i < kept_count ? s.kept : s.dropped).push_back(i);
    return s;
  }
};

namespace detail {

inline double trace_scale(const Matrix& cov) {
  const auto d = static_cast<double>(cov.rows());
  return d > 0 ? std::max(1.0, cov.trace() / d) : 1.0;
}

inline bool symmetric(const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = i + 1; j < m.cols(); ++j)
      if (std::abs(m(i, j) - m(j, i)) > 1e-12 * std::max(1.0, std::abs(m(i, j)))) return false;
  return true;
}

// True when the factor exists and is not numerically singular.
inline bool usable_factor(const Eigen::LLT<Matrix>& llt, double scale) {
  if (llt.info() != Eigen::Success) return false;
  const Vector diag = llt.matrixL().toDenseMatrix().diagonal();
  if (!diag.allFinite()) return false;
  return diag.array().square().minCoeff() > kSingularPivotTolerance * scale;
}

inline void check_indices(const std::vector<int>& idx, int dim, const char* what) {
  if (idx.empty()) throw InvalidArgument(std::string(what) + ": empty index set");
  std::vector<bool> seen(static_cast<std::size_t>(dim), false);
  for (int i : idx) {
    if (i < 0 || i >= dim)
      throw InvalidArgument(std::string(what) + ": index " + std::to_string(i) + " out of range");
    if (seen[static_cast<std::size_t>(i)])
      throw InvalidArgument(std::string(what) + ": duplicate index " + std::to_string(i));
    seen[static_cast<std::size_t>(i)] = true;
  }
}

inline Vector take(const Vector& v, const std::vector<int>& idx) {
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(idx[i]);
  return out;
}

inline Matrix take(const Matrix& m, const std::vector<int>& rows, const std::vector<int>& cols) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(rows[i], cols[j]);
  return out;
}

}  // namespace detail

/// Returns cov + epsilon * max(1, trace(cov)/D) * I.
inline Matrix regularize(const Matrix& cov, double epsilon = kRegularizationEpsilon) {
  Matrix out = cov;
  out.diagonal().array() += epsilon * detail::trace_scale(cov);
  return out;
}

/// (M + M^T) / 2
inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Multivariate normal N(mean, cov) with a cached Cholesky factor.
///
/// The stored covariance is always the one supplied by the caller. When it was
/// built through `regularized()` and the factorization failed, the cached
/// factor belongs to `regularize(cov)` instead, and every density evaluation
/// uses that regularized matrix.
class Gaussian {
 public:
  Gaussian() = default;

  /// Throws DimensionError on shape mismatch and NotPositiveDefinite when the
  /// covariance cannot be factorized.
  Gaussian(Vector mean, Matrix cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
    check_shapes();
    if (!factorize(cov_)) throw NotPositiveDefinite("covariance is not positive definite");
  }

  /// Builds a Gaussian, regularizing the factorization when the covariance is
  /// singular or indefinite. The epsilon grows tenfold until the factor exists.
  static Gaussian regularized(Vector mean, Matrix cov, double epsilon = kRegularizationEpsilon) {
    Gaussian g;
    g.mean_ = std::move(mean);
    g.cov_ = std::move(cov);
    g.check_shapes();
    if (g.factorize(g.cov_)) return g;
    for (double eps = epsilon; eps <= 1e3; eps *= 10.0) {
      if (g.factorize(regularize(g.cov_, eps))) {
        g.ridge_ = eps * detail::trace_scale(g.cov_);
        return g;
      }
    }
    throw NotPositiveDefinite("covariance could not be regularized");
  }

  /// Keeps `cov` as the stored moment but evaluates densities with
  /// `effective` (itself regularized when singular).
  static Gaussian with_effective(Vector mean, Matrix cov, const Matrix& effective,
                                 double epsilon = kRegularizationEpsilon) {
    Gaussian g = regularized(std::move(mean), effective, epsilon);
    if (cov.rows() != g.mean_.size() || cov.cols() != g.mean_.size())
      throw DimensionError("Gaussian: stored covariance shape mismatch");
    g.ridge_matrix_ = g.effective_cov();
    g.cov_ = std::move(cov);
    return g;
  }

  int dim() const { return static_cast<int>(mean_.size()); }
  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }

  /// True when densities use a regularized copy of cov().
  bool is_regularized() const { return ridge_ > 0.0 || ridge_matrix_.size() != 0; }

  /// The covariance densities are evaluated with: cov() plus any ridge added
  /// by regularization.
  Matrix effective_cov() const {
    if (ridge_matrix_.size() != 0) return ridge_matrix_;
    Matrix out = cov_;
    out.diagonal().array() += ridge_;
    return out;
  }

  /// (x - mean)^T Sigma^-1 (x - mean)
  double mahalanobis_squared(const Vector& x) const {
    check_point(x);
    const Vector r = llt_.matrixL().solve(x - mean_);
    return r.squaredNorm();
  }

  double log_density(const Vector& x) const { return log_peak_ - 0.5 * mahalanobis_squared(x); }

  double density(const Vector& x) const { return std::exp(log_density(x)); }

  /// density(x) / density(mean), in (0, 1].
  double normalized_density(const Vector& x) const {
    return std::exp(-0.5 * mahalanobis_squared(x));
  }

  /// Log of the density at the mean.
  double log_peak() const { return log_peak_; }

  /// Marginal over the `kept` coordinates, in the order given.
  Gaussian marginal(const std::vector<int>& kept) const {
    detail::check_indices(kept, dim(), "marginal");
    return Gaussian::regularized(detail::take(mean_, kept), detail::take(cov_, kept, kept));
  }

  /// Distribution of the kept block given the dropped block equals `z`.
  /// Throws NotPositiveDefinite when the dropped block's covariance is singular.
  Gaussian conditional(const IndexSplit& split, const Vector& z) const {
    check_split(split);
    if (z.size() != static_cast<Eigen::Index>(split.dropped.size()))
      throw DimensionError("conditional: conditioning vector has wrong dimension");
    const Matrix szz = detail::take(cov_, split.dropped, split.dropped);
    Eigen::LLT<Matrix> zz(szz);
    if (!detail::usable_factor(zz, detail::trace_scale(szz)))
      throw NotPositiveDefinite("conditional: conditioning block is singular");
    const Matrix sxz = detail::take(cov_, split.kept, split.dropped);
    const Vector mx = detail::take(mean_, split.kept);
    const Vector mz = detail::take(mean_, split.dropped);
    // gain = Sxz Szz^-1
    const Matrix gain = zz.solve(sxz.transpose()).transpose();
    Vector mean = mx + gain * (z - mz);
    Matrix cov = symmetrize(detail::take(cov_, split.kept, split.kept) - gain * sxz.transpose());
    return Gaussian::regularized(std::move(mean), std::move(cov));
  }

 private:
  void check_shapes() const {
    if (mean_.size() == 0) throw DimensionError("Gaussian: zero dimension");
    if (cov_.rows() != mean_.size() || cov_.cols() != mean_.size())
      throw DimensionError("Gaussian: covariance is " + std::to_string(cov_.rows()) + "x" +
                           std::to_string(cov_.cols()) + " for mean of size " +
                           std::to_string(mean_.size()));
    if (!mean_.allFinite() || !cov_.allFinite()) throw InvalidArgument("Gaussian: non-finite parameters");
  }

  void check_point(const Vector& x) const {
    if (x.size() != mean_.size())
      throw DimensionError("Gaussian: point of dimension " + std::to_string(x.size()) +
                           ", expected " + std::to_string(mean_.size()));
  }

  void check_split(const IndexSplit& split) const {
    detail::check_indices(split.kept, dim(), "conditional kept");
    detail::check_indices(split.dropped, dim(), "conditional dropped");
    if (split.kept.size() + split.dropped.size() != static_cast<std::size_t>(dim()))
      throw InvalidArgument("conditional: split does not cover every coordinate");
    for (int k : split.kept)
      if (std::find(split.dropped.begin(), split.dropped.end(), k) != split.dropped.end())
        throw InvalidArgument("conditional: index in both blocks");
  }

  bool factorize(const Matrix& m) {
    llt_.compute(m);
    if (!detail::usable_factor(llt_, detail::trace_scale(m))) return false;
    const Vector diag = llt_.matrixL().toDenseMatrix().diagonal();
    const double log_det = 2.0 * diag.array().log().sum();
    log_peak_ = -0.5 * (static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi) + log_det);
    return true;
  }

  Vector mean_;
  Matrix cov_;
  Eigen::LLT<Matrix> llt_;
  double log_peak_ = 0.0;
  double ridge_ = 0.0;
  Matrix ridge_matrix_;
};

}  // namespace dgmm
