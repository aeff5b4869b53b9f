#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dgmm/gaussian.hpp"
#include "dgmm/rng.hpp"

namespace dgmm {

/// A Gaussian paired with its unnormalized weight. Under the online update
/// rules the weight counts the samples that formed the component.
struct WeightedGaussian {
  Gaussian g;
  double w = 1.0;
};

/// sum_i (w_i / sum_j w_j) * g_i(x). Shared by every mixture type so that
/// identical parameters evaluate identically.
inline double weighted_density(std::span<const WeightedGaussian> components, const Vector& x) {
  if (components.empty()) throw InvalidArgument("mixture density of an empty mixture");
  double total = 0.0;
  for (const auto& c : components) total += c.w;
  double p = 0.0;
  for (const auto& c : components) p += (c.w / total) * c.g.density(x);
  return p;
}

/// t = 1 - (1 - d) exp(-k n)
inline double merge_threshold(double d, double n, double k) {
  return 1.0 - (1.0 - d) * std::exp(-k * n);
}

/// Components lighter than this many samples are evaluated with a covariance
/// blended toward the creation covariance; see make_component.
inline constexpr double kDefaultPriorHorizon = 20.0;

/// Builds a component from its sample moments. The stored covariance is always
/// the moment estimate; the one used for densities fades linearly from
/// `init_cov_scale * I` at w = 1 to the moment estimate at w = horizon + 1:
///   ((w - 1) S + (horizon + 1 - w) s I) / horizon.
/// A horizon of 0 evaluates the moments directly (ridge-regularized if
/// singular). The horizon is independent of the dimension so that dropping
/// coordinates from a model leaves the remaining blocks unchanged.
inline WeightedGaussian make_component(Vector mean, Matrix cov, double w, double init_cov_scale,
                                       double horizon) {
  if (horizon > 0.0 && w <= horizon) {
    const auto dim = mean.size();
    const Matrix eff = ((w - 1.0) * cov + (horizon + 1.0 - w) * init_cov_scale * Matrix::Identity(dim, dim)) / horizon;
    return {Gaussian::with_effective(std::move(mean), std::move(cov), eff), w};
  }
  return {Gaussian::regularized(std::move(mean), std::move(cov)), w};
}

/// Folds one sample into a component: the weight grows by one and the mean and
/// unbiased covariance are updated incrementally. With a single prior sample
/// the creation covariance drops out entirely.
inline WeightedGaussian merge_into(const WeightedGaussian& c, const Vector& x, double init_cov_scale = 1.0,
                                   double horizon = 0.0) {
  const Vector& mu = c.g.mean();
  if (x.size() != mu.size())
    throw DimensionError("merge_into: sample of dimension " + std::to_string(x.size()) +
                         ", component has " + std::to_string(mu.size()));
  const double w_old = c.w;
  const double w_new = w_old + 1.0;
  const Vector delta = x - mu;
  Vector mean = mu + delta / w_new;
  // Same update as
  //   ((w-1)/w) S + mu mu^T + (1/w) x x^T - ((w+1)/w) mu' mu'^T
  // rearranged to avoid cancellation between the outer products.
  Matrix cov = ((w_old - 1.0) / w_old) * c.g.cov() + (delta * delta.transpose()) / w_new;
  return make_component(std::move(mean), symmetrize(cov), w_new, init_cov_scale, horizon);
}

enum class MergePolicy {
  threshold,     ///< merge when r < t
  always_merge,  ///< merge whenever a component exists
};

/// What add_sample did with a sample.
struct AddOutcome {
  bool merged = false;
  std::size_t component = 0;
  double threshold = 0.0;
};

/// Dynamic Gaussian mixture: a weighted Gaussian set that grows online.
/// Components are only ever added or refined, never removed.
class Dgmm {
 public:
  /// `dim` of 0 leaves the dimension to be fixed by the first sample.
  explicit Dgmm(int dim = 0, double init_cov_scale = 1.0, double prior_horizon = kDefaultPriorHorizon)
      : dim_(dim), init_cov_scale_(init_cov_scale), prior_horizon_(prior_horizon) {
    if (dim < 0) throw InvalidArgument("Dgmm: negative dimension");
    if (!(init_cov_scale > 0.0)) throw InvalidArgument("Dgmm: init_cov_scale must be positive");
    if (!(prior_horizon >= 0.0) || !std::isfinite(prior_horizon))
      throw InvalidArgument("Dgmm: prior_horizon must be finite and non-negative");
  }

  int dim() const { return dim_; }
  double init_cov_scale() const { return init_cov_scale_; }
  double prior_horizon() const { return prior_horizon_; }
  std::size_t size() const { return components_.size(); }
  bool empty() const { return components_.empty(); }
  const std::vector<WeightedGaussian>& components() const { return components_; }

  /// Appends a component as-is (loading, conditioning). Weight must be positive.
  void append(WeightedGaussian c) {
    if (dim_ == 0) dim_ = c.g.dim();
    if (c.g.dim() != dim_) throw DimensionError("Dgmm::append: component dimension mismatch");
    if (!(c.w > 0.0) || !std::isfinite(c.w)) throw InvalidArgument("Dgmm::append: weight must be positive");
    components_.push_back(std::move(c));
    mass_.clear();
  }

  double total_weight() const {
    double n = 0.0;
    for (const auto& c : components_) n += c.w;
    return n;
  }

  double density(const Vector& x) const {
    check_point(x);
    return weighted_density(components_, x);
  }

  /// Mixture density divided by its largest value over the component means,
  /// clamped to 1.
  double normalized_density(const Vector& x) const {
    check_point(x);
    if (empty()) throw InvalidArgument("normalized density of an empty mixture");
    const double peak = mass_.size() == components_.size() ? *std::max_element(mass_.begin(), mass_.end()) / total_weight()
                                                           : peak_estimate();
    return std::min(1.0, density(x) / peak);
  }

  /// Largest mixture density over the component means.
  double peak_estimate() const {
    double best = 0.0;
    for (const auto& c : components_) best = std::max(best, weighted_density(components_, c.g.mean()));
    return best;
  }

  /// Index drawn with probability proportional to w_i * normalized_density_i(x).
  /// When every score underflows, the component nearest in Mahalanobis
  /// distance is returned.
  std::size_t select_component(const Vector& x, RngStream& rng) const {
    check_point(x);
    if (empty()) throw InvalidArgument("select_component on an empty mixture");
    std::vector<double> scores(components_.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < components_.size(); ++i) {
      scores[i] = components_[i].w * components_[i].g.normalized_density(x);
      sum += scores[i];
    }
    if (sum > 0.0) return rng.categorical(scores);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < components_.size(); ++i) {
      const double m = components_[i].g.mahalanobis_squared(x);
      if (m < best_d) {
        best_d = m;
        best = i;
      }
    }
    return best;
  }

  /// Incorporates one sample: merges it into an existing component with
  /// probability t = merge_threshold(d, n, k), otherwise starts a new
  /// component with mean x and identity covariance (times init_cov_scale).
  AddOutcome add_sample(const Vector& x, double k, RngStream& rng,
                        MergePolicy policy = MergePolicy::threshold) {
    if (dim_ == 0) dim_ = static_cast<int>(x.size());
    check_point(x);
    if (!x.allFinite()) throw InvalidArgument("add_sample: non-finite sample");
    if (!(k >= 0.0)) throw InvalidArgument("add_sample: k must be non-negative");

    const double r = rng.uniform();
    const double n = total_weight();
    double t = 0.0;
    if (!empty()) {
      ensure_mass();
      const double d = normalized_density(x);
      t = policy == MergePolicy::always_merge ? 1.0 : merge_threshold(d, n, k);
    }

    if (!empty() && r < t) {
      const std::size_t i = select_component(x, rng);
      WeightedGaussian updated = merge_into(components_[i], x, init_cov_scale_, prior_horizon_);
      replace_mass(i, updated);
      components_[i] = std::move(updated);
      return {true, i, t};
    }

    WeightedGaussian fresh = make_component(x, init_cov_scale_ * Matrix::Identity(dim_, dim_), 1.0, init_cov_scale_, prior_horizon_);
    push_mass(fresh);
    components_.push_back(std::move(fresh));
    return {false, components_.size() - 1, t};
  }

 private:
  void check_point(const Vector& x) const {
    if (dim_ != 0 && x.size() != dim_)
      throw DimensionError("Dgmm: point of dimension " + std::to_string(x.size()) + ", expected " +
                           std::to_string(dim_));
  }

  // mass_[i] = sum_j w_j g_j(mean_i), the unnormalized mixture density at
  // each component mean. Kept in step with components_ by add_sample.
  void ensure_mass() {
    if (mass_.size() == components_.size()) return;
    mass_.assign(components_.size(), 0.0);
    for (std::size_t i = 0; i < components_.size(); ++i)
      for (const auto& c : components_) mass_[i] += c.w * c.g.density(components_[i].g.mean());
  }

  void replace_mass(std::size_t idx, const WeightedGaussian& updated) {
    const WeightedGaussian& old = components_[idx];
    for (std::size_t i = 0; i < components_.size(); ++i) {
      if (i == idx) continue;
      const Vector& m = components_[i].g.mean();
      mass_[i] += updated.w * updated.g.density(m) - old.w * old.g.density(m);
      mass_[i] = std::max(mass_[i], 0.0);
    }
    double own = 0.0;
    for (std::size_t j = 0; j < components_.size(); ++j) {
      const WeightedGaussian& c = j == idx ? updated : components_[j];
      own += c.w * c.g.density(updated.g.mean());
    }
    mass_[idx] = own;
  }

  void push_mass(const WeightedGaussian& fresh) {
    if (mass_.size() != components_.size()) {
      mass_.clear();
      return;
    }
    double own = fresh.w * fresh.g.density(fresh.g.mean());
    for (std::size_t i = 0; i < components_.size(); ++i) {
      mass_[i] += fresh.w * fresh.g.density(components_[i].g.mean());
      own += components_[i].w * components_[i].g.density(fresh.g.mean());
    }
    mass_.push_back(own);
  }

  int dim_ = 0;
  double init_cov_scale_ = 1.0;
  double prior_horizon_ = kDefaultPriorHorizon;
  std::vector<WeightedGaussian> components_;
  std::vector<double> mass_;
};

}  // namespace dgmm
