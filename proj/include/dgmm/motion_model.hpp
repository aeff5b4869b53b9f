#pragma once

#include <cmath>
#include <compare>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "dgmm/gaussian.hpp"
#include "dgmm/mixture.hpp"
#include "dgmm/rng.hpp"

namespace dgmm {

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::remainder(a, two_pi);
  if (r <= -std::numbers::pi) r += two_pi;
  return r;
}

/// Discrete command <long, lat, turn>.
struct CommandKey {
  double longitudinal = 0.0;
  double lateral = 0.0;
  double turn = 0.0;

  auto operator<=>(const CommandKey&) const = default;

  bool is_noop() const { return longitudinal == 0.0 && lateral == 0.0 && turn == 0.0; }

  std::string to_string() const {
    return "<" + fmt(longitudinal) + "," + fmt(lateral) + "," + fmt(turn) + ">";
  }

 private:
  static std::string fmt(double v) {
    std::string s = std::to_string(v);
    s.erase(s.find_last_not_of('0') + 1);
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  }
};

/// The 26 commands {-0.5, 0, 0.5}^3 without the no-op, in lexicographic order.
inline std::vector<CommandKey> discrete_command_set() {
  constexpr double levels[] = {-0.5, 0.0, 0.5};
  std::vector<CommandKey> out;
  for (double l : levels)
    for (double a : levels)
      for (double t : levels) {
        CommandKey c{l, a, t};
        if (!c.is_noop()) out.push_back(c);
      }
  return out;
}

struct Pose {
  double x = 0, y = 0, z = 0;
  double roll = 0, pitch = 0, yaw = 0;
};

/// Change in pose <dx, dy, dz, droll, dpitch, dyaw>.
struct DeltaPose {
  double dx = 0, dy = 0, dz = 0;
  double droll = 0, dpitch = 0, dyaw = 0;

  static constexpr int kDim = 6;

  Vector to_vector() const {
    Vector v(kDim);
    v << dx, dy, dz, droll, dpitch, dyaw;
    return v;
  }

  static DeltaPose from_vector(const Vector& v) {
    if (v.size() != kDim) throw DimensionError("DeltaPose: expected 6 components");
    return {v(0), v(1), v(2), v(3), v(4), v(5)};
  }

  bool operator==(const DeltaPose&) const = default;
};

/// Robot attitude recorded before a command; stands in for terrain shape.
struct TerrainVector {
  double pitch = 0;
  double roll = 0;

  static constexpr int kDim = 2;

  Vector to_vector() const {
    Vector v(kDim);
    v << pitch, roll;
    return v;
  }

  bool operator==(const TerrainVector&) const = default;
};

/// Componentwise pose difference with angle deltas wrapped to (-pi, pi].
inline DeltaPose pose_delta(const Pose& prev, const Pose& curr) {
  return {curr.x - prev.x,
          curr.y - prev.y,
          curr.z - prev.z,
          wrap_angle(curr.roll - prev.roll),
          wrap_angle(curr.pitch - prev.pitch),
          wrap_angle(curr.yaw - prev.yaw)};
}

/// Split of the augmented vector d = x || z.
struct Layout {
  int x_dim = DeltaPose::kDim;
  int z_dim = 0;

  int dim() const { return x_dim + z_dim; }
  bool augmented() const { return z_dim > 0; }
  bool operator==(const Layout&) const = default;
};

/// Per-dimension affine map v -> (v - offset) / scale.
struct Standardizer {
  Vector offset;
  Vector scale;

  int dim() const { return static_cast<int>(offset.size()); }

  Vector apply(const Vector& v) const {
    if (v.size() != offset.size()) throw DimensionError("Standardizer: dimension mismatch");
    return (v - offset).cwiseQuotient(scale);
  }

  /// Fits mean and population standard deviation per column. Columns with
  /// zero spread keep scale 1.
  static Standardizer fit(const std::vector<Vector>& points) {
    if (points.empty()) throw InvalidArgument("Standardizer::fit: no points");
    const Eigen::Index d = points.front().size();
    Vector mean = Vector::Zero(d);
    for (const auto& p : points) {
      if (p.size() != d) throw DimensionError("Standardizer::fit: ragged points");
      mean += p;
    }
    mean /= static_cast<double>(points.size());
    Vector var = Vector::Zero(d);
    for (const auto& p : points) var += (p - mean).cwiseAbs2();
    var /= static_cast<double>(points.size());
    Vector scale = var.cwiseSqrt();
    for (Eigen::Index i = 0; i < d; ++i)
      if (!(scale(i) > 1e-12 * std::max(1.0, std::abs(mean(i))))) scale(i) = 1.0;
    return {std::move(mean), std::move(scale)};
  }

  /// Leading block [first, first + count).
  Standardizer segment(int first, int count) const {
    return {offset.segment(first, count), scale.segment(first, count)};
  }
};

/// Mixture over the x-block of `joint` given the z-block equals `z`:
/// component i becomes its conditional Gaussian, reweighted by
/// w_i * N(z; mu_i^z, Sigma_i^zz). Throws OutOfSupport when every z-marginal
/// density underflows.
inline Dgmm condition_mixture(const Dgmm& joint, const Layout& layout, const Vector& z) {
  if (!layout.augmented()) throw InvalidArgument("condition_mixture: layout has no z-block");
  if (joint.dim() != layout.dim()) throw DimensionError("condition_mixture: mixture/layout mismatch");
  if (z.size() != layout.z_dim) throw DimensionError("condition_mixture: z has wrong dimension");
  if (joint.empty()) throw InvalidArgument("condition_mixture: empty mixture");
  const IndexSplit split = IndexSplit::leading(layout.x_dim, layout.dim());

  // Regularized components are conditioned through the covariance their
  // densities actually use.
  std::vector<Gaussian> sources;
  std::vector<double> weights;
  sources.reserve(joint.size());
  weights.reserve(joint.size());
  double best = 0.0;
  for (const auto& c : joint.components()) {
    sources.push_back(c.g.is_regularized() ? Gaussian(c.g.mean(), c.g.effective_cov()) : c.g);
    weights.push_back(c.w * sources.back().marginal(split.dropped).density(z));
    best = std::max(best, weights.back());
  }
  if (!(best > 0.0)) throw OutOfSupport("terrain far outside training support");

  Dgmm out(layout.x_dim, joint.init_cov_scale(), joint.prior_horizon());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] > 0.0)) continue;
    out.append({sources[i].conditional(split, z), weights[i]});
  }
  return out;
}

/// Command-indexed collection of DGMMs, optionally over augmented vectors
/// x || z. With a standardizer attached, samples are mapped to unit scale
/// before training and densities are reported in the original units.
class MotionModel {
 public:
  explicit MotionModel(Layout layout = {}, double k = 0.7,
                       std::optional<Standardizer> standardizer = std::nullopt,
                       double init_cov_scale = 1.0, double prior_horizon = kDefaultPriorHorizon)
      : layout_(layout),
        k_(k),
        standardizer_(std::move(standardizer)),
        init_cov_scale_(init_cov_scale),
        prior_horizon_(prior_horizon) {
    if (layout_.x_dim < 1 || layout_.z_dim < 0) throw InvalidArgument("MotionModel: invalid layout");
    if (!(k_ >= 0.0)) throw InvalidArgument("MotionModel: k must be non-negative");
    if (standardizer_ && standardizer_->dim() != layout_.dim())
      throw DimensionError("MotionModel: standardizer dimension does not match layout");
    if (standardizer_ && !(standardizer_->scale.array() > 0.0).all())
      throw InvalidArgument("MotionModel: standardizer scale must be positive");
  }

  const Layout& layout() const { return layout_; }
  double k() const { return k_; }
  double init_cov_scale() const { return init_cov_scale_; }
  double prior_horizon() const { return prior_horizon_; }
  const std::optional<Standardizer>& standardizer() const { return standardizer_; }
  const std::map<CommandKey, Dgmm>& models() const { return models_; }

  bool contains(const CommandKey& c) const { return models_.count(c) != 0; }

  const Dgmm& model(const CommandKey& c) const {
    auto it = models_.find(c);
    if (it == models_.end()) throw UnknownCommand("no density trained for command " + c.to_string());
    return it->second;
  }

  /// Installs a prebuilt density for `c` (model loading).
  void set_model(const CommandKey& c, Dgmm m) {
    if (m.dim() != 0 && m.dim() != layout_.dim()) throw DimensionError("set_model: dimension mismatch");
    models_.insert_or_assign(c, std::move(m));
  }

  /// Adds one (x, z) observation for command `c`. `z` must be present exactly
  /// when the layout has a z-block.
  AddOutcome record_sample(const CommandKey& c, const Vector& x, const std::optional<Vector>& z,
                           RngStream& rng) {
    if (c.is_noop()) throw InvalidArgument("record_sample: the no-op command is not trained");
    if (x.size() != layout_.x_dim) throw DimensionError("record_sample: x has wrong dimension");
    if (z.has_value() != layout_.augmented())
      throw InvalidArgument(layout_.augmented() ? "record_sample: model expects a terrain vector"
                                                : "record_sample: model has no terrain block");
    Vector d(layout_.dim());
    d.head(layout_.x_dim) = x;
    if (z) {
      if (z->size() != layout_.z_dim) throw DimensionError("record_sample: z has wrong dimension");
      d.tail(layout_.z_dim) = *z;
    }
    if (standardizer_) d = standardizer_->apply(d);
    auto it = models_.try_emplace(c, layout_.dim(), init_cov_scale_, prior_horizon_).first;
    return it->second.add_sample(d, k_, rng);
  }

  /// One step of the incremental update: the pose change between `prev` and
  /// `curr` (optionally with the terrain vector measured before the command)
  /// is added to the density for `c`.
  AddOutcome record_step(const CommandKey& c, const Pose& prev, const Pose& curr,
                         const std::optional<TerrainVector>& z, RngStream& rng) {
    if (layout_.x_dim != DeltaPose::kDim || (layout_.augmented() && layout_.z_dim != TerrainVector::kDim))
      throw InvalidArgument("record_step: layout is not the pose/terrain layout");
    std::optional<Vector> zv;
    if (z) zv = z->to_vector();
    return record_sample(c, pose_delta(prev, curr).to_vector(), zv, rng);
  }

  /// p(x | c) for an un-augmented model.
  double motion_density(const CommandKey& c, const Vector& x) const {
    if (layout_.augmented())
      throw InvalidArgument("motion_density: model is augmented; use conditional_motion_density");
    const Dgmm& m = model(c);
    if (!standardizer_) return m.density(x);
    return m.density(standardizer_->apply(x)) / standardizer_->scale.prod();
  }

  double motion_density(const CommandKey& c, const DeltaPose& x) const {
    return motion_density(c, x.to_vector());
  }

  /// p(x | c, z) as a mixture over x in the original units.
  Dgmm conditional_motion_density(const CommandKey& c, const Vector& z) const {
    if (!layout_.augmented()) throw InvalidArgument("conditional_motion_density: model has no z-block");
    if (z.size() != layout_.z_dim) throw DimensionError("conditional_motion_density: z has wrong dimension");
    const Dgmm& joint = model(c);
    if (!standardizer_) return condition_mixture(joint, layout_, z);

    const Standardizer zs = standardizer_->segment(layout_.x_dim, layout_.z_dim);
    const Standardizer xs = standardizer_->segment(0, layout_.x_dim);
    const Dgmm unit = condition_mixture(joint, layout_, zs.apply(z));
    Dgmm out(layout_.x_dim, joint.init_cov_scale(), joint.prior_horizon());
    const auto s = xs.scale.asDiagonal();
    for (const auto& comp : unit.components()) {
      Vector mean = xs.offset + xs.scale.cwiseProduct(comp.g.mean());
      Matrix cov = s * comp.g.cov() * s;
      out.append({Gaussian::regularized(std::move(mean), symmetrize(cov)), comp.w});
    }
    return out;
  }

  Dgmm conditional_motion_density(const CommandKey& c, const TerrainVector& z) const {
    return conditional_motion_density(c, z.to_vector());
  }

 private:
  Layout layout_;
  double k_;
  std::optional<Standardizer> standardizer_;
  double init_cov_scale_;
  double prior_horizon_;
  std::map<CommandKey, Dgmm> models_;
};

}  // namespace dgmm
