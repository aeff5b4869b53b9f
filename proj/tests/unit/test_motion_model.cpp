#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "dgmm/datasets.hpp"
#include "dgmm/motion_model.hpp"
#include "test_support.hpp"

using namespace dgmm;
using dgmm::test::mat;
using dgmm::test::vec;

namespace {

// Joint mixture over x||z divided by its z-marginal, computed component by
// component from the effective covariances.
double ratio_oracle(const Dgmm& joint, const Layout& layout, const Vector& x, const Vector& z) {
  Vector d(layout.dim());
  d << x, z;
  double num = 0.0, den = 0.0, total = 0.0;
  for (const auto& c : joint.components()) total += c.w;
  for (const auto& c : joint.components()) {
    const Matrix eff = c.g.effective_cov();
    num += c.w / total * Gaussian(c.g.mean(), eff).density(d);
    const Gaussian zm(c.g.mean().tail(layout.z_dim), eff.bottomRightCorner(layout.z_dim, layout.z_dim));
    den += c.w / total * zm.density(z);
  }
  return num / den;
}

Dgmm random_joint(std::mt19937_64& gen, int components, int dim) {
  Dgmm m(dim);
  std::uniform_real_distribution<double> w(1.0, 10.0);
  for (int i = 0; i < components; ++i) m.append({test::random_gaussian(gen, dim), std::round(w(gen))});
  return m;
}

}  // namespace

TEST(PoseDelta, Examples) {
  const Pose p{1.0, 2.0, 3.0, 0.1, -0.2, 0.3};
  EXPECT_EQ(pose_delta(p, p), DeltaPose{});
  Pose a, b;
  a.yaw = 3.0;
  b.yaw = -3.0;
  EXPECT_NEAR(pose_delta(a, b).dyaw, -6.0 + 2.0 * std::numbers::pi, 1e-15);
  EXPECT_NEAR(pose_delta(a, b).dyaw, 0.28319, 1e-5);
  const DeltaPose t = pose_delta(Pose{}, Pose{1.0, 2.0, 0.0, 0.0, 0.0, 0.0});
  EXPECT_EQ(t, (DeltaPose{1.0, 2.0, 0.0, 0.0, 0.0, 0.0}));
}

TEST(PoseDelta, AnglesWrappedIntoHalfOpenInterval) {
  EXPECT_DOUBLE_EQ(wrap_angle(std::numbers::pi), std::numbers::pi);
  EXPECT_DOUBLE_EQ(wrap_angle(-std::numbers::pi), std::numbers::pi);
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int i = 0; i < 5000; ++i) {
    const Pose a{u(gen), u(gen), u(gen), u(gen), u(gen), u(gen)};
    const Pose b{u(gen), u(gen), u(gen), u(gen), u(gen), u(gen)};
    const Vector d = pose_delta(a, b).to_vector();
    EXPECT_TRUE(d.allFinite());
    for (int k = 3; k < 6; ++k) {
      EXPECT_GT(d(k), -std::numbers::pi);
      EXPECT_LE(d(k), std::numbers::pi);
    }
    const double raw = b.yaw - a.yaw;
    EXPECT_NEAR(std::remainder(d(5) - raw, 2.0 * std::numbers::pi), 0.0, 1e-12);
  }
}

TEST(CommandSet, TwentySixDistinctNonNoop) {
  const auto cmds = discrete_command_set();
  EXPECT_EQ(cmds.size(), 26u);
  std::set<CommandKey> unique(cmds.begin(), cmds.end());
  EXPECT_EQ(unique.size(), 26u);
  for (const auto& c : cmds) {
    EXPECT_FALSE(c.is_noop());
    for (double v : {c.longitudinal, c.lateral, c.turn}) EXPECT_TRUE(v == -0.5 || v == 0.0 || v == 0.5);
  }
  EXPECT_EQ((CommandKey{0.5, 0.0, -0.5}).to_string(), "<0.5,0,-0.5>");
}

TEST(RecordStep, FreshModelOneComponentAtSample) {
  MotionModel mm(Layout{6, 2});
  RngStream rng(1);
  const Pose prev{0, 0, 0, 0, 0, 0};
  const Pose curr{0.3, 0.1, -0.02, 0.01, 0.0, 0.2};
  const TerrainVector z{0.1, -0.3};
  mm.record_step({0.5, 0.0, 0.0}, prev, curr, z, rng);
  const Dgmm& m = mm.model({0.5, 0.0, 0.0});
  ASSERT_EQ(m.size(), 1u);
  Vector d(8);
  d << pose_delta(prev, curr).to_vector(), z.to_vector();
  EXPECT_EQ(m.components()[0].g.mean(), d);
}

TEST(RecordStep, CommandsAreIndependent) {
  MotionModel mm(Layout{6, 0});
  RngStream rng(2);
  mm.record_step({0.5, 0, 0}, Pose{}, Pose{0.3, 0, 0, 0, 0, 0}, std::nullopt, rng);
  mm.record_step({0, 0.5, 0}, Pose{}, Pose{0, 0.3, 0, 0, 0, 0}, std::nullopt, rng);
  EXPECT_EQ(mm.models().size(), 2u);
  for (const auto& [key, m] : mm.models()) EXPECT_EQ(m.total_weight(), 1.0);

  const Dgmm snapshot = mm.model({0, 0.5, 0});
  std::mt19937_64 gen(3);
  for (int i = 0; i < 50; ++i) {
    const Vector x = test::random_vector(gen, 6, 0.1);
    mm.record_sample({0.5, 0, 0}, x, std::nullopt, rng);
  }
  const Dgmm& after = mm.model({0, 0.5, 0});
  ASSERT_EQ(after.size(), snapshot.size());
  EXPECT_EQ(after.components()[0].g.mean(), snapshot.components()[0].g.mean());
  EXPECT_EQ(after.total_weight(), 1.0);
}

TEST(RecordStep, InclineRunHasFifteenPerCommand) {
  const auto ds = simulate_incline(InclineConfig{});
  ASSERT_EQ(ds.records.size(), 390u);
  MotionModel mm(Layout{6, 2});
  RngStream rng(4);
  for (const auto& r : ds.records) {
    // Drive through poses: start anywhere, end at start + delta.
    const Pose prev{1.0, -2.0, 0.5, 0.0, 0.0, 1.0};
    const Pose curr{prev.x + r.x.dx, prev.y + r.x.dy, prev.z + r.x.dz, prev.roll + r.x.droll,
                    prev.pitch + r.x.dpitch, prev.yaw + r.x.dyaw};
    mm.record_step(r.command, prev, curr, r.z, rng);
  }
  EXPECT_EQ(mm.models().size(), 26u);
  for (const auto& [key, m] : mm.models()) EXPECT_EQ(m.total_weight(), 15.0) << key.to_string();
}

TEST(RecordStep, LayoutAndCommandErrors) {
  MotionModel plain(Layout{6, 0});
  MotionModel aug(Layout{6, 2});
  RngStream rng(5);
  const Vector x = Vector::Zero(6);
  EXPECT_THROW(plain.record_sample({0.5, 0, 0}, x, vec({0.0, 0.0}), rng), InvalidArgument);
  EXPECT_THROW(aug.record_sample({0.5, 0, 0}, x, std::nullopt, rng), InvalidArgument);
  EXPECT_THROW(aug.record_sample({0.5, 0, 0}, x, vec({0.0}), rng), DimensionError);
  EXPECT_THROW(plain.record_sample({0, 0, 0}, x, std::nullopt, rng), InvalidArgument);
  EXPECT_THROW(plain.record_sample({0.5, 0, 0}, Vector::Zero(5), std::nullopt, rng), DimensionError);
  EXPECT_THROW(MotionModel(Layout{0, 0}), InvalidArgument);
  EXPECT_THROW(MotionModel(Layout{6, 0}, -1.0), InvalidArgument);
  EXPECT_THROW(MotionModel(Layout{6, 0}, 0.7, Standardizer{Vector::Zero(5), Vector::Ones(5)}), DimensionError);
}

TEST(MotionDensity, DelegatesToMixture) {
  MotionModel mm(Layout{6, 0});
  RngStream rng(6);
  const Vector x0 = vec({0.3, 0, 0, 0, 0, 0.1});
  mm.record_sample({0.5, 0, 0}, x0, std::nullopt, rng);
  const Dgmm& m = mm.model({0.5, 0, 0});
  EXPECT_DOUBLE_EQ(mm.motion_density({0.5, 0, 0}, x0), std::exp(m.components()[0].g.log_peak()));
  std::mt19937_64 gen(7);
  for (int i = 0; i < 30; ++i) mm.record_sample({0.5, 0, 0}, x0 + test::random_vector(gen, 6, 0.05), std::nullopt, rng);
  for (int i = 0; i < 20; ++i) {
    const Vector q = x0 + test::random_vector(gen, 6, 0.1);
    EXPECT_EQ(mm.motion_density({0.5, 0, 0}, q), mm.model({0.5, 0, 0}).density(q));
  }
  EXPECT_THROW(mm.motion_density({0, 0.5, 0}, x0), UnknownCommand);
  MotionModel aug(Layout{6, 2});
  aug.record_sample({0.5, 0, 0}, x0, vec({0, 0}), rng);
  EXPECT_THROW(aug.motion_density({0.5, 0, 0}, x0), InvalidArgument);
}

TEST(MotionDensity, BeatsUniformBoxOnHeldOutSamples) {
  InclineConfig cfg;
  cfg.reps_per_orientation = 70;
  const auto ds = simulate_incline(cfg);
  const CommandKey c{0.5, 0.0, 0.0};
  std::vector<Vector> xs;
  for (const auto& r : ds.records)
    if (r.command == c) xs.push_back(r.x.to_vector());
  ASSERT_GE(xs.size(), 200u);
  // Interleaved split: the simulator emits records in orientation blocks.
  std::vector<Vector> train, test;
  for (std::size_t i = 0; i < 200; ++i) (i % 2 ? test : train).push_back(xs[i]);

  std::vector<Vector> rows = train;
  MotionModel mm(Layout{6, 0}, 0.7, Standardizer::fit(rows));
  RngStream rng(8);
  for (const auto& x : train) mm.record_sample(c, x, std::nullopt, rng);

  // The smallest axis-aligned box that gives every held-out sample support.
  Vector lo = xs.front(), hi = xs.front();
  for (std::size_t i = 0; i < 200; ++i) lo = lo.cwiseMin(xs[i]), hi = hi.cwiseMax(xs[i]);
  const double uniform_log = -std::log((hi - lo).prod());
  double model_log = 0.0;
  for (const auto& x : test) model_log += std::log(mm.motion_density(c, x));
  EXPECT_GT(model_log / 100.0, uniform_log);
}

TEST(Standardized, DensityReportedInRawUnits) {
  const Standardizer s{vec({1.0, -2.0}), vec({0.5, 3.0})};
  MotionModel mm(Layout{2, 0}, 0.7, s);
  RngStream rng(9);
  const Vector x0 = vec({1.2, 0.4});
  mm.record_sample({0.5, 0, 0}, x0, std::nullopt, rng);
  // One component: N(standardized x0, I) in unit space is N(x0, diag(s^2)) in raw space.
  const Gaussian raw(x0, mat(2, 2, {0.25, 0.0, 0.0, 9.0}));
  for (const auto& q : {x0, vec({0.0, 0.0}), vec({2.0, -5.0})})
    EXPECT_NEAR(mm.motion_density({0.5, 0, 0}, q) / raw.density(q), 1.0, 1e-13);
}

TEST(Standardizer, FitUsesPopulationMoments) {
  const std::vector<Vector> pts{vec({1.0, 5.0}), vec({3.0, 5.0}), vec({5.0, 5.0})};
  const Standardizer s = Standardizer::fit(pts);
  EXPECT_DOUBLE_EQ(s.offset(0), 3.0);
  EXPECT_NEAR(s.scale(0), std::sqrt(8.0 / 3.0), 1e-15);
  EXPECT_EQ(s.scale(1), 1.0);  // zero spread
  EXPECT_EQ(s.apply(vec({5.0, 5.0}))(1), 0.0);
}

TEST(ConditionalMotionDensity, SingleComponent) {
  std::mt19937_64 gen(10);
  const Layout layout{2, 1};
  MotionModel mm(layout);
  Dgmm joint(3);
  joint.append({test::random_gaussian(gen, 3), 1.0});
  mm.set_model({0.5, 0, 0}, joint);
  const Vector z = vec({0.3});
  const Dgmm cond = mm.conditional_motion_density({0.5, 0, 0}, z);
  ASSERT_EQ(cond.size(), 1u);
  const Gaussian expected = joint.components()[0].g.conditional(IndexSplit::leading(2, 3), z);
  EXPECT_TRUE(cond.components()[0].g.mean().isApprox(expected.mean(), 1e-14));
  for (int i = 0; i < 20; ++i) {
    const Vector x = expected.mean() + test::random_vector(gen, 2, 1.0);
    EXPECT_NEAR(cond.density(x) / ratio_oracle(joint, layout, x, z), 1.0, 1e-12);
  }
}

TEST(ConditionalMotionDensity, BlockDiagonalGivesReweightedMarginals) {
  const Layout layout{1, 1};
  Dgmm joint(2);
  joint.append({Gaussian(vec({0.0, 0.0}), mat(2, 2, {1.0, 0.0, 0.0, 1.0})), 2.0});
  joint.append({Gaussian(vec({3.0, 2.0}), mat(2, 2, {0.5, 0.0, 0.0, 2.0})), 5.0});
  const Vector z = vec({1.0});
  const Dgmm cond = condition_mixture(joint, layout, z);
  ASSERT_EQ(cond.size(), 2u);
  const double w0 = 2.0 * Gaussian(vec({0.0}), mat(1, 1, {1.0})).density(z);
  const double w1 = 5.0 * Gaussian(vec({2.0}), mat(1, 1, {2.0})).density(z);
  EXPECT_NEAR(cond.components()[0].w, w0, 1e-15);
  EXPECT_NEAR(cond.components()[1].w, w1, 1e-15);
  EXPECT_DOUBLE_EQ(cond.components()[0].g.mean()(0), 0.0);
  EXPECT_DOUBLE_EQ(cond.components()[1].g.cov()(0, 0), 0.5);
}

TEST(ConditionalMotionDensity, RandomThreeComponentRatioOnGrid) {
  std::mt19937_64 gen(11);
  const Layout layout{2, 1};
  for (int trial = 0; trial < 10; ++trial) {
    const Dgmm joint = random_joint(gen, 3, 3);
    const Vector z = test::random_vector(gen, 1, 2.0);
    const Dgmm cond = condition_mixture(joint, layout, z);
    for (int i = 0; i < 20; ++i)
      for (int j = 0; j < 20; ++j) {
        const Vector x = vec({-6.0 + 0.6 * i, -6.0 + 0.6 * j});
        const double oracle = ratio_oracle(joint, layout, x, z);
        if (oracle < 1e-250) continue;
        EXPECT_NEAR(cond.density(x) / oracle, 1.0, 1e-9);
      }
  }
}

TEST(ConditionalMotionDensity, TrainedStandardizedModelMatchesRawRatio) {
  const auto ds = simulate_incline(InclineConfig{});
  std::vector<Vector> rows;
  for (const auto& r : ds.records) {
    Vector d(8);
    d << r.x.to_vector(), r.z->to_vector();
    rows.push_back(d);
  }
  const Standardizer s = Standardizer::fit(rows);
  const Layout layout{6, 2};
  MotionModel mm(layout, 0.7, s);
  RngStream rng(12);
  for (const auto& r : ds.records) mm.record_sample(r.command, r.x.to_vector(), r.z->to_vector(), rng);

  // Raw-unit joint and z-marginal densities from the unit-space mixture.
  const double jac_joint = s.scale.prod(), jac_z = s.scale.tail(2).prod();
  std::size_t checked = 0;
  for (std::size_t i = 0; i < ds.records.size(); i += 13) {
    const auto& r = ds.records[i];
    const Dgmm& joint = mm.model(r.command);
    const Dgmm cond = mm.conditional_motion_density(r.command, *r.z);
    const Vector zu = s.segment(6, 2).apply(r.z->to_vector());
    for (double shift : {0.0, 0.01, -0.02}) {
      const Vector x = r.x.to_vector() + Vector::Constant(6, shift);
      const Vector xu = s.segment(0, 6).apply(x);
      const double ratio = ratio_oracle(joint, layout, xu, zu) * jac_z / jac_joint;
      EXPECT_NEAR(cond.density(x) / ratio, 1.0, 1e-9);
      ++checked;
    }
  }
  EXPECT_GT(checked, 50u);
}

TEST(ConditionalMotionDensity, WeightsAreJointWeightsTimesZLikelihood) {
  std::mt19937_64 gen(13);
  const Layout layout{3, 2};
  const Dgmm joint = random_joint(gen, 4, 5);
  const Vector z = joint.components()[1].g.mean().tail(2);
  const Dgmm cond = condition_mixture(joint, layout, z);
  ASSERT_EQ(cond.size(), joint.size());
  for (std::size_t i = 0; i < joint.size(); ++i) {
    const auto& c = joint.components()[i];
    const double zlik = c.g.marginal({3, 4}).density(z);
    EXPECT_NEAR(cond.components()[i].w / zlik, c.w, 1e-12 * c.w);
  }
}

TEST(ConditionalMotionDensity, Errors) {
  MotionModel mm(Layout{2, 1});
  Dgmm joint(3);
  joint.append({Gaussian(vec({0, 0, 0}), Matrix::Identity(3, 3)), 1.0});
  mm.set_model({0.5, 0, 0}, joint);
  EXPECT_THROW(mm.conditional_motion_density({0, 0.5, 0}, vec({0.0})), UnknownCommand);
  EXPECT_THROW(mm.conditional_motion_density({0.5, 0, 0}, vec({1e6})), OutOfSupport);
  EXPECT_THROW(mm.conditional_motion_density({0.5, 0, 0}, vec({0.0, 0.0})), DimensionError);
  MotionModel plain(Layout{2, 0});
  EXPECT_THROW(plain.conditional_motion_density({0.5, 0, 0}, vec({0.0})), InvalidArgument);
}
