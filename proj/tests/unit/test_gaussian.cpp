#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "dgmm/gaussian.hpp"
#include "test_support.hpp"

using namespace dgmm;
using dgmm::test::mat;
using dgmm::test::vec;

namespace {

// Scalar normal pdf written out from the formula.
double normal_pdf(double x, double mu, double var) {
  return std::exp(-0.5 * (x - mu) * (x - mu) / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

}  // namespace

TEST(GaussianDensity, StandardNormalPeaks) {
  EXPECT_NEAR(Gaussian(vec({0.0}), mat(1, 1, {1.0})).density(vec({0.0})), 1.0 / std::sqrt(2.0 * std::numbers::pi),
              1e-15);
  EXPECT_NEAR(Gaussian(vec({0.0, 0.0}), Matrix::Identity(2, 2)).density(vec({0.0, 0.0})),
              1.0 / (2.0 * std::numbers::pi), 1e-15);
}

TEST(GaussianDensity, ScaledOneDimensional) {
  // N(3; 1, 4) = phi(1) / 2
  const Gaussian g(vec({1.0}), mat(1, 1, {4.0}));
  EXPECT_NEAR(g.density(vec({3.0})), normal_pdf(1.0, 0.0, 1.0) / 2.0, 1e-15);
}

TEST(GaussianDensity, FullCovarianceMatchesExplicitFormula) {
  const Matrix cov = mat(2, 2, {2.0, 0.6, 0.6, 1.0});
  const Vector mu = vec({0.5, -1.0});
  const Gaussian g(mu, cov);
  const Vector x = vec({1.3, 0.2});
  const double det = 2.0 * 1.0 - 0.36;
  const Matrix inv = mat(2, 2, {1.0, -0.6, -0.6, 2.0}) / det;
  const Vector d = x - mu;
  const double expected = std::exp(-0.5 * d.dot(inv * d)) / (2.0 * std::numbers::pi * std::sqrt(det));
  EXPECT_NEAR(g.density(x) / expected, 1.0, 1e-13);
}

TEST(GaussianDensity, Errors) {
  EXPECT_THROW(Gaussian(vec({0.0, 0.0}), Matrix::Identity(3, 3)), DimensionError);
  EXPECT_THROW(Gaussian(vec({0.0, 0.0}), mat(2, 2, {1.0, 2.0, 2.0, 1.0})), NotPositiveDefinite);
  EXPECT_THROW(Gaussian(vec({0.0, 0.0}), Matrix::Zero(2, 2)), NotPositiveDefinite);
  const Gaussian g(vec({0.0}), mat(1, 1, {1.0}));
  EXPECT_THROW(g.density(vec({0.0, 1.0})), DimensionError);
}

TEST(GaussianNormalizedDensity, Examples) {
  const Gaussian g1(vec({0.0}), mat(1, 1, {1.0}));
  EXPECT_DOUBLE_EQ(g1.normalized_density(vec({0.0})), 1.0);
  EXPECT_NEAR(g1.normalized_density(vec({1.0})), std::exp(-0.5), 1e-15);
  const Gaussian g2(vec({0.0, 0.0}), Matrix::Identity(2, 2));
  EXPECT_NEAR(g2.normalized_density(vec({3.0, 4.0})) / std::exp(-12.5), 1.0, 1e-13);
  const Gaussian g3(vec({2.0, -1.0, 0.5}), mat(3, 3, {2, 0.3, 0.1, 0.3, 1, -0.2, 0.1, -0.2, 0.7}));
  EXPECT_DOUBLE_EQ(g3.normalized_density(g3.mean()), 1.0);
}

TEST(GaussianNormalizedDensity, TimesPeakEqualsDensity) {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 1 + trial % 5;
    const Gaussian g = test::random_gaussian(gen, d);
    const Vector x = test::random_vector(gen, d, 2.0);
    const double lhs = g.normalized_density(x) * g.density(g.mean());
    EXPECT_NEAR(lhs / g.density(x), 1.0, 1e-12);
  }
}

TEST(GaussianMarginal, DiagonalSubselection) {
  const Gaussian g(vec({1.0, 2.0}), mat(2, 2, {3.0, 0.0, 0.0, 4.0}));
  const Gaussian m = g.marginal({1});
  EXPECT_EQ(m.dim(), 1);
  EXPECT_DOUBLE_EQ(m.mean()(0), 2.0);
  EXPECT_DOUBLE_EQ(m.cov()(0, 0), 4.0);
}

TEST(GaussianMarginal, AllIndicesIsIdentity) {
  std::mt19937_64 gen(5);
  const Gaussian g = test::random_gaussian(gen, 3);
  const Gaussian m = g.marginal({0, 1, 2});
  EXPECT_EQ(m.mean(), g.mean());
  EXPECT_EQ(m.cov(), g.cov());
  const Vector x = test::random_vector(gen, 3, 1.0);
  EXPECT_DOUBLE_EQ(m.density(x), g.density(x));
}

TEST(GaussianMarginal, MatchesGridIntegrationOverDroppedAxis) {
  const Gaussian g(vec({0.5, -1.0, 2.0}), mat(3, 3, {1.0, 0.4, 0.2, 0.4, 2.0, -0.5, 0.2, -0.5, 1.5}));
  const Gaussian m = g.marginal({0, 2});
  // Integrate coordinate 1 over mean +/- 8 sd with a fine midpoint rule.
  const double sd = std::sqrt(2.0);
  const int n = 4000;
  const double lo = -1.0 - 8.0 * sd, hi = -1.0 + 8.0 * sd, h = (hi - lo) / n;
  for (const auto& p : {vec({0.5, 2.0}), vec({1.7, 1.1}), vec({-0.8, 3.4})}) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += g.density(vec({p(0), lo + (i + 0.5) * h, p(1)}));
    EXPECT_NEAR(sum * h, m.density(p), 1e-3);
  }
}

TEST(GaussianMarginal, Composes) {
  std::mt19937_64 gen(11);
  const Gaussian g = test::random_gaussian(gen, 4);
  const Gaussian ab = g.marginal({0, 2, 3});
  const Gaussian a_via = ab.marginal({0, 2});  // coordinates 0 and 3 of g
  const Gaussian a = g.marginal({0, 3});
  EXPECT_TRUE(a_via.mean().isApprox(a.mean(), 1e-15));
  EXPECT_TRUE(a_via.cov().isApprox(a.cov(), 1e-15));
}

TEST(GaussianMarginal, Errors) {
  const Gaussian g(vec({0.0, 0.0}), Matrix::Identity(2, 2));
  EXPECT_THROW(g.marginal({}), InvalidArgument);
  EXPECT_THROW(g.marginal({2}), InvalidArgument);
  EXPECT_THROW(g.marginal({0, 0}), InvalidArgument);
}

TEST(GaussianConditional, ZeroCrossCovarianceGivesMarginal) {
  const Gaussian g(vec({1.0, -2.0, 3.0}), mat(3, 3, {2.0, 0.3, 0.0, 0.3, 1.0, 0.0, 0.0, 0.0, 0.5}));
  const IndexSplit split = IndexSplit::leading(2, 3);
  const Gaussian marg = g.marginal({0, 1});
  for (double z : {-10.0, 0.0, 3.0, 7.5}) {
    const Gaussian c = g.conditional(split, vec({z}));
    EXPECT_TRUE(c.mean().isApprox(marg.mean(), 1e-15));
    EXPECT_TRUE(c.cov().isApprox(marg.cov(), 1e-15));
  }
}

TEST(GaussianConditional, BivariateExampleAgainstRatio) {
  const Gaussian g(vec({0.0, 0.0}), mat(2, 2, {1.0, 0.5, 0.5, 1.0}));
  const Gaussian c = g.conditional(IndexSplit::leading(1, 2), vec({1.0}));
  EXPECT_NEAR(c.mean()(0), 0.5, 1e-15);
  EXPECT_NEAR(c.cov()(0, 0), 0.75, 1e-15);
  const double pz = normal_pdf(1.0, 0.0, 1.0);
  for (double x = -3.0; x <= 4.0; x += 0.25) {
    const double ratio = g.density(vec({x, 1.0})) / pz;
    EXPECT_NEAR(c.density(vec({x})) / ratio, 1.0, 1e-12) << "x=" << x;
  }
}

TEST(GaussianConditional, CenteredConditioningKeepsMean) {
  std::mt19937_64 gen(17);
  const Gaussian g = test::random_gaussian(gen, 5);
  const IndexSplit split = IndexSplit::leading(3, 5);
  const Gaussian c = g.conditional(split, g.mean().tail(2));
  EXPECT_TRUE(c.mean().isApprox(g.mean().head(3), 1e-14));
}

TEST(GaussianConditional, RatioIdentityOnRandomGaussians) {
  std::mt19937_64 gen(23);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 2 + trial % 5;
    const int kept = 1 + trial % (d - 1);
    const Gaussian g = test::random_gaussian(gen, d);
    const IndexSplit split = IndexSplit::leading(kept, d);
    const Vector z = g.mean().tail(d - kept) + test::random_vector(gen, d - kept, 1.0);
    const Gaussian c = g.conditional(split, z);
    const Gaussian zm = g.marginal(split.dropped);
    for (int k = 0; k < 5; ++k) {
      const Vector x = c.mean() + test::random_vector(gen, kept, 1.0);
      Vector joint(d);
      joint << x, z;
      const double ratio = g.density(joint) / zm.density(z);
      EXPECT_NEAR(c.density(x) / ratio, 1.0, 1e-9);
    }
  }
}

TEST(GaussianConditional, SingularConditioningBlockThrows) {
  // z-block is a rank-deficient 2x2 via regularized() storage.
  const Gaussian g = Gaussian::regularized(vec({0, 0, 0}), mat(3, 3, {1, 0, 0, 0, 1, 1, 0, 1, 1}));
  EXPECT_THROW(g.conditional(IndexSplit::leading(1, 3), vec({0.0, 0.0})), NotPositiveDefinite);
}

TEST(GaussianConditional, SplitValidation) {
  const Gaussian g(vec({0, 0, 0}), Matrix::Identity(3, 3));
  EXPECT_THROW(g.conditional({{0, 1}, {1, 2}}, vec({0, 0})), InvalidArgument);
  EXPECT_THROW(g.conditional({{0}, {1}}, vec({0})), InvalidArgument);
  EXPECT_THROW(g.conditional(IndexSplit::leading(1, 3), vec({0})), DimensionError);
}

TEST(Regularize, Examples) {
  const Matrix r1 = regularize(Matrix::Identity(3, 3), 1e-9);
  EXPECT_TRUE(r1.isApprox((1.0 + 1e-9) * Matrix::Identity(3, 3), 1e-16));
  const Matrix r0 = regularize(Matrix::Zero(2, 2), 1e-9);
  EXPECT_DOUBLE_EQ(r0(0, 0), 1e-9);
  EXPECT_DOUBLE_EQ(r0(1, 1), 1e-9);
  EXPECT_DOUBLE_EQ(r0(0, 1), 0.0);
  const Vector v = vec({1.0, 2.0, -3.0});
  const Matrix r = regularize(v * v.transpose(), 1e-9);
  EXPECT_EQ(Eigen::LLT<Matrix>(r).info(), Eigen::Success);
  EXPECT_NO_THROW(Gaussian(vec({0, 0, 0}), r));
}

TEST(Regularize, RegularizedGaussianKeepsStoredCovariance) {
  const Vector v = vec({1.0, 2.0});
  const Matrix rank1 = v * v.transpose();
  const Gaussian g = Gaussian::regularized(vec({0.0, 0.0}), rank1);
  EXPECT_TRUE(g.is_regularized());
  EXPECT_EQ(g.cov(), rank1);
  EXPECT_TRUE(std::isfinite(g.density(vec({0.1, 0.2}))));
  // Non-singular input is left alone.
  const Gaussian h = Gaussian::regularized(vec({0.0, 0.0}), Matrix::Identity(2, 2));
  EXPECT_FALSE(h.is_regularized());
}

TEST(GaussianProperties, IntegratesToOneOnEightSigmaGrid) {
  std::mt19937_64 gen(29);
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 1 + trial % 2;
    const Gaussian g = test::random_gaussian(gen, d);
    EXPECT_NEAR(test::grid_integral([&](const Vector& x) { return g.density(x); }, g.mean(),
                                    g.cov().diagonal().cwiseSqrt(), d == 1 ? 2000 : 300),
                1.0, 1e-3);
  }
}

TEST(GaussianProperties, SymmetryToleranceOfInvariant) {
  EXPECT_TRUE(detail::symmetric(mat(2, 2, {1.0, 0.5, 0.5 + 1e-13, 1.0})));
  EXPECT_FALSE(detail::symmetric(mat(2, 2, {1.0, 0.5, 0.5 + 1e-9, 1.0})));
}
