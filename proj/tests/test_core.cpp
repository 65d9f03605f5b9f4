#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <functional>
#include <memory>

#include "ppbayes/core.hpp"
#include "ppbayes/models.hpp"

using namespace ppbayes;

TEST(JointSampleDensity, GammaSinglePair)
{
  GammaExpFamily g(1.0);
  const SampleBatch x{{2.0, 3.0}};
  EXPECT_NEAR(joint_sample_density(g, 1.0, x), 2.0 * std::exp(-8.0), 1e-16);
}

TEST(JointSampleDensity, EmptySampleIsOne)
{
  GammaExpFamily g(1.0);
  CoinPairFamily c;
  BivariateNormalFamily nrm;
  EXPECT_EQ(joint_sample_density(g, 0.7, {}), 1.0);
  EXPECT_EQ(joint_sample_density(c, 0.7, {}), 1.0);
  EXPECT_EQ(joint_sample_density(nrm, 0.7, {}), 1.0);
}

TEST(JointSampleDensity, CoinProduct)
{
  CoinPairFamily c;
  const SampleBatch x{{1, 1}, {0, 0}};
  EXPECT_DOUBLE_EQ(joint_sample_density(c, 0.5, x), 0.0625);
}

TEST(JointSampleDensity, LogAdditivity)
{
  GammaExpFamily g(1.3);
  Rng rng = substream(7, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const double theta = 0.2 + 3.0 * std::uniform_real_distribution<>(0, 1)(rng);
    auto a = sample_batch(g, theta, 5 + rep, rng);
    auto b = sample_batch(g, theta, 3, rng);
    SampleBatch ab = a;
    ab.insert(ab.end(), b.begin(), b.end());
    const double whole = log_joint_sample_density(g, theta, ab);
    const double parts = log_joint_sample_density(g, theta, a) + log_joint_sample_density(g, theta, b);
    EXPECT_NEAR(whole, parts, 1e-12 * std::max(1.0, std::abs(whole)));
  }
}

TEST(JointSampleDensity, NoUnderflowAtLargeN)
{
  GammaExpFamily g(1.0);
  Rng rng = substream(1, 1);
  auto x = sample_batch(g, 2.0, 10000, rng);
  const double l = log_joint_sample_density(g, 2.0, x);
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_EQ(joint_sample_density(g, 2.0, x), 0.0);
}

TEST(JointSampleDensity, RejectsOutOfSupportWithIndex)
{
  GammaExpFamily g(1.0);
  const SampleBatch x{{1.0, 1.0}, {1.0, -0.5}};
  try {
    log_joint_sample_density(g, 1.0, x);
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_EQ(e.index(), 1u);
    EXPECT_EQ(e.coordinate(), 2);
  }
  EXPECT_THROW(log_joint_sample_density(g, -1.0, {}), DomainError);
  CoinPairFamily c;
  EXPECT_THROW(log_joint_sample_density(c, 0.5, SampleBatch{{0.5, 1}}), DomainError);
}

TEST(SampleParam, UniformStaysInOpenInterval)
{
  auto q = PriorSpec::uniform01();
  Rng a = substream(3, 9), b = substream(3, 9);
  for (int i = 0; i < 1000; ++i) {
    const double t = sample_param(q, a);
    EXPECT_GT(t, 0.0);
    EXPECT_LT(t, 1.0);
    EXPECT_EQ(t, sample_param(q, b));
  }
}

TEST(SampleParam, PointMassAlwaysSame)
{
  auto q = PriorSpec::point_mass(0.3);
  Rng rng = substream(5, 0);
  for (int i = 0; i < 100; ++i)
    EXPECT_EQ(sample_param(q, rng), 0.3);
}

TEST(SampleParam, GammaMean)
{
  const double lambda = 2.5;
  auto q = PriorSpec::gamma(1.0, 1.0 / lambda);
  Rng rng = substream(11, 0);
  const int n = 100000;
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    s += sample_param(q, rng);
  const double se = (1.0 / lambda) / std::sqrt(n);
  EXPECT_NEAR(s / n, 1.0 / lambda, 3.0 * se);
}

TEST(SamplePair, GammaFirstCoordinateMean)
{
  GammaExpFamily g(1.0);
  Rng rng = substream(12, 0);
  const int n = 100000;
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    s += sample_pair(g, 2.0, rng).x1;
  EXPECT_NEAR(s / n, 0.5, 3.0 * 0.5 / std::sqrt(n));
}

TEST(SamplePair, CoinDegenerate)
{
  CoinPairFamily c;
  Rng rng = substream(13, 0);
  for (int i = 0; i < 1000; ++i) {
    auto p = sample_pair(c, 1.0, rng);
    EXPECT_EQ(p.x1, 1.0);
    EXPECT_EQ(p.x2, 1.0);
  }
}

TEST(SamplePair, NormalIndependentCase)
{
  BivariateNormalFamily nrm(1.0, 0.0);
  Rng rng = substream(14, 0);
  const int n = 100000;
  double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < n; ++i) {
    auto p = sample_pair(nrm, 0.0, rng);
    sx += p.x1, sy += p.x2, sxy += p.x1 * p.x2, sxx += p.x1 * p.x1, syy += p.x2 * p.x2;
  }
  const double cov = sxy / n - sx / n * sy / n;
  const double corr = cov / std::sqrt((sxx / n - sx * sx / n / n) * (syy / n - sy * sy / n / n));
  EXPECT_NEAR(corr, 0.0, 3.0 / std::sqrt(n));
}

namespace {

// Chi-square p-value of 10x10 probability-integral-transform cells.
double pit_gof_pvalue(const ModelFamily& m, double theta, const std::function<double(double)>& cdf1, Rng& rng,
                      int n = 100000)
{
  std::vector<double> counts(100, 0.0);
  for (int i = 0; i < n; ++i) {
    auto p = m.sample(theta, rng);
    const double u1 = cdf1(p.x1), u2 = m.conditional_cdf(theta, p.x1, p.x2);
    const int a = std::min(9, static_cast<int>(u1 * 10)), b = std::min(9, static_cast<int>(u2 * 10));
    counts[a * 10 + b] += 1.0;
  }
  const double e = n / 100.0;
  double chi = 0.0;
  for (double c : counts)
    chi += (c - e) * (c - e) / e;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(99), chi));
}

} // namespace

TEST(SamplerGoodnessOfFit, Gamma)
{
  GammaExpFamily g(1.0);
  Rng rng = substream(21, 0);
  const double theta = 1.7;
  EXPECT_GT(pit_gof_pvalue(g, theta, [&](double x) { return -std::expm1(-theta * x); }, rng), 0.001);
}

TEST(SamplerGoodnessOfFit, Normal)
{
  BivariateNormalFamily nrm(1.5, 0.4);
  Rng rng = substream(22, 0);
  const double theta = -0.3;
  boost::math::normal_distribution<> d1(theta, 1.5);
  EXPECT_GT(pit_gof_pvalue(nrm, theta, [&](double x) { return boost::math::cdf(d1, x); }, rng), 0.001);
}

TEST(SamplerGoodnessOfFit, CoinCells)
{
  CoinPairFamily c;
  Rng rng = substream(23, 0);
  const double theta = 0.35;
  const int n = 100000;
  double counts[2][2] = {};
  for (int i = 0; i < n; ++i) {
    auto p = c.sample(theta, rng);
    counts[static_cast<int>(p.x1)][static_cast<int>(p.x2)] += 1.0;
  }
  double chi = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      const double e = n * CoinPairFamily::pmf(theta, a, b);
      chi += (counts[a][b] - e) * (counts[a][b] - e) / e;
    }
  EXPECT_GT(boost::math::cdf(boost::math::complement(boost::math::chi_squared(3), chi)), 0.001);
}

TEST(PriorSpec, Validation)
{
  EXPECT_THROW(PriorSpec::gamma(0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(PriorSpec::gamma(1.0, -1.0), std::invalid_argument);
  EXPECT_THROW(PriorSpec::normal(0.0, 0.0), std::invalid_argument);
  EXPECT_THROW(PriorSpec::finite({0.1, 0.2}, {0.5, 0.6}), std::invalid_argument);
  EXPECT_THROW(PriorSpec::finite({0.1, 0.2}, {1.5, -0.5}), std::invalid_argument);
  EXPECT_NO_THROW(PriorSpec::finite({0.1, 0.2}, {0.25, 0.75}));
}

TEST(PriorSpec, GammaIsShapeScale)
{
  auto q = PriorSpec::gamma(1.0, 0.5);
  EXPECT_NEAR(q.density(1.0), 2.0 * std::exp(-2.0), 1e-15);
  EXPECT_NEAR(q.mean(), 0.5, 1e-15);
}

TEST(CompensatedSum, RecoversSmallTerms)
{
  CompensatedSum s;
  s += 1.0;
  for (int i = 0; i < 1000; ++i)
    s += 1e-16;
  s += -1.0;
  EXPECT_NEAR(s.value(), 1e-13, 1e-24);
}

TEST(Substream, DeterministicAndDistinct)
{
  Rng a = substream(42, 0), b = substream(42, 0), c = substream(42, 1);
  const auto va = a(), vb = b(), vc = c();
  EXPECT_EQ(va, vb);
  EXPECT_NE(va, vc);
}
