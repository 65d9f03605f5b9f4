#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "ppbayes/models.hpp"
#include "ppbayes/predictive.hpp"

using namespace ppbayes;

namespace {

auto gamma1 = std::make_shared<GammaExpFamily>(1.0);
auto coin = std::make_shared<CoinPairFamily>();

PredictiveEvaluator gamma_eval(const SampleBatch& x, double lambda = 1.0)
{
  return make_evaluator(std::make_shared<GammaExpFamily>(lambda), PriorSpec::gamma(1.0, 1.0 / lambda), x);
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// A location family whose conditional law of X2 is Cauchy; its regression does not exist.
class CauchyFamily : public ModelFamily
{
public:
  std::string name() const override { return "cauchy"; }
  Support param_support() const override { return Support::real_line(); }
  Support x1_support() const override { return Support::real_line(); }
  Support x2_support() const override { return Support::real_line(); }
  double log_joint_density(double th, double x1, double x2) const override
  {
    return std::log(marginal1_density(th, x1) * conditional_density(th, x1, x2));
  }
  double marginal1_density(double th, double x1) const override
  {
    return std::exp(-0.5 * (x1 - th) * (x1 - th)) / std::sqrt(2 * M_PI);
  }
  double conditional_density(double th, double, double x2) const override
  {
    return 1.0 / (M_PI * (1.0 + (x2 - th) * (x2 - th)));
  }
  double conditional_cdf(double th, double, double t) const override { return 0.5 + std::atan(t - th) / M_PI; }
  double regression(double, double) const override { return kNaN; }
  Observation sample(double th, Rng& rng) const override
  {
    return {std::normal_distribution<>(th, 1.0)(rng), std::cauchy_distribution<>(th, 1.0)(rng)};
  }
};

} // namespace

TEST(PredictiveJointDensity, CoinPriorPredictive)
{
  auto ev = make_evaluator(coin, PriorSpec::uniform01(), {});
  EXPECT_NEAR(ev.predictive_joint_density(1, 1), 1.0 / 3.0, 1e-14);
}

TEST(PredictiveJointDensity, PointMassPrior)
{
  auto ev = make_evaluator(gamma1, PriorSpec::point_mass(1.7), SampleBatch{{2, 3}});
  EXPECT_DOUBLE_EQ(ev.predictive_joint_density(0.6, 1.1), gamma1->joint_density(1.7, 0.6, 1.1));
  EXPECT_DOUBLE_EQ(ev.predictive_marginal1(0.6), gamma1->marginal1_density(1.7, 0.6));
  EXPECT_DOUBLE_EQ(ev.conditional_density_estimate(0.6, 1.1), gamma1->conditional_density(1.7, 0.6, 1.1));
  EXPECT_NEAR(ev.regression_estimate(0.6), gamma1->regression(1.7, 0.6), 1e-9);
}

TEST(PredictiveJointDensity, GammaMatchesClosedForm)
{
  // f*(x1,x2) = f*_1(x1)·conditional; with a_n the completed rate, f*_1(1) is the
  // Lomax marginal (2n+2)·(λ+S)^{2n+1}... checked through the ratio below
  const SampleBatch x{{2, 3}};
  auto ev = gamma_eval(x);
  const double cf = gamma_conditional_density_cf(x, 1.0, 0.0, 1.0);
  EXPECT_NEAR(ev.conditional_density_estimate(1.0, 0.0), cf, 1e-8 * cf);
  EXPECT_NEAR(ev.conditional_density_estimate(1.0, 0.0), 0.4, 1e-8);
}

TEST(PredictiveMarginal, CoinPosteriorMean)
{
  auto ev = make_evaluator(coin, PriorSpec::uniform01(), SampleBatch{{1, 1}, {0, 0}});
  EXPECT_NEAR(ev.predictive_marginal1(1), 2.0 / 3.0, 1e-12);
}

TEST(PredictiveMarginal, IntegratesToOne)
{
  auto ev = gamma_eval(SampleBatch{{2, 3}, {0.5, 0.2}});
  auto r = line_integral([&](double x1) { return ev.predictive_marginal1(x1); }, 0.0, kInf, ev.settings(),
                         ScaleHint{0.0, 1.0});
  EXPECT_NEAR(r.value, 1.0, 1e-6);
}

TEST(ConditionalDensity, ExampleOne)
{
  auto ev = gamma_eval(SampleBatch{{2, 3}});
  EXPECT_NEAR(ev.conditional_density_estimate(1.0, 0.0), 0.4, 1e-8);
  EXPECT_NEAR(ev.conditional_cdf_estimate(1.0, 1.0), 1.0 - std::pow(1.1, -4), 1e-8);
  EXPECT_NEAR(ev.regression_estimate(1.0), 10.0 / 3.0, 1e-7);
}

TEST(ConditionalDensity, IntegratesToOneOnRandomCases)
{
  Rng rng = substream(77, 0);
  std::uniform_real_distribution<> u(0, 1);
  for (int rep = 0; rep < 20; ++rep) {
    const double theta = 0.2 + 2.0 * u(rng);
    auto x = sample_batch(*gamma1, theta, rep % 6, rng);
    auto ev = gamma_eval(x);
    const double x1 = 0.05 + 3.0 * u(rng);
    auto r = line_integral([&](double t) { return ev.conditional_density_estimate(x1, t); }, 0.0, kInf,
                           ev.settings(), ev.x2_hint(x1));
    EXPECT_NEAR(r.value, 1.0, 1e-6);
    auto m = line_integral([&](double t) { return t * ev.conditional_density_estimate(x1, t); }, 0.0, kInf,
                           ev.settings(), ev.x2_hint(x1));
    EXPECT_NEAR(m.value, ev.regression_estimate(x1), 1e-7 * std::max(1.0, m.value));
  }
}

TEST(ConditionalDensity, NullConditioning)
{
  auto fam = std::make_shared<FiniteTableFamily>(demo_finite_family("two_point"));
  // after observing (1,1) only θ=1 remains; its x1 marginal is positive everywhere, so
  // build a family where some x1 has zero marginal under all θ instead
  std::istringstream in("prior,0,0,1\n0,0,0,0.5\n0,0,1,0.5\n0,1,0,0\n");
  auto zero = std::make_shared<FiniteTableFamily>(FiniteTableFamily::parse(in, "zero"));
  auto ev = make_evaluator(zero, zero->prior(), {});
  EXPECT_THROW(ev.conditional_density_estimate(1, 0), NullConditioningError);
  EXPECT_THROW(ev.regression_estimate(1), NullConditioningError);
  EXPECT_NO_THROW(ev.conditional_density_estimate(0, 0));
  EXPECT_THROW(ev.conditional_density_estimate(0.5, 0), DomainError);
  (void)fam;
}

TEST(ConditionalCdf, LimitsAndMonotonicity)
{
  auto ev = gamma_eval(SampleBatch{{0.7, 0.4}, {1.3, 2.2}});
  EXPECT_EQ(ev.conditional_cdf_estimate(1.0, -1.0), 0.0);
  EXPECT_EQ(ev.conditional_cdf_estimate(1.0, 0.0), 0.0);
  EXPECT_NEAR(ev.conditional_cdf_estimate(1.0, 1e12), 1.0, 1e-6);
  EXPECT_EQ(ev.conditional_cdf_estimate(1.0, kInf), 1.0);
  double prev = -1.0;
  for (int i = 0; i < 512; ++i) {
    const double t = 0.02 * i;
    const double v = ev.conditional_cdf_estimate(1.0, t);
    EXPECT_GE(v, prev - 1e-10);
    prev = v;
  }
}

TEST(ConditionalCdf, CoinIsSinglePredictiveRatio)
{
  const SampleBatch x{{1, 1}, {0, 0}};
  auto ev = make_evaluator(coin, PriorSpec::uniform01(), x);
  for (double k1 : {0.0, 1.0}) {
    const double p0 = coin_conditional_pf_cf(x, k1, 0);
    EXPECT_NEAR(ev.conditional_cdf_estimate(k1, 0.0), p0, 1e-12);
    EXPECT_NEAR(ev.conditional_cdf_estimate(k1, 0.5), p0, 1e-12);
    EXPECT_NEAR(ev.conditional_cdf_estimate(k1, 1.0), 1.0, 1e-12);
    EXPECT_EQ(ev.conditional_cdf_estimate(k1, -0.1), 0.0);
  }
}

TEST(ConditionalCdf, MixtureRouteMatchesIntegratedDensity)
{
  auto ev = gamma_eval(SampleBatch{{2, 3}, {0.1, 0.2}, {1.0, 1.0}});
  for (double t : {0.05, 0.5, 2.0, 10.0}) {
    auto r = line_integral([&](double s) { return ev.conditional_density_estimate(0.8, s); }, 0.0, t,
                           ev.settings());
    EXPECT_NEAR(ev.conditional_cdf_estimate(0.8, t), r.value, 1e-9);
  }
}

TEST(Regression, NormalExample)
{
  auto nrm = std::make_shared<BivariateNormalFamily>(1.0, 0.0, 0.0, 1.0);
  auto ev = make_evaluator(nrm, PriorSpec::normal(0.0, 1.0), SampleBatch{{1, 2}});
  EXPECT_NEAR(ev.regression_estimate(2.0), 1.25, 1e-8);
}

TEST(Regression, DivergentMeanIsReported)
{
  auto fam = std::make_shared<CauchyFamily>();
  auto ev = make_evaluator(fam, PriorSpec::normal(0.0, 1.0), SampleBatch{{0.3, 1.0}});
  EXPECT_THROW(ev.regression_estimate(0.0), NonIntegrableMeanError);
  EXPECT_NO_THROW(ev.conditional_cdf_estimate(0.0, 1.0));
}

TEST(Regression, CurveIndependentOfWorkers)
{
  auto ev = gamma_eval(SampleBatch{{2, 3}});
  std::vector<double> xs{0.2, 0.5, 1.0, 2.0, 4.0, 8.0};
  auto a = ev.regression_curve(xs, 1), b = ev.regression_curve(xs, 4);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    EXPECT_EQ(a[i], b[i]);
    EXPECT_NEAR(a[i], gamma_regression_cf(SampleBatch{{2, 3}}, xs[i], 1.0), 1e-7 * a[i]);
  }
}

TEST(SetProbability, FullSupportAndHalfLines)
{
  auto ev = gamma_eval(SampleBatch{{2, 3}});
  EXPECT_NEAR(ev.conditional_probability_estimate(1.0, Event::everything()), 1.0, 1e-6);
  for (double t : {0.1, 1.0, 7.0})
    EXPECT_NEAR(ev.conditional_probability_estimate(1.0, Event::at_most(t)), ev.conditional_cdf_estimate(1.0, t),
                1e-8);
  // additivity over disjoint pieces
  const double whole = ev.conditional_probability_estimate(1.0, Event::intervals({{0.5, 3.0}}));
  const double parts = ev.conditional_probability_estimate(1.0, Event::intervals({{0.5, 1.0}})) +
                       ev.conditional_probability_estimate(1.0, Event::intervals({{1.0, 3.0}}));
  EXPECT_NEAR(whole, parts, 1e-10);
  const double two = ev.conditional_probability_estimate(1.0, Event::intervals({{0.5, 1.0}, {2.0, 3.0}}));
  EXPECT_NEAR(two,
              ev.conditional_cdf_estimate(1.0, 1.0) - ev.conditional_cdf_estimate(1.0, 0.5) +
                ev.conditional_cdf_estimate(1.0, 3.0) - ev.conditional_cdf_estimate(1.0, 2.0),
              1e-8);
  EXPECT_EQ(ev.conditional_probability_estimate(1.0, Event::points({1.0, 2.0})), 0.0);
}

TEST(SetProbability, CoinPointSet)
{
  auto ev = make_evaluator(coin, PriorSpec::uniform01(), SampleBatch{{1, 1}, {0, 0}});
  EXPECT_NEAR(ev.conditional_probability_estimate(1, Event::points({1})), 5.0 / 7.0, 1e-12);
  EXPECT_NEAR(ev.conditional_probability_estimate(0, Event::points({1})), 3.0 / 7.0, 1e-12);
  EXPECT_NEAR(ev.conditional_probability_estimate(0, Event::everything()), 1.0, 1e-12);
}

TEST(SetProbability, EventValidation)
{
  EXPECT_THROW(Event::intervals({{0, 2}, {1, 3}}), std::invalid_argument);
  EXPECT_THROW(Event::intervals({{2, 1}}), std::invalid_argument);
  std::vector<std::pair<double, double>> many;
  for (int i = 0; i < 17; ++i)
    many.push_back({2.0 * i, 2.0 * i + 1});
  EXPECT_THROW(Event::intervals(many), std::invalid_argument);
}

TEST(MixtureRepresentation, FinitePrior)
{
  auto q = PriorSpec::finite({0.5, 1.0, 2.5}, {0.2, 0.5, 0.3});
  const SampleBatch x{{0.4, 1.1}, {2.0, 0.3}};
  auto ev = make_evaluator(gamma1, q, x);
  for (double x1 : {0.3, 1.7})
    for (double x2 : {0.0, 0.4, 3.0}) {
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < 3; ++i) {
        const double th = q.points()[i];
        const double w = q.weights()[i] * joint_sample_density(*gamma1, th, x) * gamma1->marginal1_density(th, x1);
        num += w * gamma1->conditional_density(th, x1, x2);
        den += w;
      }
      EXPECT_NEAR(ev.conditional_density_estimate(x1, x2), num / den, 1e-12 * (num / den));
    }
}

TEST(EngineAgreement, GammaRandomCases)
{
  Rng rng = substream(88, 0);
  std::uniform_real_distribution<> u(0, 1);
  for (int rep = 0; rep < 50; ++rep) {
    const double lambda = 0.3 + 3.0 * u(rng);
    auto fam = std::make_shared<GammaExpFamily>(lambda);
    auto x = sample_batch(*fam, fam->prior().sample(rng) + 0.05, rep % 8, rng);
    auto ev = make_evaluator(fam, fam->prior(), x);
    const double x1 = 0.05 + 4 * u(rng), x2 = 3 * u(rng);
    EXPECT_LT(rel(ev.conditional_density_estimate(x1, x2), gamma_conditional_density_cf(x, x1, x2, lambda)), 1e-6);
    EXPECT_LT(rel(ev.conditional_cdf_estimate(x1, x2), gamma_conditional_cdf_cf(x, x1, x2, lambda)), 1e-6);
    EXPECT_LT(rel(ev.regression_estimate(x1), gamma_regression_cf(x, x1, lambda)), 1e-6);
  }
}

TEST(EngineAgreement, CoinRandomCasesExact)
{
  Rng rng = substream(89, 0);
  for (int rep = 0; rep < 50; ++rep) {
    auto x = sample_batch(*coin, std::uniform_real_distribution<>(0.05, 0.95)(rng), rep % 10, rng);
    auto ev = make_evaluator(coin, PriorSpec::uniform01(), x);
    for (double k1 : {0.0, 1.0}) {
      for (double k2 : {0.0, 1.0}) {
        EXPECT_NEAR(ev.conditional_density_estimate(k1, k2), coin_conditional_pf_cf(x, k1, k2), 1e-12);
        EXPECT_NEAR(ev.conditional_cdf_estimate(k1, k2), k2 == 0 ? coin_conditional_pf_cf(x, k1, 0) : 1.0, 1e-12);
      }
      EXPECT_NEAR(ev.regression_estimate(k1), coin_regression_cf(x, k1), 1e-12);
    }
  }
}

TEST(EngineAgreement, NormalRandomCases)
{
  Rng rng = substream(90, 0);
  std::uniform_real_distribution<> u(0, 1);
  for (int rep = 0; rep < 50; ++rep) {
    const double sigma = 0.4 + 1.5 * u(rng), rho = -0.8 + 1.6 * u(rng), mu = -1 + 2 * u(rng),
                 tau = 0.3 + 2 * u(rng);
    auto fam = std::make_shared<BivariateNormalFamily>(sigma, rho, mu, tau);
    auto x = sample_batch(*fam, mu + tau * (u(rng) - 0.5), rep % 6, rng);
    auto ev = make_evaluator(fam, fam->prior(), x);
    auto p = normal_predictive_params(x, sigma, rho, mu, tau);
    const double x1 = p.m1 + std::sqrt(p.sigma1_sq) * (4 * u(rng) - 2);
    auto c = normal_conditional_cf(p, x1);
    const double x2 = c.mean + std::sqrt(c.variance) * (4 * u(rng) - 2);
    const double dens = std::exp(-0.5 * (x2 - c.mean) * (x2 - c.mean) / c.variance) / std::sqrt(2 * M_PI * c.variance);
    const double cdf = 0.5 * std::erfc(-(x2 - c.mean) / std::sqrt(2 * c.variance));
    EXPECT_LT(rel(ev.conditional_density_estimate(x1, x2), dens), 1e-6);
    EXPECT_LT(rel(ev.conditional_cdf_estimate(x1, x2), cdf), 1e-6);
    EXPECT_LT(std::abs(ev.regression_estimate(x1) - c.mean), 1e-6 * std::max(1.0, std::abs(c.mean)));
  }
}

TEST(NormalPredictive, JointDensityOnGrid)
{
  auto fam = std::make_shared<BivariateNormalFamily>(1.0, 0.0, 0.0, 1.0);
  const SampleBatch x{{1, 2}};
  auto ev = make_evaluator(fam, fam->prior(), x);
  auto p = normal_predictive_params(x, 1.0, 0.0, 0.0, 1.0);
  const double s = std::sqrt(p.sigma1_sq), r = p.rho1;
  for (int i = 0; i <= 20; ++i)
    for (int j = 0; j <= 20; ++j) {
      const double a = p.m1 - 4 * s + 0.4 * s * i, b = p.m1 - 4 * s + 0.4 * s * j;
      const double za = (a - p.m1) / s, zb = (b - p.m1) / s;
      const double q = (za * za - 2 * r * za * zb + zb * zb) / (1 - r * r);
      const double n2 = std::exp(-0.5 * q) / (2 * M_PI * p.sigma1_sq * std::sqrt(1 - r * r));
      EXPECT_LT(rel(ev.predictive_joint_density(a, b), n2), 1e-6);
    }
}

TEST(JointNormalization, BuiltInFamilies)
{
  auto ev = gamma_eval(SampleBatch{{2, 3}});
  EXPECT_NEAR(ev.joint_normalization(), 1.0, 1e-6);
  auto ec = make_evaluator(coin, PriorSpec::uniform01(), SampleBatch{{0, 1}});
  EXPECT_NEAR(ec.joint_normalization(), 1.0, 1e-12);
}
