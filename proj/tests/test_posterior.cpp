#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "ppbayes/models.hpp"
#include "ppbayes/posterior.hpp"

using namespace ppbayes;

namespace {

auto gamma1 = std::make_shared<GammaExpFamily>(1.0);
auto coin = std::make_shared<CoinPairFamily>();
auto normal1 = std::make_shared<BivariateNormalFamily>(1.0, 0.0, 0.0, 1.0);

double beta_fn(double a, double b) { return std::exp(std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b)); }

} // namespace

TEST(BuildPosterior, EmptySampleHasUnitNormalizer)
{
  for (auto q : {PriorSpec::gamma(1.0, 1.0), PriorSpec::gamma(2.0, 0.3)}) {
    auto post = build_posterior(gamma1, q, {});
    EXPECT_NEAR(post.log_normalizer(), 0.0, 1e-10);
    EXPECT_NEAR(post.density(0.7), 1.0, 1e-10);
  }
}

TEST(BuildPosterior, PointMassPrior)
{
  auto post = build_posterior(gamma1, PriorSpec::point_mass(1.5), SampleBatch{{2.0, 3.0}, {0.5, 1.0}});
  EXPECT_NEAR(post.density(1.5), 1.0, 1e-15);
}

TEST(BuildPosterior, CoinBetaNormalizer)
{
  const SampleBatch x{{1, 1}, {0, 0}};
  auto post = build_posterior(coin, PriorSpec::uniform01(), x);
  EXPECT_NEAR(std::exp(post.log_normalizer()), 1.0 / beta_fn(4, 2), 1e-9);
  EXPECT_NEAR(std::exp(post.log_normalizer()), 20.0, 1e-9);
  EXPECT_NEAR(posterior_density(post, 0.5), 1.25, 1e-10);
}

TEST(BuildPosterior, GammaExampleNormalizes)
{
  auto post = build_posterior(gamma1, PriorSpec::gamma(1.0, 1.0), SampleBatch{{2.0, 3.0}});
  auto r = prior_expectation([&](double t) { return post.density(t); }, post.prior(), post.settings(), post.peak());
  EXPECT_NEAR(r.value, 1.0, 1e-8);
  // K⁻¹ = ∫ θ²·2e^{-8θ}·e^{-θ} dθ = 4/9³
  EXPECT_NEAR(std::exp(-post.log_normalizer()), 4.0 / 729.0, 1e-8 * 4.0 / 729.0);
}

TEST(BuildPosterior, NormalizationOnRandomCases)
{
  Rng rng = substream(2024, 0);
  for (int c = 0; c < 50; ++c) {
    std::shared_ptr<const ModelFamily> m;
    PriorSpec q = PriorSpec::uniform01();
    switch (c % 3) {
      case 0:
        m = gamma1;
        q = PriorSpec::gamma(1.0, 1.0);
        break;
      case 1:
        m = coin;
        break;
      default:
        m = normal1;
        q = PriorSpec::normal(0.0, 1.0);
        break;
    }
    const double theta = q.sample(rng);
    const auto n = static_cast<std::size_t>(c % 17) * 3;
    auto x = sample_batch(*m, theta, n, rng);
    auto post = build_posterior(m, q, x);
    auto r = prior_expectation([&](double t) { return post.density(t); }, q, post.settings(), post.peak());
    EXPECT_NEAR(r.value, 1.0, 1e-8) << m->name() << " n=" << n;
    double wsum = 0.0;
    for (const auto& nd : post.nodes())
      wsum += nd.weight;
    EXPECT_NEAR(wsum, 1.0, 1e-12);
  }
}

TEST(BuildPosterior, ConcentratedPosteriorLargeN)
{
  Rng rng = substream(99, 0);
  auto x = sample_batch(*gamma1, 2.0, 5000, rng);
  auto post = build_posterior(gamma1, PriorSpec::gamma(1.0, 1.0), x);
  EXPECT_TRUE(post.converged());
  // conjugate: θ | x' ~ Gamma(2n+1, rate 1 + Σ x1(1+x2))
  double rate = 1.0;
  for (const auto& p : x)
    rate += p.x1 * (1 + p.x2);
  EXPECT_NEAR(post.mean(), (2.0 * x.size() + 1) / rate, 1e-9);
}

TEST(BuildPosterior, SequentialConsistency)
{
  Rng rng = substream(5, 5);
  auto all = sample_batch(*gamma1, 0.8, 12, rng);
  SampleBatch first(all.begin(), all.begin() + 7), last(all.begin() + 7, all.end());
  auto full = build_posterior(gamma1, PriorSpec::gamma(1.0, 1.0), all);
  auto part = build_posterior(gamma1, PriorSpec::gamma(1.0, 1.0), first);
  const double norm = part.expectation([&](double t) { return std::exp(detail::log_likelihood(*gamma1, t, last)); });
  for (double t = 0.05; t < 3.0; t += 0.05) {
    const double seq = part.density(t) * std::exp(detail::log_likelihood(*gamma1, t, last)) / norm;
    EXPECT_NEAR(full.density(t), seq, 1e-8 * std::max(seq, 1e-300)) << t;
  }
}

TEST(BuildPosterior, FinitePriorMatchesBayesRule)
{
  auto fam = std::make_shared<FiniteTableFamily>(demo_finite_family("two_point"));
  auto post = build_posterior(fam, fam->prior(), SampleBatch{{0, 0}});
  EXPECT_NEAR(post.density(0.0) * 0.5, 0.8, 1e-12);
  EXPECT_NEAR(post.density(1.0) * 0.5, 0.2, 1e-12);

  auto q = PriorSpec::finite({0.2, 0.5, 0.9}, {0.5, 0.3, 0.2});
  const SampleBatch x{{1, 0}, {1, 1}, {0, 0}};
  auto p2 = build_posterior(coin, q, x);
  double ev = 0.0;
  for (std::size_t i = 0; i < 3; ++i)
    ev += q.weights()[i] * joint_sample_density(*coin, q.points()[i], x);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_NEAR(p2.density(q.points()[i]), joint_sample_density(*coin, q.points()[i], x) / ev, 1e-12);
}

TEST(BuildPosterior, ImpossibleSample)
{
  auto fam = std::make_shared<FiniteTableFamily>(demo_finite_family("two_point"));
  // only θ=1 produces (1,1); a point mass at θ=0 cannot
  auto q = PriorSpec::point_mass(0.0);
  EXPECT_THROW(build_posterior(fam, q, SampleBatch{{1, 1}}), ImpossibleSampleError);
}

TEST(BuildPosterior, RejectsBadSample)
{
  EXPECT_THROW(build_posterior(coin, PriorSpec::uniform01(), SampleBatch{{2, 0}}), DomainError);
  EXPECT_THROW(build_posterior(coin, PriorSpec::normal(0, 1), {}), DomainError);
}

TEST(PosteriorDensity, NonNegativeAndPriorForEmptySample)
{
  auto post = build_posterior(normal1, PriorSpec::normal(0.0, 1.0), {});
  for (double t = -5; t <= 5; t += 0.5)
    EXPECT_NEAR(post.density(t), 1.0, 1e-10);
  auto p2 = build_posterior(normal1, PriorSpec::normal(0.0, 1.0), SampleBatch{{1, 2}});
  for (double t = -5; t <= 5; t += 0.5)
    EXPECT_GE(p2.density(t), 0.0);
}
