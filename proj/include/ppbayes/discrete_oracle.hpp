#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "core.hpp"
#include "models.hpp"
#include "posterior.hpp"
#include "predictive.hpp"
#include "risk.hpp"

namespace ppbayes {

//! The augmented measure Π_n on (Θ, x', x) for a finite family, enumerated.
//! Entries are laid out [θ][x'][cell], x' in base-|cells| digits with the
//! first pair most significant.
class JointTable
{
public:
  static constexpr std::size_t max_n = 4;
  static constexpr double max_entries = 1e7;

  JointTable(std::shared_ptr<const FiniteTableFamily> family, std::size_t n, unsigned workers = 1)
    : family_(std::move(family)), n_(n)
  {
    if (!family_)
      throw std::invalid_argument("joint table needs a family");
    if (n_ > max_n)
      throw SizeCapError("joint table: n must be at most 4");
    const double size =
      static_cast<double>(family_->theta_count()) * std::pow(static_cast<double>(family_->cells()), n_ + 1.0);
    if (size >= max_entries)
      throw SizeCapError("joint table: " + format_number(size) + " entries exceed the 1e7 cap");
    samples_ = 1;
    for (std::size_t i = 0; i < n_; ++i)
      samples_ *= family_->cells();
    const std::size_t K = theta_count(), C = cells();
    mass_.assign(K * samples_ * C, 0.0);
    parallel_for(samples_, workers, [&](std::size_t s) {
      const auto digits = sample_cells(s);
      for (std::size_t k = 0; k < K; ++k) {
        double base = family_->weights()[k];
        for (std::size_t c : digits)
          base *= family_->prob_cell(k, c);
        for (std::size_t c = 0; c < C; ++c)
          mass_[(k * samples_ + s) * C + c] = base * family_->prob_cell(k, c);
      }
    });
  }

  const FiniteTableFamily& family() const { return *family_; }
  const std::shared_ptr<const FiniteTableFamily>& family_ptr() const { return family_; }
  std::size_t n() const { return n_; }
  std::size_t theta_count() const { return family_->theta_count(); }
  std::size_t cells() const { return family_->cells(); }
  std::size_t sample_count() const { return samples_; }
  std::size_t x1_count() const { return family_->x1_count(); }
  std::size_t x2_count() const { return family_->x2_count(); }

  double entry(std::size_t k, std::size_t s, std::size_t c) const { return mass_[(k * samples_ + s) * cells() + c]; }

  std::vector<std::size_t> sample_cells(std::size_t s) const
  {
    std::vector<std::size_t> out(n_);
    for (std::size_t i = n_; i-- > 0;) {
      out[i] = s % cells();
      s /= cells();
    }
    return out;
  }

  SampleBatch sample(std::size_t s) const
  {
    SampleBatch out;
    for (std::size_t c : sample_cells(s))
      out.push_back(family_->cell_value(c));
    return out;
  }

  //! Π_n(q=θ_k, π'=x', π1=x1).
  double theta_sample_x1_mass(std::size_t k, std::size_t s, std::size_t i) const
  {
    CompensatedSum m;
    for (std::size_t j = 0; j < x2_count(); ++j)
      m += entry(k, s, i * x2_count() + j);
    return m.value();
  }

  //! Π_n(q=θ_k, π'=x').
  double theta_sample_mass(std::size_t k, std::size_t s) const
  {
    CompensatedSum m;
    for (std::size_t c = 0; c < cells(); ++c)
      m += entry(k, s, c);
    return m.value();
  }

  double sample_mass(std::size_t s) const
  {
    CompensatedSum m;
    for (std::size_t k = 0; k < theta_count(); ++k)
      for (std::size_t c = 0; c < cells(); ++c)
        m += entry(k, s, c);
    return m.value();
  }

  double total() const
  {
    CompensatedSum m;
    for (double v : mass_)
      m += v;
    return m.value();
  }

private:
  std::shared_ptr<const FiniteTableFamily> family_;
  std::size_t n_;
  std::size_t samples_ = 1;
  std::vector<double> mass_;
};

inline JointTable build_joint_table(std::shared_ptr<const FiniteTableFamily> family, std::size_t n,
                                    unsigned workers = 1)
{
  return JointTable(std::move(family), n, workers);
}

namespace detail {

//! Fixed-order chunked reduction over x' so sums do not depend on `workers`.
template <class F>
double reduce_samples(std::size_t count, unsigned workers, F&& term)
{
  constexpr std::size_t chunks = 64;
  std::vector<double> part(chunks, 0.0);
  parallel_for(chunks, workers, [&](std::size_t ch) {
    CompensatedSum s;
    for (std::size_t i = ch; i < count; i += chunks)
      s += term(i);
    part[ch] = s.value();
  });
  CompensatedSum total;
  for (double v : part)
    total += v;
  return total.value();
}

template <class F>
double max_over_samples(std::size_t count, unsigned workers, F&& term)
{
  std::vector<double> part(count, 0.0);
  parallel_for(count, workers, [&](std::size_t s) { part[s] = term(s); });
  double best = 0.0;
  for (double v : part)
    best = std::max(best, v);
  return best;
}

//! Posterior probabilities of each θ_k from the posterior module.
inline std::vector<double> module_posterior(const JointTable& t, const SampleBatch& x)
{
  const auto post = build_posterior(t.family_ptr(), t.family().prior(), x);
  std::vector<double> out;
  for (std::size_t k = 0; k < t.theta_count(); ++k)
    out.push_back(post.density(t.family().thetas()[k]) * t.family().weights()[k]);
  return out;
}

} // namespace detail

struct IdentityCheck
{
  std::string name;
  double max_violation = 0.0;
};

struct JointIdentityReport
{
  std::vector<IdentityCheck> checks;

  double max_violation() const
  {
    double m = 0.0;
    for (const auto& c : checks)
      m = std::max(m, c.max_violation);
    return m;
  }
};

//! Marginals and conditionals of Π_n by exact summation, against the
//! likelihood and the posterior module.
inline JointIdentityReport check_joint_identities(const JointTable& t, unsigned workers = 1)
{
  const auto& fam = t.family();
  const std::size_t K = t.theta_count(), S = t.sample_count(), C = t.cells();
  JointIdentityReport rep;

  rep.checks.push_back({"total_mass", std::abs(t.total() - 1.0)});

  {
    double worst = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double m = detail::reduce_samples(S, workers, [&](std::size_t s) { return t.theta_sample_mass(k, s); });
      worst = std::max(worst, std::abs(m - fam.weights()[k]));
    }
    rep.checks.push_back({"prior_marginal", worst});
  }

  rep.checks.push_back({"sample_marginal", detail::max_over_samples(S, workers, [&](std::size_t s) {
                          const SampleBatch x = t.sample(s);
                          CompensatedSum m;
                          for (std::size_t k = 0; k < K; ++k)
                            m += fam.weights()[k] * joint_sample_density(fam, fam.thetas()[k], x);
                          return std::abs(t.sample_mass(s) - m.value());
                        })});

  rep.checks.push_back({"sample_given_theta", detail::max_over_samples(S, workers, [&](std::size_t s) {
                          const SampleBatch x = t.sample(s);
                          double worst = 0.0;
                          for (std::size_t k = 0; k < K; ++k) {
                            const double w = fam.weights()[k];
                            if (w > 0.0)
                              worst = std::max(worst, std::abs(t.theta_sample_mass(k, s) / w -
                                                               joint_sample_density(fam, fam.thetas()[k], x)));
                          }
                          return worst;
                        })});

  rep.checks.push_back({"posterior_given_sample", detail::max_over_samples(S, workers, [&](std::size_t s) {
                          const double m = t.sample_mass(s);
                          if (!(m > 0.0))
                            return 0.0;
                          const auto post = detail::module_posterior(t, t.sample(s));
                          double worst = 0.0;
                          for (std::size_t k = 0; k < K; ++k)
                            worst = std::max(worst, std::abs(t.theta_sample_mass(k, s) / m - post[k]));
                          return worst;
                        })});

  {
    // π given q, and q given π, with π the new pair
    std::vector<std::vector<double>> joint(K, std::vector<double>(C, 0.0));
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t c = 0; c < C; ++c)
        joint[k][c] = detail::reduce_samples(S, workers, [&](std::size_t s) { return t.entry(k, s, c); });
    double worst_pair = 0.0, worst_post = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double w = fam.weights()[k];
      if (w > 0.0)
        for (std::size_t c = 0; c < C; ++c)
          worst_pair = std::max(worst_pair, std::abs(joint[k][c] / w - fam.prob_cell(k, c)));
    }
    for (std::size_t c = 0; c < C; ++c) {
      CompensatedSum m;
      for (std::size_t k = 0; k < K; ++k)
        m += joint[k][c];
      if (!(m.value() > 0.0))
        continue;
      const auto post = detail::module_posterior(t, {fam.cell_value(c)});
      for (std::size_t k = 0; k < K; ++k)
        worst_post = std::max(worst_post, std::abs(joint[k][c] / m.value() - post[k]));
    }
    rep.checks.push_back({"pair_given_theta", worst_pair});
    rep.checks.push_back({"posterior_given_pair", worst_post});
  }
  return rep;
}

//! E[H_{A2} | π'=x', π1=x1] = Σ_θ P_θ(A2 | x1) Π_n(θ | x', x1).
inline double exact_conditional_expectation_H(const JointTable& t, std::size_t s, std::size_t i, const Event& a2)
{
  const auto& fam = t.family();
  const std::size_t K = t.theta_count(), J = t.x2_count();
  CompensatedSum num, den;
  for (std::size_t k = 0; k < K; ++k) {
    const double w = t.theta_sample_x1_mass(k, s, i);
    den += w;
    if (!(w > 0.0))
      continue;
    CompensatedSum in, all;
    for (std::size_t j = 0; j < J; ++j) {
      all += fam.prob(k, i, j);
      if (a2.contains(fam.x2_values()[j]))
        in += fam.prob(k, i, j);
    }
    num += w * (in.value() / all.value());
  }
  if (!(den.value() > 0.0))
    throw NullConditioningError("conditioning event (x', x1) has zero mass");
  return num.value() / den.value();
}

//! Max |E[H_{A2} | x', x1] - M*(x', x1, A2)| over every positive-mass (x', x1)
//! and every subset A2 of Ω2, M* from the predictive module.
inline double check_conditional_expectation(const JointTable& t, unsigned workers = 1)
{
  const auto& fam = t.family();
  const std::size_t I = t.x1_count(), J = t.x2_count();
  return detail::max_over_samples(t.sample_count(), workers, [&](std::size_t s) {
    if (!(t.sample_mass(s) > 0.0))
      return 0.0;
    const auto ev = make_evaluator(t.family_ptr(), fam.prior(), t.sample(s));
    double worst = 0.0;
    for (std::size_t i = 0; i < I; ++i) {
      CompensatedSum m;
      for (std::size_t k = 0; k < t.theta_count(); ++k)
        m += t.theta_sample_x1_mass(k, s, i);
      if (!(m.value() > 0.0))
        continue;
      for (std::size_t mask = 0; mask < (std::size_t{1} << J); ++mask) {
        std::vector<double> pts;
        for (std::size_t j = 0; j < J; ++j)
          if (mask & (std::size_t{1} << j))
            pts.push_back(fam.x2_values()[j]);
        const Event a2 = Event::points(pts);
        const double lhs = exact_conditional_expectation_H(t, s, i, a2);
        const double rhs = ev.conditional_probability_estimate(fam.x1_values()[i], a2);
        worst = std::max(worst, std::abs(lhs - rhs));
      }
    }
    return worst;
  });
}

//! Builds the n-fold posterior predictive given x' by enumeration, takes the
//! marginal of its first pair and compares it with the one-pair predictive.
inline double check_predictive_marginal_identity(const JointTable& t, std::size_t s)
{
  if (t.n() == 0)
    throw std::invalid_argument("marginal identity needs n >= 1");
  const auto& fam = t.family();
  const std::size_t K = t.theta_count(), C = t.cells(), S = t.sample_count();
  const double m = t.sample_mass(s);
  if (!(m > 0.0))
    throw NullConditioningError("sample has zero prior-predictive mass");
  std::vector<double> post(K);
  for (std::size_t k = 0; k < K; ++k)
    post[k] = t.theta_sample_mass(k, s) / m;
  std::vector<CompensatedSum> first(C);
  for (std::size_t y = 0; y < S; ++y) {
    const auto ys = t.sample_cells(y);
    double mass = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      double p = post[k];
      for (std::size_t c : ys)
        p *= fam.prob_cell(k, c);
      mass += p;
    }
    first[ys.front()] += mass;
  }
  const auto ev = make_evaluator(t.family_ptr(), fam.prior(), t.sample(s));
  double worst = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    const Observation o = fam.cell_value(c);
    worst = std::max(worst, std::abs(first[c].value() - ev.predictive_joint_density(o.x1, o.x2)));
  }
  return worst;
}

//==============================================================================
// Exact Bayes risk
//==============================================================================

//! A conditional law on the finite Ω2 together with a regression value.
struct DiscreteEstimate
{
  std::vector<double> pmf;
  //! Cumulative distribution at each x2 value; derived from pmf when empty.
  std::vector<double> cdf;
  double regression = 0.0;
};

inline DiscreteEstimate estimate_from_pmf(std::vector<double> pmf, const std::vector<double>& x2s)
{
  DiscreteEstimate e;
  CompensatedSum c, r;
  for (std::size_t j = 0; j < pmf.size(); ++j) {
    c += pmf[j];
    r += pmf[j] * x2s[j];
    e.cdf.push_back(c.value());
  }
  e.regression = r.value();
  e.pmf = std::move(pmf);
  return e;
}

//! Estimate at (x' index, x1 index).
using DiscreteEstimator = std::function<DiscreteEstimate(std::size_t, std::size_t)>;

//! E_{Π_n}[loss], summing every (θ, x', x1) cell of positive mass.
inline double exact_bayes_risk(const JointTable& t, const DiscreteEstimator& est, LossKind loss, unsigned workers = 1)
{
  const auto& fam = t.family();
  const std::size_t K = t.theta_count(), I = t.x1_count(), J = t.x2_count();
  return detail::reduce_samples(t.sample_count(), workers, [&](std::size_t s) {
    CompensatedSum acc;
    for (std::size_t i = 0; i < I; ++i) {
      std::optional<DiscreteEstimate> e;
      for (std::size_t k = 0; k < K; ++k) {
        const double w = t.theta_sample_x1_mass(k, s, i);
        if (!(w > 0.0))
          continue;
        if (!e) {
          e = est(s, i);
          if (e->cdf.empty())
            *e = estimate_from_pmf(e->pmf, fam.x2_values());
        }
        const double m1 = fam.marginal1_density(fam.thetas()[k], fam.x1_values()[i]);
        double l = 0.0;
        if (loss == LossKind::sq_error_regression) {
          l = loss_sq_error(e->regression, fam.regression(fam.thetas()[k], fam.x1_values()[i]));
        } else {
          CompensatedSum l1, cq;
          double sup = 0.0;
          for (std::size_t j = 0; j < J; ++j) {
            const double q = fam.prob(k, i, j) / m1;
            l1 += std::abs(e->pmf[j] - q);
            cq += q;
            sup = std::max(sup, std::abs(e->cdf[j] - cq.value()));
          }
          if (loss == LossKind::sq_total_variation)
            l = 0.25 * l1.value() * l1.value();
          else if (loss == LossKind::sq_l1_density)
            l = l1.value() * l1.value();
          else
            l = sup * sup;
        }
        acc += w * l;
      }
    }
    return acc.value();
  });
}

//! The predictive module's estimators at every positive-mass (x', x1),
//! indexed [x'][x1]; null cells hold an empty pmf.
inline std::vector<std::vector<DiscreteEstimate>> predictive_estimates(const JointTable& t, unsigned workers = 1)
{
  const auto& fam = t.family();
  std::vector<std::vector<DiscreteEstimate>> out(t.sample_count(),
                                                 std::vector<DiscreteEstimate>(t.x1_count()));
  parallel_for(t.sample_count(), workers, [&](std::size_t s) {
    if (!(t.sample_mass(s) > 0.0))
      return;
    const auto ev = make_evaluator(t.family_ptr(), fam.prior(), t.sample(s));
    for (std::size_t i = 0; i < t.x1_count(); ++i) {
      const double x1 = fam.x1_values()[i];
      if (!(ev.predictive_marginal1(x1) > 0.0))
        continue;
      DiscreteEstimate e;
      e.pmf = ev.conditional_pmf(x1);
      for (double v : fam.x2_values())
        e.cdf.push_back(ev.conditional_cdf_estimate(x1, v));
      e.regression = ev.regression_estimate(x1);
      out[s][i] = std::move(e);
    }
  });
  return out;
}

inline DiscreteEstimator table_lookup(std::shared_ptr<const std::vector<std::vector<DiscreteEstimate>>> tab)
{
  return [tab](std::size_t s, std::size_t i) { return (*tab)[s][i]; };
}

//==============================================================================
// Competitor pool
//==============================================================================

struct DiscreteCompetitor
{
  std::string id;
  DiscreteEstimator fit;
};

namespace detail {

inline std::uint64_t splitmix(std::uint64_t z)
{
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::vector<double> clamp_renormalize(std::vector<double> p)
{
  double total = 0.0;
  for (double& v : p) {
    v = std::max(0.0, v);
    total += v;
  }
  if (!(total > 0.0))
    return std::vector<double>(p.size(), 1.0 / static_cast<double>(p.size()));
  for (double& v : p)
    v /= total;
  return p;
}

inline std::vector<double> plug_in_pmf(const FiniteTableFamily& fam, std::size_t k, std::size_t i)
{
  const double m = fam.marginal1_density(fam.thetas()[k], fam.x1_values()[i]);
  std::vector<double> p;
  for (std::size_t j = 0; j < fam.x2_count(); ++j)
    p.push_back(m > 0.0 ? fam.prob(k, i, j) / m : 1.0 / static_cast<double>(fam.x2_count()));
  return p;
}

} // namespace detail

//! Adversarial surrogates for "any estimator": prior predictive, MAP and fixed-θ
//! plug-ins, one-coordinate ±0.05 shifts of the Bayes pmf and random ±0.05
//! sign patterns, each renormalized.
inline std::vector<DiscreteCompetitor> competitor_pool(
  const JointTable& t, std::shared_ptr<const std::vector<std::vector<DiscreteEstimate>>> bayes,
  std::size_t size = 200, std::uint64_t seed = 7)
{
  const auto fam = t.family_ptr();
  const auto x2s = fam->x2_values();
  const std::size_t K = t.theta_count(), J = t.x2_count();
  std::vector<DiscreteCompetitor> pool;

  pool.push_back({"prior_predictive", [fam, x2s, K, J](std::size_t, std::size_t i) {
                    std::vector<double> p(J, 0.0);
                    for (std::size_t k = 0; k < K; ++k)
                      for (std::size_t j = 0; j < J; ++j)
                        p[j] += fam->weights()[k] * fam->prob(k, i, j);
                    return estimate_from_pmf(detail::clamp_renormalize(p), x2s);
                  }});

  std::vector<std::size_t> map(t.sample_count(), 0);
  for (std::size_t s = 0; s < t.sample_count(); ++s) {
    double best = -1.0;
    for (std::size_t k = 0; k < K; ++k)
      if (t.theta_sample_mass(k, s) > best) {
        best = t.theta_sample_mass(k, s);
        map[s] = k;
      }
  }
  pool.push_back({"plug_in_map", [fam, x2s, map](std::size_t s, std::size_t i) {
                    return estimate_from_pmf(detail::plug_in_pmf(*fam, map[s], i), x2s);
                  }});

  for (std::size_t k = 0; k < K; ++k)
    pool.push_back({"plug_in(" + format_number(fam->thetas()[k]) + ")", [fam, x2s, k](std::size_t, std::size_t i) {
                      return estimate_from_pmf(detail::plug_in_pmf(*fam, k, i), x2s);
                    }});

  for (std::size_t j = 0; j < J && pool.size() < size; ++j)
    for (double sign : {1.0, -1.0}) {
      if (pool.size() >= size)
        break;
      pool.push_back({"shift(" + std::to_string(j) + (sign > 0 ? ",+" : ",-") + ")",
                      [bayes, x2s, j, sign](std::size_t s, std::size_t i) {
                        auto p = (*bayes)[s][i].pmf;
                        p[j] += 0.05 * sign;
                        return estimate_from_pmf(detail::clamp_renormalize(p), x2s);
                      }});
    }

  for (std::size_t r = 0; pool.size() < size; ++r) {
    const std::uint64_t key = detail::splitmix(seed ^ detail::splitmix(r));
    pool.push_back({"random(" + std::to_string(r) + ")", [bayes, x2s, key, J](std::size_t s, std::size_t i) {
                      auto p = (*bayes)[s][i].pmf;
                      for (std::size_t j = 0; j < J; ++j) {
                        const std::uint64_t h = detail::splitmix(key ^ detail::splitmix((s * 64 + i) * 64 + j));
                        p[j] += (h & 1u) ? 0.05 : -0.05;
                      }
                      return estimate_from_pmf(detail::clamp_renormalize(p), x2s);
                    }});
  }
  return pool;
}

//! True when `c` differs from the reference on some positive-mass (x', x1) in
//! the output that `loss` scores.
inline bool differs_on_positive_mass(const JointTable& t, const DiscreteEstimator& ref, const DiscreteEstimator& c,
                                     LossKind loss, double tol = 1e-12)
{
  for (std::size_t s = 0; s < t.sample_count(); ++s)
    for (std::size_t i = 0; i < t.x1_count(); ++i) {
      double m = 0.0;
      for (std::size_t k = 0; k < t.theta_count(); ++k)
        m += t.theta_sample_x1_mass(k, s, i);
      if (!(m > 0.0))
        continue;
      const DiscreteEstimate a = ref(s, i), b = c(s, i);
      if (loss == LossKind::sq_error_regression) {
        if (std::abs(a.regression - b.regression) > tol)
          return true;
        continue;
      }
      for (std::size_t j = 0; j < a.pmf.size(); ++j)
        if (std::abs(a.pmf[j] - b.pmf[j]) > tol)
          return true;
    }
  return false;
}

} // namespace ppbayes
