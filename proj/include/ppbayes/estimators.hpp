#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "core.hpp"
#include "integrate.hpp"
#include "models.hpp"
#include "posterior.hpp"
#include "predictive.hpp"

namespace ppbayes {

//! An estimate of the conditional law of X2 given X1, fitted to one sample x'.
class ConditionalEstimate
{
public:
  virtual ~ConditionalEstimate() = default;

  //! Density (or probability function, on finite Ω2) of X2 at x2 given X1 = x1.
  virtual double density(double x1, double x2) const = 0;
  virtual double cdf(double x1, double t) const = 0;
  virtual double regression(double x1) const = 0;
  //! Rough location/scale of the estimated conditional law.
  virtual ScaleHint scale(double x1) const = 0;
};

enum class Engine
{
  automatic,
  closed_form,
  numeric
};

//==============================================================================
// Concrete estimates
//==============================================================================

//! The true conditional objects of the model at a fixed θ.
class PluginEstimate : public ConditionalEstimate
{
public:
  PluginEstimate(std::shared_ptr<const ModelFamily> model, double theta)
    : model_(std::move(model)), theta_(theta)
  {
    model_->check_param(theta_);
  }

  double theta() const { return theta_; }
  double density(double x1, double x2) const override { return model_->conditional_density(theta_, x1, x2); }
  double cdf(double x1, double t) const override { return model_->conditional_cdf(theta_, x1, t); }
  double regression(double x1) const override { return model_->regression(theta_, x1); }
  ScaleHint scale(double x1) const override { return model_->x2_scale(theta_, x1); }

private:
  std::shared_ptr<const ModelFamily> model_;
  double theta_;
};

//! Bayes estimates evaluated by quadrature against the posterior.
class NumericBayesEstimate : public ConditionalEstimate
{
public:
  explicit NumericBayesEstimate(PredictiveEvaluator ev) : ev_(std::move(ev)) {}

  const PredictiveEvaluator& evaluator() const { return ev_; }
  double density(double x1, double x2) const override
  {
    if (!ev_.model().x2_support().contains(x2))
      return 0.0;
    return ev_.conditional_density_estimate(x1, x2);
  }
  double cdf(double x1, double t) const override { return ev_.conditional_cdf_estimate(x1, t); }
  double regression(double x1) const override { return ev_.regression_estimate(x1); }
  ScaleHint scale(double x1) const override { return ev_.x2_hint(x1); }

private:
  PredictiveEvaluator ev_;
};

class GammaClosedFormEstimate : public ConditionalEstimate
{
public:
  GammaClosedFormEstimate(SampleBatch sample, double lambda) : sample_(std::move(sample)), lambda_(lambda)
  {
    GammaExpFamily(lambda_).check_sample(sample_);
  }

  double density(double x1, double x2) const override
  {
    if (!(x2 >= 0.0))
      return 0.0;
    return gamma_conditional_density_cf(sample_, x1, x2, lambda_);
  }
  double cdf(double x1, double t) const override { return gamma_conditional_cdf_cf(sample_, x1, t, lambda_); }
  double regression(double x1) const override { return gamma_regression_cf(sample_, x1, lambda_); }
  ScaleHint scale(double x1) const override
  {
    const double k = 2.0 * static_cast<double>(sample_.size()) + 2.0;
    return {0.0, gamma_a_n(sample_, x1, lambda_) / (k * x1)};
  }

private:
  SampleBatch sample_;
  double lambda_;
};

class CoinClosedFormEstimate : public ConditionalEstimate
{
public:
  explicit CoinClosedFormEstimate(SampleBatch sample) : sample_(std::move(sample)) { coin_counts(sample_); }

  double density(double x1, double x2) const override
  {
    if (x2 != 0.0 && x2 != 1.0)
      return 0.0;
    return coin_conditional_pf_cf(sample_, x1, x2);
  }
  double cdf(double x1, double t) const override
  {
    if (t < 0.0)
      return 0.0;
    return t < 1.0 ? coin_conditional_pf_cf(sample_, x1, 0.0) : 1.0;
  }
  double regression(double x1) const override { return coin_regression_cf(sample_, x1); }
  ScaleHint scale(double) const override { return {0.5, 0.5}; }

private:
  SampleBatch sample_;
};

class NormalClosedFormEstimate : public ConditionalEstimate
{
public:
  NormalClosedFormEstimate(const SampleBatch& sample, const BivariateNormalFamily& fam)
    : params_(normal_predictive_params(sample, fam.sigma(), fam.rho(), fam.mu(), fam.tau()))
  {}

  const NormalPredictiveParams& params() const { return params_; }
  double density(double x1, double x2) const override
  {
    const auto c = normal_conditional_cf(params_, x1);
    const double z = x2 - c.mean;
    return std::exp(-0.5 * z * z / c.variance) / std::sqrt(2.0 * M_PI * c.variance);
  }
  double cdf(double x1, double t) const override
  {
    const auto c = normal_conditional_cf(params_, x1);
    return 0.5 * std::erfc(-(t - c.mean) / std::sqrt(2.0 * c.variance));
  }
  double regression(double x1) const override { return normal_conditional_cf(params_, x1).mean; }
  ScaleHint scale(double x1) const override
  {
    const auto c = normal_conditional_cf(params_, x1);
    return {c.mean, std::sqrt(c.variance)};
  }

private:
  NormalPredictiveParams params_;
};

//! A base estimate moved by ε: location shift of the density and CDF on
//! continuous Ω2, exponential tilt p(k)·e^{εk} on finite Ω2; regression + ε.
class PerturbedEstimate : public ConditionalEstimate
{
public:
  PerturbedEstimate(std::unique_ptr<ConditionalEstimate> base, double eps, Support x2_support)
    : base_(std::move(base)), eps_(eps), x2_(std::move(x2_support))
  {}

  double density(double x1, double x2) const override
  {
    if (eps_ == 0.0)
      return base_->density(x1, x2);
    if (x2_.is_finite()) {
      if (!x2_.contains(x2))
        return 0.0;
      return base_->density(x1, x2) * std::exp(eps_ * x2) / tilt_norm(x1);
    }
    const double y = x2 - eps_;
    if (!x2_.contains(y))
      return 0.0;
    return base_->density(x1, y);
  }

  double cdf(double x1, double t) const override
  {
    if (eps_ == 0.0)
      return base_->cdf(x1, t);
    if (x2_.is_finite()) {
      CompensatedSum s;
      for (double v : x2_.points())
        if (v <= t)
          s += density(x1, v);
      return std::min(1.0, s.value());
    }
    return base_->cdf(x1, t - eps_);
  }

  double regression(double x1) const override { return base_->regression(x1) + eps_; }
  ScaleHint scale(double x1) const override
  {
    auto h = base_->scale(x1);
    h.center += eps_;
    return h;
  }

private:
  double tilt_norm(double x1) const
  {
    CompensatedSum s;
    for (double v : x2_.points())
      s += base_->density(x1, v) * std::exp(eps_ * v);
    return s.value();
  }

  std::unique_ptr<ConditionalEstimate> base_;
  double eps_;
  Support x2_;
};

//==============================================================================
// Fitting
//==============================================================================

//! True when the family has closed-form Bayes estimates for this prior.
inline bool has_closed_form(const ModelFamily& model, const PriorSpec& prior)
{
  if (auto g = dynamic_cast<const GammaExpFamily*>(&model))
    return prior.kind() == PriorSpec::Kind::gamma && prior.shape() == 1.0 &&
           std::abs(prior.scale() - 1.0 / g->lambda()) <= 1e-15 * prior.scale();
  if (dynamic_cast<const CoinPairFamily*>(&model))
    return prior.kind() == PriorSpec::Kind::uniform01;
  if (auto n = dynamic_cast<const BivariateNormalFamily*>(&model))
    return prior.kind() == PriorSpec::Kind::normal && prior.normal_mean() == n->mu() &&
           std::abs(prior.normal_variance() - n->tau() * n->tau()) <= 1e-15 * prior.normal_variance();
  return false;
}

//! The Bayes estimates (posterior predictive conditional) given x'.
inline std::unique_ptr<ConditionalEstimate> fit_bayes(std::shared_ptr<const ModelFamily> model,
                                                      const PriorSpec& prior, const SampleBatch& sample,
                                                      Engine engine = Engine::automatic,
                                                      const QuadratureSettings& settings = {})
{
  if (prior.is_finite() && prior.points().size() == 1 && engine != Engine::closed_form) {
    model->check_sample(sample);
    if (!(joint_sample_density(*model, prior.points()[0], sample) > 0.0))
      throw ImpossibleSampleError(model->name() + ": sample has zero likelihood at the prior's only point");
    return std::make_unique<PluginEstimate>(model, prior.points()[0]);
  }
  const bool closed = has_closed_form(*model, prior);
  if (engine == Engine::closed_form && !closed)
    throw std::invalid_argument(model->name() + " with prior " + prior.describe() + " has no closed form");
  if (closed && engine != Engine::numeric) {
    if (auto g = dynamic_cast<const GammaExpFamily*>(model.get()))
      return std::make_unique<GammaClosedFormEstimate>(sample, g->lambda());
    if (dynamic_cast<const CoinPairFamily*>(model.get()))
      return std::make_unique<CoinClosedFormEstimate>(sample);
    if (auto n = dynamic_cast<const BivariateNormalFamily*>(model.get())) {
      n->check_sample(sample);
      return std::make_unique<NormalClosedFormEstimate>(sample, *n);
    }
  }
  return std::make_unique<NumericBayesEstimate>(make_evaluator(std::move(model), prior, sample, settings));
}

//! θ̂ maximizing f_{n,θ}(x'): golden-section search over the (truncated) prior support.
inline double maximum_likelihood(const ModelFamily& model, const PriorSpec& prior, const SampleBatch& sample)
{
  if (sample.empty())
    throw std::invalid_argument("maximum likelihood needs at least one observation");
  model.check_sample(sample);
  if (prior.is_finite()) {
    double best = prior.points()[0], bl = -kInf;
    for (double t : prior.points()) {
      const double l = detail::log_likelihood(model, t, sample);
      if (l > bl) {
        bl = l;
        best = t;
      }
    }
    if (std::isinf(bl))
      throw ImpossibleSampleError(model.name() + ": no parameter gives the sample positive likelihood");
    return best;
  }
  QuadratureSettings s;
  auto [lo, hi] = prior_integration_interval(prior, s);
  const Support ps = model.param_support();
  auto ll = [&](double t) { return ps.contains(t) ? detail::log_likelihood(model, t, sample) : -kInf; };
  // a coarse scan brackets the mode before the golden-section refinement
  const int grid = 200;
  int arg = 0;
  double best = -kInf;
  for (int i = 0; i <= grid; ++i) {
    const double l = ll(lo + (hi - lo) * i / grid);
    if (l > best) {
      best = l;
      arg = i;
    }
  }
  if (std::isinf(best))
    throw ImpossibleSampleError(model.name() + ": likelihood search found no admissible parameter");
  const double a = lo + (hi - lo) * std::max(0, arg - 1) / grid;
  const double b = lo + (hi - lo) * std::min(grid, arg + 1) / grid;
  const double t = golden_section_maximize(ll, a, b);
  if (!ps.contains(t) || !std::isfinite(ll(t)))
    throw IntegrationError(model.name() + ": likelihood search failed");
  return t;
}

//! A named way of turning a sample x' into conditional estimates.
struct EstimatorSpec
{
  std::string id;
  std::function<std::unique_ptr<ConditionalEstimate>(const SampleBatch&)> fit;
};

inline EstimatorSpec bayes_estimator(std::shared_ptr<const ModelFamily> model, PriorSpec prior,
                                     Engine engine = Engine::automatic, QuadratureSettings settings = {})
{
  return {"bayes", [=](const SampleBatch& x) { return fit_bayes(model, prior, x, engine, settings); }};
}

inline EstimatorSpec plug_in_posterior_mean(std::shared_ptr<const ModelFamily> model, PriorSpec prior,
                                            QuadratureSettings settings = {})
{
  return {"plug_in_posterior_mean", [=](const SampleBatch& x) -> std::unique_ptr<ConditionalEstimate> {
            const double m = build_posterior(model, prior, x, settings).mean();
            return std::make_unique<PluginEstimate>(model, m);
          }};
}

inline EstimatorSpec plug_in_mle(std::shared_ptr<const ModelFamily> model, PriorSpec prior)
{
  return {"plug_in_mle", [=](const SampleBatch& x) -> std::unique_ptr<ConditionalEstimate> {
            return std::make_unique<PluginEstimate>(model, maximum_likelihood(*model, prior, x));
          }};
}

inline EstimatorSpec prior_predictive(std::shared_ptr<const ModelFamily> model, PriorSpec prior,
                                      Engine engine = Engine::automatic, QuadratureSettings settings = {})
{
  // the n = 0 Bayes estimate does not depend on x'
  std::shared_ptr<const ConditionalEstimate> fixed = fit_bayes(model, prior, {}, engine, settings);
  struct Shared : ConditionalEstimate
  {
    std::shared_ptr<const ConditionalEstimate> e;
    double density(double a, double b) const override { return e->density(a, b); }
    double cdf(double a, double t) const override { return e->cdf(a, t); }
    double regression(double a) const override { return e->regression(a); }
    ScaleHint scale(double a) const override { return e->scale(a); }
  };
  return {"prior_predictive", [=](const SampleBatch& x) -> std::unique_ptr<ConditionalEstimate> {
            model->check_sample(x);
            auto s = std::make_unique<Shared>();
            s->e = fixed;
            return s;
          }};
}

inline EstimatorSpec perturbed_bayes(std::shared_ptr<const ModelFamily> model, PriorSpec prior, double eps,
                                     Engine engine = Engine::automatic, QuadratureSettings settings = {})
{
  return {"perturbed_bayes(" + format_number(eps, 6) + ")",
          [=](const SampleBatch& x) -> std::unique_ptr<ConditionalEstimate> {
            return std::make_unique<PerturbedEstimate>(fit_bayes(model, prior, x, engine, settings), eps,
                                                       model->x2_support());
          }};
}

//! Competitor by name: plug_in_posterior_mean, plug_in_mle, prior_predictive, perturbed_bayes(ε).
inline EstimatorSpec competitor(const std::string& kind, std::shared_ptr<const ModelFamily> model, PriorSpec prior,
                                Engine engine = Engine::automatic)
{
  if (kind == "bayes")
    return bayes_estimator(model, prior, engine);
  if (kind == "plug_in_posterior_mean")
    return plug_in_posterior_mean(model, prior);
  if (kind == "plug_in_mle")
    return plug_in_mle(model, prior);
  if (kind == "prior_predictive")
    return prior_predictive(model, prior, engine);
  const std::string head = "perturbed_bayes(";
  if (kind.rfind(head, 0) == 0 && kind.back() == ')') {
    const std::string arg = kind.substr(head.size(), kind.size() - head.size() - 1);
    std::size_t used = 0;
    double eps = 0.0;
    try {
      eps = std::stod(arg, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == arg.size() && !arg.empty() && std::isfinite(eps))
      return perturbed_bayes(model, prior, eps, engine);
  }
  throw std::invalid_argument("unknown estimator '" + kind + "'");
}

} // namespace ppbayes
