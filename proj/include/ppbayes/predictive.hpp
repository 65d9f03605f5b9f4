#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "core.hpp"
#include "integrate.hpp"
#include "posterior.hpp"

namespace ppbayes {

//! A measurable subset of Ω2: a union of at most 16 disjoint closed intervals,
//! or a finite point set.
class Event
{
public:
  static constexpr std::size_t max_intervals = 16;

  static Event intervals(std::vector<std::pair<double, double>> spans)
  {
    if (spans.size() > max_intervals)
      throw std::invalid_argument("an event holds at most 16 intervals");
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 0; i < spans.size(); ++i) {
      if (std::isnan(spans[i].first) || std::isnan(spans[i].second) || spans[i].first > spans[i].second)
        throw std::invalid_argument("event interval must satisfy lo <= hi");
      if (i > 0 && spans[i].first <= spans[i - 1].second)
        throw std::invalid_argument("event intervals must be disjoint");
    }
    Event e;
    e.spans_ = std::move(spans);
    return e;
  }

  static Event points(std::vector<double> pts)
  {
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    Event e;
    e.is_points_ = true;
    e.points_ = std::move(pts);
    return e;
  }

  static Event everything() { return intervals({{-kInf, kInf}}); }
  //! (-∞, t].
  static Event at_most(double t) { return intervals({{-kInf, t}}); }

  bool is_points() const { return is_points_; }
  const std::vector<std::pair<double, double>>& spans() const { return spans_; }
  const std::vector<double>& point_list() const { return points_; }

  bool contains(double x) const
  {
    if (is_points_)
      return std::binary_search(points_.begin(), points_.end(), x);
    for (const auto& [a, b] : spans_)
      if (x >= a && x <= b)
        return true;
    return false;
  }

private:
  bool is_points_ = false;
  std::vector<std::pair<double, double>> spans_;
  std::vector<double> points_;
};

struct CdfEstimate
{
  double value = 0.0;
  //! Distance the raw value lay outside [0, 1] before clipping.
  double clip_deviation = 0.0;
};

//! The posterior predictive distribution on Ω1×Ω2 and the Bayes estimators of
//! the conditional distribution, density, distribution function and regression
//! curve derived from it.
class PredictiveEvaluator
{
public:
  explicit PredictiveEvaluator(PosteriorRep posterior)
    : posterior_(std::move(posterior)), settings_(posterior_.settings())
  {}

  const PosteriorRep& posterior() const { return posterior_; }
  const ModelFamily& model() const { return posterior_.model(); }
  const QuadratureSettings& settings() const { return settings_; }

  //! f*_{n,x'}(x1, x2) = ∫ f_θ(x1, x2) r*(θ) dQ(θ).
  double predictive_joint_density(double x1, double x2) const
  {
    check_x1(x1);
    const auto& m = model();
    return posterior_.expectation([&](double t) { return m.joint_density(t, x1, x2); });
  }

  //! f*_{n,x',1}(x1), with the x2-integral taken inside via the model's marginal.
  double predictive_marginal1(double x1) const
  {
    check_x1(x1);
    const auto& m = model();
    return posterior_.expectation([&](double t) { return m.marginal1_density(t, x1); });
  }

  double conditional_density_estimate(double x1, double x2) const
  {
    const double marg = conditioning_marginal(x1);
    return predictive_joint_density(x1, x2) / marg;
  }

  CdfEstimate conditional_cdf_estimate_detail(double x1, double t) const
  {
    double raw;
    if (model().x2_support().is_finite()) {
      const auto pmf = conditional_pmf(x1);
      const Support s2 = model().x2_support();
      const auto& pts = s2.points();
      CompensatedSum s;
      for (std::size_t j = 0; j < pts.size() && pts[j] <= t; ++j)
        s += pmf[j];
      raw = s.value();
    } else {
      // mixture of the true conditional CDFs with weights ∝ r*(θ)·f_θ,1(x1)
      const double marg = conditioning_marginal(x1);
      const auto& m = model();
      raw = posterior_.expectation(
              [&](double th) { return m.marginal1_density(th, x1) * m.conditional_cdf(th, x1, t); }) /
            marg;
    }
    CdfEstimate out;
    out.value = std::clamp(raw, 0.0, 1.0);
    out.clip_deviation = std::abs(raw - out.value);
    return out;
  }

  //! F*_n(x', x1, t), clipped to [0, 1].
  double conditional_cdf_estimate(double x1, double t) const { return conditional_cdf_estimate_detail(x1, t).value; }

  //! m*_n(x', x1) = ∫ x2 f*(x1, x2) dx2 / ∫ f*(x1, x2) dx2.
  double regression_estimate(double x1) const
  {
    conditioning_marginal(x1);
    const Support s2 = model().x2_support();
    if (s2.is_finite()) {
      const auto pmf = conditional_pmf(x1);
      CompensatedSum s;
      for (std::size_t j = 0; j < pmf.size(); ++j)
        s += s2.points()[j] * pmf[j];
      return s.value();
    }
    const ScaleHint hint = x2_hint(x1);
    check_tail_growth(x1, hint, s2);
    auto num = line_integral([&](double t) { return t * predictive_joint_density(x1, t); }, s2.lo(), s2.hi(),
                             settings_, hint);
    auto den = line_integral([&](double t) { return predictive_joint_density(x1, t); }, s2.lo(), s2.hi(),
                             settings_, hint);
    return num.value / den.value;
  }

  //! M*_n(x', x1, A2).
  double conditional_probability_estimate(double x1, const Event& event) const
  {
    const Support s2 = model().x2_support();
    if (s2.is_finite()) {
      const auto pmf = conditional_pmf(x1);
      CompensatedSum s;
      for (std::size_t j = 0; j < pmf.size(); ++j)
        if (event.contains(s2.points()[j]))
          s += pmf[j];
      return std::clamp(s.value(), 0.0, 1.0);
    }
    const double marg = conditioning_marginal(x1);
    if (event.is_points())
      return 0.0;
    const ScaleHint hint = x2_hint(x1);
    CompensatedSum s;
    for (const auto& [a, b] : event.spans()) {
      const double lo = std::max(a, s2.lo()), hi = std::min(b, s2.hi());
      if (!(hi > lo))
        continue;
      s += line_integral([&](double t) { return predictive_joint_density(x1, t); }, lo, hi, settings_, hint).value;
    }
    return std::clamp(s.value() / marg, 0.0, 1.0);
  }

  //! Conditional probability function over the finite x2 support points.
  std::vector<double> conditional_pmf(double x1) const
  {
    const Support s2 = model().x2_support();
    if (!s2.is_finite())
      throw std::logic_error("conditional_pmf requires a finite x2 support");
    const double marg = conditioning_marginal(x1);
    std::vector<double> out;
    out.reserve(s2.points().size());
    for (double v : s2.points())
      out.push_back(predictive_joint_density(x1, v) / marg);
    return out;
  }

  //! Placement of x2 quadrature: the model's conditional scale at the posterior mean.
  ScaleHint x2_hint(double x1) const
  {
    const double theta = posterior_.mean();
    if (model().param_support().contains(theta))
      return model().x2_scale(theta, x1);
    return {};
  }

  std::vector<double> regression_curve(std::span<const double> x1s, unsigned workers = 1) const
  {
    std::vector<double> out(x1s.size());
    parallel_for(x1s.size(), workers, [&](std::size_t i) { out[i] = regression_estimate(x1s[i]); });
    return out;
  }

  //! ∫∫ f*(x1, x2) as two nested one-dimensional passes.
  double joint_normalization() const
  {
    const Support s1 = model().x1_support(), s2 = model().x2_support();
    auto inner = [&](double x1) {
      if (s2.is_finite()) {
        CompensatedSum s;
        for (double v : s2.points())
          s += predictive_joint_density(x1, v);
        return s.value();
      }
      return line_integral([&](double t) { return predictive_joint_density(x1, t); }, s2.lo(), s2.hi(),
                           settings_, x2_hint(x1))
        .value;
    };
    if (s1.is_finite()) {
      CompensatedSum s;
      for (double v : s1.points())
        s += inner(v);
      return s.value();
    }
    const double theta = posterior_.mean();
    ScaleHint h1{std::isfinite(s1.lo()) ? s1.lo() : theta, 1.0};
    return line_integral(inner, s1.lo(), s1.hi(), settings_, h1).value;
  }

private:
  void check_x1(double x1) const
  {
    if (!model().x1_support().contains(x1))
      throw DomainError(model().name() + ": x1 = " + format_number(x1) + " outside " +
                          model().x1_support().describe(),
                        DomainError::no_index, 1);
  }

  double conditioning_marginal(double x1) const
  {
    const double marg = predictive_marginal1(x1);
    if (!(marg >= settings_.abs_tol))
      throw NullConditioningError(model().name() + ": predictive marginal of x1 = " + format_number(x1) +
                                  " is " + format_number(marg) + ", below abs_tol");
    return marg;
  }

  void check_tail_growth(double x1, const ScaleHint& hint, const Support& s2) const
  {
    const double s = hint.scale > 0.0 ? hint.scale : 1.0;
    for (double dir : {1.0, -1.0}) {
      if ((dir > 0 && std::isfinite(s2.hi())) || (dir < 0 && std::isfinite(s2.lo())))
        continue;
      const double t1 = hint.center + dir * 1e6 * s, t2 = hint.center + dir * 1e8 * s;
      const double g1 = t1 * t1 * predictive_joint_density(x1, t1);
      const double g2 = t2 * t2 * predictive_joint_density(x1, t2);
      if (g1 > 0.0 && g2 >= 0.5 * g1)
        throw NonIntegrableMeanError(model().name() + ": conditional estimate at x1 = " + format_number(x1) +
                                     " has a divergent first moment");
    }
  }

  PosteriorRep posterior_;
  QuadratureSettings settings_;
};

inline PredictiveEvaluator make_evaluator(std::shared_ptr<const ModelFamily> model, PriorSpec prior,
                                          SampleBatch sample, QuadratureSettings settings = {})
{
  return PredictiveEvaluator(build_posterior(std::move(model), std::move(prior), std::move(sample), settings));
}

} // namespace ppbayes
