#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "core.hpp"

namespace ppbayes {

struct QuadratureSettings
{
  //! Total Gauss–Legendre nodes per pass, split evenly across the panels.
  int node_count = 257;
  int panel_count = 8;
  double abs_tol = 1e-10;
  double rel_tol = 1e-8;
  //! Prior tail mass dropped (per tail) when truncating an unbounded domain.
  double truncation_mass = 1e-12;

  //! Maximum number of panel doublings before a result is flagged.
  static constexpr int max_refinements = 6;

  void validate() const
  {
    if (node_count < 3)
      throw std::invalid_argument("node_count must be >= 3");
    if (panel_count < 1)
      throw std::invalid_argument("panel_count must be >= 1");
    if (!(abs_tol > 0.0) || !(rel_tol > 0.0))
      throw std::invalid_argument("tolerances must be > 0");
    if (!(truncation_mass > 0.0) || !(truncation_mass < 1e-6))
      throw std::invalid_argument("truncation_mass must lie in (0, 1e-6)");
  }

  int nodes_per_panel() const { return std::max(3, node_count / panel_count); }
};

struct IntegralResult
{
  double value = 0.0;
  double error = 0.0;
  //! False when rel_tol was not met after the maximum panel doubling.
  bool converged = true;
  int panels = 0;
};

//==============================================================================
// Gauss–Legendre rules
//==============================================================================

struct GaussLegendreRule
{
  std::vector<double> nodes;   // on (-1, 1), ascending
  std::vector<double> weights;
};

namespace detail {

inline GaussLegendreRule compute_gauss_legendre(int n)
{
  GaussLegendreRule rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1.0, p2 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
      }
      pp = n * (z * p1 - p2) / (z * z - 1.0);
      const double dz = p1 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-16)
        break;
    }
    const double w = 2.0 / ((1.0 - z * z) * pp * pp);
    rule.nodes[static_cast<std::size_t>(i)] = -z;
    rule.nodes[static_cast<std::size_t>(n - 1 - i)] = z;
    rule.weights[static_cast<std::size_t>(i)] = w;
    rule.weights[static_cast<std::size_t>(n - 1 - i)] = w;
  }
  return rule;
}

} // namespace detail

//! Cached n-point rule on [-1, 1].
inline const GaussLegendreRule& gauss_legendre(int n)
{
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<GaussLegendreRule>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[n];
  if (!slot)
    slot = std::make_unique<GaussLegendreRule>(detail::compute_gauss_legendre(n));
  return *slot;
}

//==============================================================================
// One-dimensional search
//==============================================================================

//! Maximizer of a unimodal function on [lo, hi] by golden-section search.
template <class F>
double golden_section_maximize(F&& f, double lo, double hi, double tol = 1e-12, int max_iter = 400)
{
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double c = b - g * (b - a);
  double d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < max_iter && (b - a) > tol * (1.0 + std::abs(a) + std::abs(b)); ++it) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  const double x = 0.5 * (a + b);
  double best = x, fbest = f(x);
  for (double cand : {lo, hi}) {
    const double fv = f(cand);
    if (fv > fbest) {
      fbest = fv;
      best = cand;
    }
  }
  return best;
}

//! Location and spread of a sharp peak of a log-integrand.
struct PeakHint
{
  double location = 0.0;
  double sd = 0.0;
};

//! Locate the maximum of `log_f` on [lo, hi] and its curvature scale.
template <class F>
std::optional<PeakHint> find_log_peak(F&& log_f, double lo, double hi)
{
  if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi))
    return std::nullopt;
  const double x = golden_section_maximize(log_f, lo, hi);
  const double fx = log_f(x);
  if (!std::isfinite(fx))
    return std::nullopt;
  const double width = hi - lo;
  const bool at_boundary = (x - lo) < 1e-9 * width || (hi - x) < 1e-9 * width;
  if (at_boundary) {
    // one-sided: the log-integrand falls off linearly into the interior
    const double h = 1e-6 * width;
    const double inner = x - lo < hi - x ? x + h : x - h;
    const double slope = std::abs(log_f(inner) - fx) / h;
    if (!std::isfinite(slope) || slope <= 0.0)
      return std::nullopt;
    return PeakHint{x, 1.0 / slope};
  }
  double h = 1e-3 * width;
  double sd = 0.0;
  for (int pass = 0; pass < 3; ++pass) {
    h = std::min({h, 0.5 * (x - lo), 0.5 * (hi - x)});
    const double d2 = (log_f(x + h) - 2.0 * fx + log_f(x - h)) / (h * h);
    if (!std::isfinite(d2) || d2 >= 0.0)
      return std::nullopt;
    sd = 1.0 / std::sqrt(-d2);
    h = 1e-2 * sd;
  }
  return PeakHint{x, sd};
}

//==============================================================================
// Parameter-space quadrature
//==============================================================================

//! A quadrature node for an integral against a measure on Θ.
struct WeightedNode
{
  double theta = 0.0;
  double weight = 0.0;
};

//! The bounded interval carrying all but `truncation_mass` (per tail) of Q.
inline std::pair<double, double> prior_integration_interval(const PriorSpec& prior,
                                                            const QuadratureSettings& settings)
{
  switch (prior.kind()) {
    case PriorSpec::Kind::gamma:
      return {0.0, prior.quantile(1.0 - settings.truncation_mass)};
    case PriorSpec::Kind::normal:
      return {prior.quantile(settings.truncation_mass), prior.quantile(1.0 - settings.truncation_mass)};
    case PriorSpec::Kind::uniform01:
      return {0.0, 1.0};
    case PriorSpec::Kind::finite:
      break;
  }
  throw std::logic_error("finite priors have no integration interval");
}

//! Panel breakpoints for Θ-integrals: uniform panels over the truncated prior
//! interval, plus boundaries at peak and peak ± 6 sd when a peak is given.
inline std::vector<double> theta_breakpoints(const PriorSpec& prior, const QuadratureSettings& settings,
                                             const std::optional<PeakHint>& peak = std::nullopt)
{
  auto [lo, hi] = prior_integration_interval(prior, settings);
  const Support support = prior.support();
  std::vector<double> extra;
  if (peak && peak->sd > 0.0) {
    for (double k : {-6.0, 0.0, 6.0}) {
      double b = peak->location + k * peak->sd;
      b = std::clamp(b, support.lo(), support.hi());
      extra.push_back(b);
    }
    lo = std::min(lo, extra.front());
    hi = std::max(hi, extra.back());
  }
  std::vector<double> bp;
  for (int i = 0; i < settings.panel_count; ++i)
    bp.push_back(lo + (hi - lo) * i / settings.panel_count);
  bp.push_back(hi);
  bp.insert(bp.end(), extra.begin(), extra.end());
  std::sort(bp.begin(), bp.end());
  std::vector<double> out;
  const double eps = 1e-12 * (hi - lo);
  for (double b : bp) {
    if (b < lo || b > hi)
      continue;
    if (out.empty() || b - out.back() > eps)
      out.push_back(b);
  }
  out.back() = hi;
  return out;
}

//! Nodes for ∫ g dQ: each breakpoint segment split into 2^level panels.
inline std::vector<WeightedNode> theta_rule(const PriorSpec& prior, std::span<const double> breakpoints,
                                            int level, int nodes_per_panel)
{
  std::vector<WeightedNode> out;
  if (prior.is_finite()) {
    for (std::size_t i = 0; i < prior.points().size(); ++i)
      out.push_back({prior.points()[i], prior.weights()[i]});
    return out;
  }
  const auto& gl = gauss_legendre(nodes_per_panel);
  const int split = 1 << level;
  for (std::size_t s = 0; s + 1 < breakpoints.size(); ++s) {
    const double a = breakpoints[s], b = breakpoints[s + 1];
    const double h = (b - a) / split;
    for (int p = 0; p < split; ++p) {
      const double pa = a + p * h;
      const double half = 0.5 * h, mid = pa + half;
      for (std::size_t k = 0; k < gl.nodes.size(); ++k) {
        const double theta = mid + half * gl.nodes[k];
        const double w = half * gl.weights[k] * prior.density(theta);
        if (w > 0.0)
          out.push_back({theta, w});
      }
    }
  }
  return out;
}

namespace detail {

inline bool within_tolerance(double fine, double coarse, const QuadratureSettings& s)
{
  return std::abs(fine - coarse) <= std::max(s.abs_tol, s.rel_tol * std::abs(fine));
}

template <class G>
double sum_rule(G& g, std::span<const WeightedNode> nodes)
{
  CompensatedSum sum;
  for (const auto& nd : nodes) {
    const double v = g(nd.theta);
    if (!std::isfinite(v))
      throw IntegrationError("non-finite integrand value " + format_number(v) + " at theta=" +
                             format_number(nd.theta));
    sum += nd.weight * v;
  }
  return sum.value();
}

} // namespace detail

//! ∫ g(θ) dQ(θ). Exact weighted sum for finite priors; composite
//! Gauss–Legendre with panel doubling otherwise.
template <class G>
IntegralResult prior_expectation(G&& g, const PriorSpec& prior, const QuadratureSettings& settings,
                                 const std::optional<PeakHint>& peak = std::nullopt)
{
  settings.validate();
  if (prior.is_finite()) {
    auto nodes = theta_rule(prior, {}, 0, 0);
    return {detail::sum_rule(g, nodes), 0.0, true, 0};
  }
  const auto bp = theta_breakpoints(prior, settings, peak);
  const int npp = settings.nodes_per_panel();
  double prev = detail::sum_rule(g, theta_rule(prior, bp, 0, npp));
  IntegralResult r{prev, kInf, false, static_cast<int>(bp.size() - 1)};
  for (int level = 1; level <= QuadratureSettings::max_refinements; ++level) {
    const double cur = detail::sum_rule(g, theta_rule(prior, bp, level, npp));
    r = {cur, std::abs(cur - prev), detail::within_tolerance(cur, prev, settings),
         static_cast<int>(bp.size() - 1) << level};
    if (r.converged)
      break;
    prev = cur;
  }
  return r;
}

//==============================================================================
// Observation-space quadrature
//==============================================================================

namespace detail {

// t = c + s·u/(1-u²) maps (-1, 1) monotonically onto the real line.
inline double phi(double u) { return u / (1.0 - u * u); }
inline double phi_jacobian(double u)
{
  const double d = 1.0 - u * u;
  return (1.0 + u * u) / (d * d);
}
inline double phi_inverse(double y)
{
  if (y == kInf)
    return 1.0;
  if (y == -kInf)
    return -1.0;
  if (y == 0.0)
    return 0.0;
  return 2.0 * y / (1.0 + std::sqrt(1.0 + 4.0 * y * y));
}

} // namespace detail

//! ∫_lo^hi f(t) dt. Unbounded or very wide domains are mapped through
//! t = c + s·u/(1-u²), with (c, s) from `hint`.
template <class F>
IntegralResult line_integral(F&& f, double lo, double hi, const QuadratureSettings& settings,
                             std::optional<ScaleHint> hint = std::nullopt)
{
  settings.validate();
  if (!(hi > lo))
    return {0.0, 0.0, true, 0};
  const bool bounded = std::isfinite(lo) && std::isfinite(hi);
  if (!hint) {
    ScaleHint h;
    h.center = std::isfinite(lo) ? lo : (std::isfinite(hi) ? hi : 0.0);
    hint = h;
  }
  const double c = hint->center;
  const double s = hint->scale > 0.0 ? hint->scale : 1.0;
  const bool transformed = !bounded || (hi - lo) > 50.0 * s;

  double a, b;
  if (transformed) {
    a = detail::phi_inverse((lo - c) / s);
    b = detail::phi_inverse((hi - c) / s);
  } else {
    a = lo;
    b = hi;
  }

  const auto& gl = gauss_legendre(settings.nodes_per_panel());
  auto pass = [&](int panels) {
    CompensatedSum sum;
    const double h = (b - a) / panels;
    for (int p = 0; p < panels; ++p) {
      const double half = 0.5 * h, mid = a + p * h + half;
      for (std::size_t k = 0; k < gl.nodes.size(); ++k) {
        const double u = mid + half * gl.nodes[k];
        double t = u, jac = 1.0;
        if (transformed) {
          t = c + s * detail::phi(u);
          jac = s * detail::phi_jacobian(u);
        }
        const double v = f(t);
        if (!std::isfinite(v))
          throw IntegrationError("non-finite integrand value " + format_number(v) + " at t=" +
                                 format_number(t));
        if (v != 0.0)
          sum += half * gl.weights[k] * jac * v;
      }
    }
    return sum.value();
  };

  int panels = settings.panel_count;
  double prev = pass(panels);
  IntegralResult r{prev, kInf, false, panels};
  for (int level = 1; level <= QuadratureSettings::max_refinements; ++level) {
    panels *= 2;
    const double cur = pass(panels);
    r = {cur, std::abs(cur - prev), detail::within_tolerance(cur, prev, settings), panels};
    if (r.converged)
      break;
    prev = cur;
  }
  return r;
}

} // namespace ppbayes
