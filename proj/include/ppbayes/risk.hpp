#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "estimators.hpp"
#include "integrate.hpp"

namespace ppbayes {

enum class LossKind
{
  sq_total_variation,
  sq_l1_density,
  sq_linf_cdf,
  sq_error_regression
};

inline std::string to_string(LossKind k)
{
  switch (k) {
    case LossKind::sq_total_variation:
      return "sq_total_variation";
    case LossKind::sq_l1_density:
      return "sq_L1_density";
    case LossKind::sq_linf_cdf:
      return "sq_Linf_cdf";
    case LossKind::sq_error_regression:
      return "sq_error_regression";
  }
  return "?";
}

inline LossKind parse_loss_kind(const std::string& s)
{
  for (auto k : {LossKind::sq_total_variation, LossKind::sq_l1_density, LossKind::sq_linf_cdf,
                 LossKind::sq_error_regression})
    if (s == to_string(k))
      return k;
  if (s == "tv")
    return LossKind::sq_total_variation;
  if (s == "l1")
    return LossKind::sq_l1_density;
  if (s == "linf")
    return LossKind::sq_linf_cdf;
  if (s == "sq_error" || s == "regression")
    return LossKind::sq_error_regression;
  throw std::invalid_argument("unknown loss '" + s + "'");
}

inline const std::vector<LossKind>& all_losses()
{
  static const std::vector<LossKind> all{LossKind::sq_total_variation, LossKind::sq_l1_density,
                                         LossKind::sq_linf_cdf, LossKind::sq_error_regression};
  return all;
}

//! Quadrature settings used inside losses: coarser than the estimator defaults.
inline QuadratureSettings loss_settings()
{
  QuadratureSettings s;
  s.node_count = 128;
  s.rel_tol = 1e-6;
  return s;
}

using RealFn = std::function<double(double)>;

//==============================================================================
// Losses
//==============================================================================

//! ∫ |p - q| over `domain`; exact sum on finite supports.
inline double l1_distance(const RealFn& p, const RealFn& q, const Support& domain,
                          const QuadratureSettings& settings = loss_settings(),
                          std::optional<ScaleHint> hint = std::nullopt)
{
  if (domain.is_finite()) {
    CompensatedSum s;
    for (double v : domain.points())
      s += std::abs(p(v) - q(v));
    return s.value();
  }
  return line_integral([&](double t) { return std::abs(p(t) - q(t)); }, domain.lo(), domain.hi(), settings, hint)
    .value;
}

//! (sup_A |P(A) - Q(A)|)² through the half-L1 identity.
inline double loss_sq_tv(const RealFn& est_density, const RealFn& true_density, const Support& domain,
                         const QuadratureSettings& settings = loss_settings(),
                         std::optional<ScaleHint> hint = std::nullopt)
{
  const double tv = std::min(1.0, 0.5 * l1_distance(est_density, true_density, domain, settings, hint));
  return tv * tv;
}

inline double loss_sq_l1(const RealFn& est_density, const RealFn& true_density, const Support& domain,
                         const QuadratureSettings& settings = loss_settings(),
                         std::optional<ScaleHint> hint = std::nullopt)
{
  const double d = l1_distance(est_density, true_density, domain, settings, hint);
  return d * d;
}

namespace detail {

//! Smallest t in the support with F(t) >= p, by bracketing then bisection.
inline double cdf_quantile(const RealFn& F, double p, const Support& domain, ScaleHint hint)
{
  const double s = hint.scale > 0.0 ? hint.scale : 1.0;
  double lo = std::isfinite(domain.lo()) ? domain.lo() : hint.center - s;
  double hi = std::isfinite(domain.hi()) ? domain.hi() : hint.center + s;
  for (double step = s; !std::isfinite(domain.lo()) && F(lo) >= p && step < 1e300; step *= 2.0)
    lo = hint.center - step;
  for (double step = s; !std::isfinite(domain.hi()) && F(hi) < p && step < 1e300; step *= 2.0)
    hi = hint.center + step;
  if (!std::isfinite(domain.hi()) && F(hi) < p)
    throw DomainError("invalid distribution function: does not reach " + format_number(p));
  if (F(lo) >= p) {
    if (!std::isfinite(domain.lo()))
      throw DomainError("invalid distribution function: exceeds " + format_number(p) + " everywhere");
    return lo;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-12 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (F(mid) >= p ? hi : lo) = mid;
  }
  return hi;
}

} // namespace detail

//! sup_t |F̂(t) - F(t)|², on a 512-point grid across both laws' [1e-4, 1-1e-4]
//! quantile ranges plus 64 points around the grid argmax.
inline double loss_sq_linf(const RealFn& est_cdf, const RealFn& true_cdf, const Support& domain,
                           ScaleHint est_hint = {}, ScaleHint true_hint = {})
{
  constexpr double tail = 1e-4;
  constexpr int grid = 512, refine = 64;
  constexpr double monotone_slack = 1e-9;
  auto check_monotone = [&](const std::vector<double>& ts) {
    double pe = -kInf, pt = -kInf;
    for (double t : ts) {
      const double e = est_cdf(t), r = true_cdf(t);
      if (e < pe - monotone_slack || r < pt - monotone_slack)
        throw DomainError("invalid distribution function: decreasing at t=" + format_number(t));
      pe = std::max(pe, e);
      pt = std::max(pt, r);
    }
  };
  if (domain.is_finite()) {
    check_monotone(domain.points());
    double best = 0.0;
    for (double v : domain.points())
      best = std::max(best, std::abs(est_cdf(v) - true_cdf(v)));
    return best * best;
  }
  const double a = std::min(detail::cdf_quantile(est_cdf, tail, domain, est_hint),
                            detail::cdf_quantile(true_cdf, tail, domain, true_hint));
  const double b = std::max(detail::cdf_quantile(est_cdf, 1.0 - tail, domain, est_hint),
                            detail::cdf_quantile(true_cdf, 1.0 - tail, domain, true_hint));
  std::vector<double> ts;
  ts.reserve(grid);
  for (int i = 0; i < grid; ++i)
    ts.push_back(b > a ? a + (b - a) * i / (grid - 1) : a);
  check_monotone(ts);
  int arg = 0;
  double best = -1.0;
  for (int i = 0; i < grid; ++i) {
    const double d = std::abs(est_cdf(ts[i]) - true_cdf(ts[i]));
    if (d > best) {
      best = d;
      arg = i;
    }
  }
  const double lo = ts[std::max(0, arg - 1)], hi = ts[std::min(grid - 1, arg + 1)];
  for (int k = 0; k < refine; ++k) {
    const double t = lo + (hi - lo) * (k + 0.5) / refine;
    best = std::max(best, std::abs(est_cdf(t) - true_cdf(t)));
  }
  return best * best;
}

inline double loss_sq_error(double est, double truth)
{
  const double d = est - truth;
  return d * d;
}

//! Loss of `est` against the model's truth at (θ, x1).
inline double evaluate_loss(LossKind kind, const ConditionalEstimate& est, const ModelFamily& model, double theta,
                            double x1)
{
  const Support s2 = model.x2_support();
  auto p = [&](double t) { return est.density(x1, t); };
  auto q = [&](double t) { return model.conditional_density(theta, x1, t); };
  // place the transform on the truth; estimates here are concentrated near it
  const ScaleHint th = model.x2_scale(theta, x1);
  switch (kind) {
    case LossKind::sq_total_variation:
      return loss_sq_tv(p, q, s2, loss_settings(), th);
    case LossKind::sq_l1_density:
      return loss_sq_l1(p, q, s2, loss_settings(), th);
    case LossKind::sq_linf_cdf:
      return loss_sq_linf([&](double t) { return est.cdf(x1, t); },
                          [&](double t) { return model.conditional_cdf(theta, x1, t); }, s2, est.scale(x1), th);
    case LossKind::sq_error_regression:
      return loss_sq_error(est.regression(x1), model.regression(theta, x1));
  }
  return kNaN;
}

//==============================================================================
// Reports
//==============================================================================

//! Monte-Carlo Bayes risk of one estimator under one loss.
struct RiskReport
{
  std::string estimator;
  LossKind loss = LossKind::sq_error_regression;
  std::size_t n = 0;
  std::size_t reps = 0;
  std::size_t failed = 0;
  double mean = 0.0;
  double se = 0.0;
  //! Paired difference against the reference (first) estimator.
  double diff = 0.0;
  double diff_se = 0.0;
  std::string seeds_digest;

  static std::string header()
  {
    return "estimator,loss,n,reps,failed,mean_risk,se,diff_vs_reference,diff_se,seeds_digest";
  }

  std::string row() const
  {
    std::ostringstream os;
    os << estimator << ',' << to_string(loss) << ',' << n << ',' << reps << ',' << failed << ','
       << format_number(mean) << ',' << format_number(se) << ',' << format_number(diff) << ','
       << format_number(diff_se) << ',' << seeds_digest;
    return os.str();
  }

  static RiskReport parse_row(const std::string& line)
  {
    std::vector<std::string> f;
    std::string cur;
    int depth = 0;
    for (char c : line) {
      depth += (c == '(') - (c == ')');
      if (c == ',' && depth == 0) {
        f.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    f.push_back(cur);
    if (f.size() != 10)
      throw ParseError("risk report row must have 10 fields");
    RiskReport r;
    r.estimator = f[0];
    r.loss = parse_loss_kind(f[1]);
    r.n = std::stoul(f[2]);
    r.reps = std::stoul(f[3]);
    r.failed = std::stoul(f[4]);
    r.mean = std::stod(f[5]);
    r.se = std::stod(f[6]);
    r.diff = std::stod(f[7]);
    r.diff_se = std::stod(f[8]);
    r.seeds_digest = f[9];
    return r;
  }
};

inline void write_reports(std::ostream& os, const std::vector<RiskReport>& reports)
{
  os << RiskReport::header() << '\n';
  for (const auto& r : reports)
    os << r.row() << '\n';
}

inline std::vector<RiskReport> read_reports(std::istream& in)
{
  std::vector<RiskReport> out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    if (first) {
      first = false;
      if (line != RiskReport::header())
        throw ParseError("unexpected risk report header", 1);
      continue;
    }
    out.push_back(RiskReport::parse_row(line));
  }
  return out;
}

//==============================================================================
// Monte-Carlo harness
//==============================================================================

struct RiskConfig
{
  std::shared_ptr<const ModelFamily> model;
  PriorSpec prior = PriorSpec::uniform01();
  std::size_t n = 5;
  std::size_t x1_per_rep = 4;
  std::size_t reps = 2000;
  std::uint64_t seed = 42;
  unsigned workers = 1;
  std::vector<LossKind> losses = all_losses();
  //! Fraction of failed replications above which the run aborts.
  double max_failure_rate = 0.01;
};

class RiskBudgetError : public Error
{
public:
  using Error::Error;
};

namespace detail {

inline std::uint64_t fnv1a(std::uint64_t h, std::uint64_t v)
{
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffu;
    h *= 0x100000001b3ull;
  }
  return h;
}

} // namespace detail

//! Paired Monte-Carlo Bayes risks: every estimator sees the same θ, x' and x1
//! draws in each replication; reports are ordered estimator-major, loss-minor,
//! and the first estimator is the reference for paired differences.
inline std::vector<RiskReport> compare_bayes_risk(const RiskConfig& cfg, const std::vector<EstimatorSpec>& estimators)
{
  if (!cfg.model)
    throw std::invalid_argument("risk configuration has no model");
  if (cfg.reps < 100)
    throw std::invalid_argument("risk estimation needs at least 100 replications");
  if (cfg.x1_per_rep == 0 || estimators.empty() || cfg.losses.empty())
    throw std::invalid_argument("risk estimation needs x1 draws, estimators and losses");
  const std::size_t E = estimators.size(), L = cfg.losses.size(), R = cfg.reps;
  std::vector<double> loss(R * E * L, 0.0);
  std::vector<char> failed(R, 0);
  std::vector<std::uint64_t> stamp(R, 0);

  parallel_for(R, cfg.workers, [&](std::size_t r) {
    Rng rng = substream(cfg.seed, r);
    stamp[r] = rng();
    const double theta = sample_param(cfg.prior, rng);
    const SampleBatch x = sample_batch(*cfg.model, theta, cfg.n, rng);
    std::vector<double> x1s;
    for (std::size_t k = 0; k < cfg.x1_per_rep; ++k)
      x1s.push_back(cfg.model->sample(theta, rng).x1);
    try {
      for (std::size_t e = 0; e < E; ++e) {
        const auto est = estimators[e].fit(x);
        for (std::size_t l = 0; l < L; ++l) {
          CompensatedSum s;
          for (double x1 : x1s)
            s += evaluate_loss(cfg.losses[l], *est, *cfg.model, theta, x1);
          const double v = s.value() / static_cast<double>(x1s.size());
          if (!std::isfinite(v))
            throw IntegrationError("non-finite loss");
          loss[(r * E + e) * L + l] = v;
        }
      }
    } catch (const std::exception&) {
      failed[r] = 1;
    }
  });

  std::size_t nfail = 0;
  std::uint64_t digest = 0xcbf29ce484222325ull;
  digest = detail::fnv1a(digest, cfg.seed);
  for (std::size_t r = 0; r < R; ++r) {
    nfail += failed[r] != 0;
    digest = detail::fnv1a(detail::fnv1a(digest, r), stamp[r]);
  }
  if (static_cast<double>(nfail) > cfg.max_failure_rate * static_cast<double>(R))
    throw RiskBudgetError(std::to_string(nfail) + " of " + std::to_string(R) +
                          " replications failed, above the failure budget");
  std::ostringstream dg;
  dg << std::hex << std::setw(16) << std::setfill('0') << digest;
  const double used = static_cast<double>(R - nfail);

  std::vector<RiskReport> out;
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t l = 0; l < L; ++l) {
      CompensatedSum s, s2, d, d2;
      for (std::size_t r = 0; r < R; ++r) {
        if (failed[r])
          continue;
        const double v = loss[(r * E + e) * L + l];
        const double diff = v - loss[(r * E + 0) * L + l];
        s += v;
        s2 += v * v;
        d += diff;
        d2 += diff * diff;
      }
      RiskReport rep;
      rep.estimator = estimators[e].id;
      rep.loss = cfg.losses[l];
      rep.n = cfg.n;
      rep.reps = R;
      rep.failed = nfail;
      rep.mean = s.value() / used;
      rep.diff = d.value() / used;
      const double var = std::max(0.0, (s2.value() - used * rep.mean * rep.mean) / (used - 1.0));
      const double dvar = std::max(0.0, (d2.value() - used * rep.diff * rep.diff) / (used - 1.0));
      rep.se = std::sqrt(var / used);
      rep.diff_se = std::sqrt(dvar / used);
      rep.seeds_digest = dg.str();
      out.push_back(rep);
    }
  return out;
}

inline RiskReport estimate_bayes_risk(RiskConfig cfg, const EstimatorSpec& estimator, LossKind loss)
{
  cfg.losses = {loss};
  return compare_bayes_risk(cfg, {estimator}).front();
}

} // namespace ppbayes
