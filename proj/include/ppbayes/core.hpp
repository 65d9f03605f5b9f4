#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>

namespace ppbayes {

//==============================================================================
// Errors
//==============================================================================

class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! An observation or parameter outside the model's declared support.
class DomainError : public Error
{
public:
  static constexpr std::size_t no_index = static_cast<std::size_t>(-1);

  DomainError(const std::string& what, std::size_t index = no_index, int coordinate = 0)
    : Error(what), index_(index), coordinate_(coordinate)
  {}

  std::size_t index() const { return index_; }
  //! 1 or 2 for the offending coordinate of a pair, 0 for the parameter.
  int coordinate() const { return coordinate_; }

private:
  std::size_t index_;
  int coordinate_;
};

class IntegrationError : public Error
{
public:
  using Error::Error;
};

//! The sample has zero likelihood under every parameter value.
class ImpossibleSampleError : public Error
{
public:
  using Error::Error;
};

//! Conditioning on an x1 where the predictive first marginal vanishes.
class NullConditioningError : public Error
{
public:
  using Error::Error;
};

class NonIntegrableMeanError : public Error
{
public:
  using Error::Error;
};

class SizeCapError : public Error
{
public:
  using Error::Error;
};

//! Malformed text input; `line` is 1-based, 0 when unknown.
class ParseError : public Error
{
public:
  ParseError(const std::string& what, std::size_t line = 0)
    : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line)
  {}
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

//==============================================================================
// Numeric helpers
//==============================================================================

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

//! Neumaier compensated summation.
class CompensatedSum
{
public:
  void add(double v)
  {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  CompensatedSum& operator+=(double v)
  {
    add(v);
    return *this;
  }
  double value() const { return sum_ + comp_; }

private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline std::string format_number(double v, int digits = 12)
{
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

//! Run fn(i) for i in [0, count) on `workers` threads (static interleaving).
template <class F>
void parallel_for(std::size_t count, unsigned workers, F&& fn)
{
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i)
      fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += workers)
          fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool)
    t.join();
  for (auto& e : errors)
    if (e)
      std::rethrow_exception(e);
}

//==============================================================================
// Randomness
//==============================================================================

using Rng = std::mt19937_64;

//! Independent generator for replication `index` of a run seeded with `seed`.
inline Rng substream(std::uint64_t seed, std::uint64_t index)
{
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32),
                    0x9e3779b9u};
  return Rng(seq);
}

//==============================================================================
// Supports
//==============================================================================

//! Either an interval of the real line or a finite set of points.
class Support
{
public:
  static Support interval(double lo, double hi, bool lo_open = false, bool hi_open = false)
  {
    Support s;
    s.finite_ = false;
    s.lo_ = lo;
    s.hi_ = hi;
    s.lo_open_ = lo_open || std::isinf(lo);
    s.hi_open_ = hi_open || std::isinf(hi);
    return s;
  }

  static Support real_line() { return interval(-kInf, kInf); }

  static Support finite(std::vector<double> points)
  {
    Support s;
    s.finite_ = true;
    std::sort(points.begin(), points.end());
    points.erase(std::unique(points.begin(), points.end()), points.end());
    s.points_ = std::move(points);
    s.lo_ = s.points_.empty() ? kNaN : s.points_.front();
    s.hi_ = s.points_.empty() ? kNaN : s.points_.back();
    return s;
  }

  bool is_finite() const { return finite_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  bool lo_open() const { return lo_open_; }
  bool hi_open() const { return hi_open_; }
  const std::vector<double>& points() const { return points_; }

  bool contains(double x) const
  {
    if (!std::isfinite(x))
      return false;
    if (finite_)
      return std::binary_search(points_.begin(), points_.end(), x);
    if (x < lo_ || (lo_open_ && x == lo_))
      return false;
    if (x > hi_ || (hi_open_ && x == hi_))
      return false;
    return true;
  }

  //! Index of `x` among the finite points, or -1.
  int index_of(double x) const
  {
    auto it = std::lower_bound(points_.begin(), points_.end(), x);
    if (it == points_.end() || *it != x)
      return -1;
    return static_cast<int>(it - points_.begin());
  }

  std::string describe() const
  {
    std::ostringstream os;
    if (finite_) {
      os << "{";
      for (std::size_t i = 0; i < points_.size(); ++i)
        os << (i ? "," : "") << points_[i];
      os << "}";
    } else {
      os << (lo_open_ ? "(" : "[") << lo_ << "," << hi_ << (hi_open_ ? ")" : "]");
    }
    return os.str();
  }

private:
  bool finite_ = false;
  double lo_ = -kInf;
  double hi_ = kInf;
  bool lo_open_ = true;
  bool hi_open_ = true;
  std::vector<double> points_;
};

//==============================================================================
// Observations
//==============================================================================

struct Observation
{
  double x1 = 0.0;
  double x2 = 0.0;

  friend bool operator==(const Observation&, const Observation&) = default;
};

//! The observed sample x' of n pairs; n = 0 is the prior-predictive case.
using SampleBatch = std::vector<Observation>;

//==============================================================================
// Prior
//==============================================================================

//! The prior Q over a scalar parameter.
class PriorSpec
{
public:
  enum class Kind
  {
    gamma,
    normal,
    uniform01,
    finite
  };

  //! Shape–scale parametrization: density θ^{a-1} e^{-θ/s} / (Γ(a) s^a).
  static PriorSpec gamma(double shape, double scale)
  {
    if (!(shape > 0.0) || !(scale > 0.0) || !std::isfinite(shape) || !std::isfinite(scale))
      throw std::invalid_argument("gamma prior requires shape > 0 and scale > 0");
    PriorSpec p(Kind::gamma);
    p.a_ = shape;
    p.b_ = scale;
    return p;
  }

  static PriorSpec normal(double mean, double variance)
  {
    if (!std::isfinite(mean) || !(variance > 0.0) || !std::isfinite(variance))
      throw std::invalid_argument("normal prior requires finite mean and variance > 0");
    PriorSpec p(Kind::normal);
    p.a_ = mean;
    p.b_ = variance;
    return p;
  }

  static PriorSpec uniform01() { return PriorSpec(Kind::uniform01); }

  static PriorSpec finite(std::vector<double> points, std::vector<double> weights)
  {
    if (points.empty() || points.size() != weights.size())
      throw std::invalid_argument("finite prior requires matching, non-empty points and weights");
    CompensatedSum total;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!std::isfinite(points[i]))
        throw std::invalid_argument("finite prior point is not finite");
      if (!(weights[i] >= 0.0))
        throw std::invalid_argument("finite prior weights must be nonnegative");
      total += weights[i];
    }
    if (std::abs(total.value() - 1.0) > 1e-12)
      throw std::invalid_argument("finite prior weights must sum to 1");
    std::vector<std::size_t> order(points.size());
    for (std::size_t i = 0; i < order.size(); ++i)
      order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto i, auto j) { return points[i] < points[j]; });
    PriorSpec p(Kind::finite);
    for (auto i : order) {
      if (!p.points_.empty() && p.points_.back() == points[i])
        throw std::invalid_argument("finite prior points must be distinct");
      p.points_.push_back(points[i]);
      p.weights_.push_back(weights[i]);
    }
    return p;
  }

  static PriorSpec point_mass(double theta) { return finite({theta}, {1.0}); }

  Kind kind() const { return kind_; }
  bool is_finite() const { return kind_ == Kind::finite; }
  double shape() const { return a_; }
  double scale() const { return b_; }
  double normal_mean() const { return a_; }
  double normal_variance() const { return b_; }
  const std::vector<double>& points() const { return points_; }
  const std::vector<double>& weights() const { return weights_; }

  Support support() const
  {
    switch (kind_) {
      case Kind::gamma:
        return Support::interval(0.0, kInf, true, true);
      case Kind::normal:
        return Support::real_line();
      case Kind::uniform01:
        return Support::interval(0.0, 1.0);
      case Kind::finite:
        return Support::finite(points_);
    }
    return Support::real_line();
  }

  //! Lebesgue density for continuous kinds, point weight for finite priors.
  double density(double theta) const
  {
    const double ld = log_density(theta);
    return std::isinf(ld) ? 0.0 : std::exp(ld);
  }

  double log_density(double theta) const
  {
    switch (kind_) {
      case Kind::gamma:
        if (!(theta > 0.0))
          return -kInf;
        return (a_ - 1.0) * std::log(theta) - theta / b_ - std::lgamma(a_) - a_ * std::log(b_);
      case Kind::normal: {
        const double z = theta - a_;
        return -0.5 * z * z / b_ - 0.5 * std::log(2.0 * M_PI * b_);
      }
      case Kind::uniform01:
        return (theta >= 0.0 && theta <= 1.0) ? 0.0 : -kInf;
      case Kind::finite: {
        auto it = std::lower_bound(points_.begin(), points_.end(), theta);
        if (it == points_.end() || *it != theta)
          return -kInf;
        const double w = weights_[static_cast<std::size_t>(it - points_.begin())];
        return w > 0.0 ? std::log(w) : -kInf;
      }
    }
    return -kInf;
  }

  //! Quantile function of a continuous prior.
  double quantile(double p) const
  {
    switch (kind_) {
      case Kind::gamma:
        return boost::math::quantile(boost::math::gamma_distribution<>(a_, b_), p);
      case Kind::normal:
        return boost::math::quantile(boost::math::normal_distribution<>(a_, std::sqrt(b_)), p);
      case Kind::uniform01:
        return p;
      case Kind::finite:
        break;
    }
    throw std::logic_error("quantile is undefined for a finite prior");
  }

  double mean() const
  {
    switch (kind_) {
      case Kind::gamma:
        return a_ * b_;
      case Kind::normal:
        return a_;
      case Kind::uniform01:
        return 0.5;
      case Kind::finite: {
        CompensatedSum s;
        for (std::size_t i = 0; i < points_.size(); ++i)
          s += points_[i] * weights_[i];
        return s.value();
      }
    }
    return kNaN;
  }

  double sample(Rng& rng) const
  {
    switch (kind_) {
      case Kind::gamma:
        return std::gamma_distribution<double>(a_, b_)(rng);
      case Kind::normal:
        return std::normal_distribution<double>(a_, std::sqrt(b_))(rng);
      case Kind::uniform01: {
        // open interval: the coin family degenerates at the endpoints
        double u;
        do {
          u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        } while (u == 0.0);
        return u;
      }
      case Kind::finite:
        return points_[std::discrete_distribution<std::size_t>(weights_.begin(), weights_.end())(rng)];
    }
    return kNaN;
  }

  std::string describe() const
  {
    std::ostringstream os;
    os.precision(12);
    switch (kind_) {
      case Kind::gamma:
        os << "gamma(shape=" << a_ << ",scale=" << b_ << ")";
        break;
      case Kind::normal:
        os << "normal(mean=" << a_ << ",variance=" << b_ << ")";
        break;
      case Kind::uniform01:
        os << "uniform01";
        break;
      case Kind::finite:
        os << "finite(";
        for (std::size_t i = 0; i < points_.size(); ++i)
          os << (i ? ";" : "") << points_[i] << ":" << weights_[i];
        os << ")";
        break;
    }
    return os.str();
  }

private:
  explicit PriorSpec(Kind k) : kind_(k) {}

  Kind kind_;
  double a_ = 0.0;
  double b_ = 0.0;
  std::vector<double> points_;
  std::vector<double> weights_;
};

//! Draw θ ~ Q.
inline double sample_param(const PriorSpec& prior, Rng& rng) { return prior.sample(rng); }

//==============================================================================
// Model family contract
//==============================================================================

//! Location/scale of the conditional law of X2, used to place quadrature
//! transforms on unbounded x2 domains.
struct ScaleHint
{
  double center = 0.0;
  double scale = 1.0;
};

//! A parametric joint model R_θ for one observation pair (X1, X2).
//!
//! Densities are with respect to Lebesgue measure on interval coordinates and
//! counting measure on finite coordinates.
class ModelFamily
{
public:
  virtual ~ModelFamily() = default;

  virtual std::string name() const = 0;
  virtual Support param_support() const = 0;
  virtual Support x1_support() const = 0;
  virtual Support x2_support() const = 0;

  //! log f_θ(x1, x2); -inf off the support.
  virtual double log_joint_density(double theta, double x1, double x2) const = 0;
  virtual double marginal1_density(double theta, double x1) const = 0;
  virtual double conditional_density(double theta, double x1, double x2) const = 0;
  virtual double conditional_cdf(double theta, double x1, double t) const = 0;
  //! r_θ(x1) = E_θ(X2 | X1 = x1).
  virtual double regression(double theta, double x1) const = 0;
  //! X1 from its marginal, then X2 from the true conditional.
  virtual Observation sample(double theta, Rng& rng) const = 0;

  virtual ScaleHint x2_scale(double /*theta*/, double /*x1*/) const { return {}; }

  double joint_density(double theta, double x1, double x2) const
  {
    const double l = log_joint_density(theta, x1, x2);
    return std::isinf(l) && l < 0 ? 0.0 : std::exp(l);
  }

  void check_param(double theta) const
  {
    if (!param_support().contains(theta))
      throw DomainError(name() + ": parameter " + format_number(theta) + " outside " +
                          param_support().describe(),
                        DomainError::no_index, 0);
  }

  void check_observation(const Observation& obs, std::size_t index) const
  {
    if (!x1_support().contains(obs.x1))
      throw DomainError(name() + ": pair " + std::to_string(index) + " coordinate 1 value " +
                          format_number(obs.x1) + " outside " + x1_support().describe(),
                        index, 1);
    if (!x2_support().contains(obs.x2))
      throw DomainError(name() + ": pair " + std::to_string(index) + " coordinate 2 value " +
                          format_number(obs.x2) + " outside " + x2_support().describe(),
                        index, 2);
  }

  void check_sample(std::span<const Observation> sample) const
  {
    for (std::size_t i = 0; i < sample.size(); ++i)
      check_observation(sample[i], i);
  }
};

namespace detail {

//! Log-likelihood without support checks; callers validate the sample once.
inline double log_likelihood(const ModelFamily& model, double theta,
                             std::span<const Observation> sample)
{
  CompensatedSum s;
  for (const auto& p : sample) {
    const double l = model.log_joint_density(theta, p.x1, p.x2);
    if (std::isinf(l) && l < 0)
      return -kInf;
    s += l;
  }
  return s.value();
}

} // namespace detail

//! log f_{n,θ}(x') = Σ log f_θ(x'_i); 0 for the empty sample.
inline double log_joint_sample_density(const ModelFamily& model, double theta,
                                       std::span<const Observation> sample)
{
  model.check_param(theta);
  model.check_sample(sample);
  return detail::log_likelihood(model, theta, sample);
}

//! f_{n,θ}(x') = Π f_θ(x'_i), accumulated in log space.
inline double joint_sample_density(const ModelFamily& model, double theta,
                                   std::span<const Observation> sample)
{
  const double l = log_joint_sample_density(model, theta, sample);
  return std::isinf(l) && l < 0 ? 0.0 : std::exp(l);
}

inline Observation sample_pair(const ModelFamily& model, double theta, Rng& rng)
{
  model.check_param(theta);
  return model.sample(theta, rng);
}

inline SampleBatch sample_batch(const ModelFamily& model, double theta, std::size_t n, Rng& rng)
{
  model.check_param(theta);
  SampleBatch out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(model.sample(theta, rng));
  return out;
}

} // namespace ppbayes
