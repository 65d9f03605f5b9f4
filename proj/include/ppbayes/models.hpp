#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "core.hpp"

namespace ppbayes {

//==============================================================================
// Gamma–exponential family
//==============================================================================

//! X1 ~ Exp(θ), X2 | X1=x1 ~ Exp(θ·x1), prior θ ~ G(1, 1/λ).
class GammaExpFamily : public ModelFamily
{
public:
  explicit GammaExpFamily(double lambda = 1.0) : lambda_(lambda)
  {
    if (!(lambda > 0.0) || !std::isfinite(lambda))
      throw std::invalid_argument("gamma family requires lambda > 0");
  }

  double lambda() const { return lambda_; }
  PriorSpec prior() const { return PriorSpec::gamma(1.0, 1.0 / lambda_); }

  std::string name() const override { return "gamma"; }
  Support param_support() const override { return Support::interval(0.0, kInf, true); }
  Support x1_support() const override { return Support::interval(0.0, kInf, true); }
  Support x2_support() const override { return Support::interval(0.0, kInf); }

  double log_joint_density(double theta, double x1, double x2) const override
  {
    if (!(theta > 0.0) || !(x1 > 0.0) || !(x2 >= 0.0) || !std::isfinite(x1) || !std::isfinite(x2))
      return -kInf;
    return 2.0 * std::log(theta) + std::log(x1) - theta * x1 * (1.0 + x2);
  }
  double marginal1_density(double theta, double x1) const override
  {
    return x1 > 0.0 ? theta * std::exp(-theta * x1) : 0.0;
  }
  double conditional_density(double theta, double x1, double x2) const override
  {
    if (!(x2 >= 0.0))
      return 0.0;
    const double rate = theta * x1;
    return rate * std::exp(-rate * x2);
  }
  double conditional_cdf(double theta, double x1, double t) const override
  {
    if (!(t > 0.0))
      return 0.0;
    if (std::isinf(t))
      return 1.0;
    return -std::expm1(-theta * x1 * t);
  }
  double regression(double theta, double x1) const override { return 1.0 / (theta * x1); }

  Observation sample(double theta, Rng& rng) const override
  {
    const double x1 = std::exponential_distribution<double>(theta)(rng);
    const double x2 = std::exponential_distribution<double>(theta * x1)(rng);
    return {x1, x2};
  }

  ScaleHint x2_scale(double theta, double x1) const override { return {0.0, 1.0 / (theta * x1)}; }

private:
  double lambda_;
};

//==============================================================================
// Coin-pair family
//==============================================================================

//! X1 ~ Bernoulli(θ); X2 | X1=k1 ~ Bernoulli(θ) if k1=1, Bernoulli(1-θ) if k1=0.
class CoinPairFamily : public ModelFamily
{
public:
  PriorSpec prior() const { return PriorSpec::uniform01(); }

  std::string name() const override { return "coin"; }
  Support param_support() const override { return Support::interval(0.0, 1.0); }
  Support x1_support() const override { return Support::finite({0.0, 1.0}); }
  Support x2_support() const override { return Support::finite({0.0, 1.0}); }

  static double pmf(double theta, double k1, double k2)
  {
    if (k2 == 0.0 && (k1 == 0.0 || k1 == 1.0))
      return theta * (1.0 - theta);
    if (k2 == 1.0 && k1 == 0.0)
      return (1.0 - theta) * (1.0 - theta);
    if (k2 == 1.0 && k1 == 1.0)
      return theta * theta;
    return 0.0;
  }

  double log_joint_density(double theta, double x1, double x2) const override
  {
    const double p = pmf(theta, x1, x2);
    return p > 0.0 ? std::log(p) : -kInf;
  }
  double marginal1_density(double theta, double x1) const override
  {
    if (x1 == 1.0)
      return theta;
    if (x1 == 0.0)
      return 1.0 - theta;
    return 0.0;
  }
  double conditional_density(double theta, double x1, double x2) const override
  {
    const double p1 = regression(theta, x1);
    if (x2 == 1.0)
      return p1;
    if (x2 == 0.0)
      return 1.0 - p1;
    return 0.0;
  }
  double conditional_cdf(double theta, double x1, double t) const override
  {
    if (t < 0.0)
      return 0.0;
    if (t < 1.0)
      return 1.0 - regression(theta, x1);
    return 1.0;
  }
  double regression(double theta, double x1) const override { return x1 == 1.0 ? theta : 1.0 - theta; }

  Observation sample(double theta, Rng& rng) const override
  {
    const double k1 = std::bernoulli_distribution(theta)(rng) ? 1.0 : 0.0;
    const double k2 = std::bernoulli_distribution(regression(theta, k1))(rng) ? 1.0 : 0.0;
    return {k1, k2};
  }
};

//==============================================================================
// Bivariate normal family
//==============================================================================

//! (X1, X2) ~ N2((θ, θ), σ²[[1, ρ], [ρ, 1]]) with prior θ ~ N(μ, τ²).
class BivariateNormalFamily : public ModelFamily
{
public:
  BivariateNormalFamily(double sigma = 1.0, double rho = 0.0, double mu = 0.0, double tau = 1.0)
    : sigma_(sigma), rho_(rho), mu_(mu), tau_(tau)
  {
    if (!(sigma > 0.0) || !(tau > 0.0) || !(std::abs(rho) < 1.0) || !std::isfinite(mu) ||
        !std::isfinite(sigma) || !std::isfinite(tau))
      throw std::invalid_argument("normal family requires sigma > 0, tau > 0, |rho| < 1");
  }

  double sigma() const { return sigma_; }
  double rho() const { return rho_; }
  double mu() const { return mu_; }
  double tau() const { return tau_; }
  PriorSpec prior() const { return PriorSpec::normal(mu_, tau_ * tau_); }

  std::string name() const override { return "normal"; }
  Support param_support() const override { return Support::real_line(); }
  Support x1_support() const override { return Support::real_line(); }
  Support x2_support() const override { return Support::real_line(); }

  double log_joint_density(double theta, double x1, double x2) const override
  {
    if (!std::isfinite(x1) || !std::isfinite(x2))
      return -kInf;
    const double s2 = sigma_ * sigma_, one_m = 1.0 - rho_ * rho_;
    const double a = x1 - theta, b = x2 - theta;
    return -(a * a - 2.0 * rho_ * a * b + b * b) / (2.0 * s2 * one_m) -
           std::log(2.0 * M_PI * s2 * std::sqrt(one_m));
  }
  double marginal1_density(double theta, double x1) const override
  {
    const double z = (x1 - theta) / sigma_;
    return std::exp(-0.5 * z * z) / (sigma_ * std::sqrt(2.0 * M_PI));
  }
  double conditional_mean(double theta, double x1) const { return (1.0 - rho_) * theta + rho_ * x1; }
  //! σ²(1-ρ²), the variance implied by the bivariate density.
  double conditional_variance() const { return sigma_ * sigma_ * (1.0 - rho_ * rho_); }

  double conditional_density(double theta, double x1, double x2) const override
  {
    const double v = conditional_variance();
    const double z = x2 - conditional_mean(theta, x1);
    return std::exp(-0.5 * z * z / v) / std::sqrt(2.0 * M_PI * v);
  }
  double conditional_cdf(double theta, double x1, double t) const override
  {
    const double z = (t - conditional_mean(theta, x1)) / std::sqrt(conditional_variance());
    return 0.5 * std::erfc(-z / std::sqrt(2.0));
  }
  double regression(double theta, double x1) const override { return conditional_mean(theta, x1); }

  Observation sample(double theta, Rng& rng) const override
  {
    std::normal_distribution<double> z;
    const double x1 = theta + sigma_ * z(rng);
    const double x2 = conditional_mean(theta, x1) + std::sqrt(conditional_variance()) * z(rng);
    return {x1, x2};
  }

  ScaleHint x2_scale(double theta, double x1) const override
  {
    return {conditional_mean(theta, x1), std::sqrt(conditional_variance())};
  }

private:
  double sigma_, rho_, mu_, tau_;
};

//==============================================================================
// Finite table family
//==============================================================================

//! A family over finitely many parameter points with tabulated pair
//! probabilities on a finite Ω1×Ω2 grid, bundled with its prior weights.
class FiniteTableFamily : public ModelFamily
{
public:
  static constexpr std::size_t max_params = 16;
  static constexpr std::size_t max_axis = 8;

  //! `probs` is laid out [θ][x1][x2].
  FiniteTableFamily(std::vector<double> thetas, std::vector<double> weights, std::vector<double> x1_values,
                    std::vector<double> x2_values, std::vector<double> probs, std::string label = "table")
    : thetas_(std::move(thetas)), weights_(std::move(weights)), x1_(std::move(x1_values)),
      x2_(std::move(x2_values)), probs_(std::move(probs)), label_(std::move(label))
  {
    if (thetas_.empty() || thetas_.size() > max_params)
      throw SizeCapError("finite family: parameter count must be in [1, 16]");
    if (x1_.empty() || x2_.empty() || x1_.size() > max_axis || x2_.size() > max_axis)
      throw SizeCapError("finite family: each observation axis must have 1..8 values");
    if (weights_.size() != thetas_.size() || probs_.size() != thetas_.size() * x1_.size() * x2_.size())
      throw std::invalid_argument("finite family: inconsistent table dimensions");
    if (!std::is_sorted(x1_.begin(), x1_.end()) || !std::is_sorted(x2_.begin(), x2_.end()))
      throw std::invalid_argument("finite family: axis values must be sorted");
    if (!std::is_sorted(thetas_.begin(), thetas_.end()))
      throw std::invalid_argument("finite family: parameter values must be ascending");
    prior_ = PriorSpec::finite(thetas_, weights_);
    for (std::size_t k = 0; k < thetas_.size(); ++k) {
      CompensatedSum row;
      for (std::size_t c = 0; c < cells(); ++c) {
        const double p = probs_[k * cells() + c];
        if (!(p >= 0.0) || p > 1.0)
          throw std::invalid_argument("finite family: probabilities must lie in [0, 1]");
        row += p;
      }
      if (std::abs(row.value() - 1.0) > 1e-12)
        throw std::invalid_argument("finite family: table for theta index " + std::to_string(k) +
                                    " sums to " + format_number(row.value(), 17));
    }
  }

  //! Rows: `prior,<θ index>,<θ value>,<weight>` and `<θ index>,<x1>,<x2>,<probability>`;
  //! `#` starts a comment. Cells not listed have probability 0.
  static FiniteTableFamily parse(std::istream& in, std::string label = "table")
  {
    std::map<int, std::pair<double, double>> prior_rows;
    std::vector<std::tuple<int, double, double, double, std::size_t>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto pos = line.find('#'); pos != std::string::npos)
        line.erase(pos);
      std::vector<std::string> fields;
      std::stringstream ss(line);
      std::string f;
      while (std::getline(ss, f, ','))
        fields.push_back(trim(f));
      if (fields.empty() || (fields.size() == 1 && fields[0].empty()))
        continue;
      if (fields.size() != 4)
        throw ParseError("expected 4 comma-separated fields", lineno);
      if (fields[0] == "prior") {
        const int k = parse_index(fields[1], lineno);
        if (prior_rows.count(k))
          throw ParseError("duplicate prior row for theta index " + fields[1], lineno);
        prior_rows[k] = {parse_real(fields[2], lineno), parse_real(fields[3], lineno)};
      } else {
        rows.emplace_back(parse_index(fields[0], lineno), parse_real(fields[1], lineno),
                          parse_real(fields[2], lineno), parse_real(fields[3], lineno), lineno);
      }
    }
    if (prior_rows.empty())
      throw ParseError("no prior rows");
    std::vector<double> thetas, weights, xs1, xs2;
    std::map<int, std::size_t> slot;
    for (auto& [k, tw] : prior_rows) {
      if (k != static_cast<int>(thetas.size()))
        throw ParseError("theta indices must be 0..K-1 without gaps");
      slot[k] = thetas.size();
      thetas.push_back(tw.first);
      weights.push_back(tw.second);
    }
    for (auto& r : rows) {
      xs1.push_back(std::get<1>(r));
      xs2.push_back(std::get<2>(r));
    }
    auto uniq = [](std::vector<double>& v) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    uniq(xs1);
    uniq(xs2);
    if (xs1.size() > max_axis || xs2.size() > max_axis || thetas.size() > max_params)
      throw SizeCapError("finite family exceeds size caps (|Theta|<=16, |Omega_i|<=8)");
    std::vector<double> probs(thetas.size() * xs1.size() * xs2.size(), 0.0);
    std::vector<bool> seen(probs.size(), false);
    for (auto& [k, a, b, p, ln] : rows) {
      if (!slot.count(k))
        throw ParseError("row references unknown theta index " + std::to_string(k), ln);
      const auto i = static_cast<std::size_t>(std::lower_bound(xs1.begin(), xs1.end(), a) - xs1.begin());
      const auto j = static_cast<std::size_t>(std::lower_bound(xs2.begin(), xs2.end(), b) - xs2.begin());
      const std::size_t idx = (slot[k] * xs1.size() + i) * xs2.size() + j;
      if (seen[idx])
        throw ParseError("duplicate cell", ln);
      seen[idx] = true;
      probs[idx] = p;
    }
    try {
      return FiniteTableFamily(thetas, weights, xs1, xs2, probs, std::move(label));
    } catch (const SizeCapError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ParseError(e.what());
    }
  }

  static FiniteTableFamily load(const std::string& path)
  {
    std::ifstream in(path);
    if (!in)
      throw ParseError("cannot open family table '" + path + "'");
    return parse(in, std::filesystem::path(path).stem().string());
  }

  std::string serialize() const
  {
    std::ostringstream os;
    os.precision(17);
    os << "# finite family " << label_ << "\n";
    os << "# prior,<theta index>,<theta>,<weight>  then  <theta index>,<x1>,<x2>,<probability>\n";
    for (std::size_t k = 0; k < thetas_.size(); ++k)
      os << "prior," << k << "," << thetas_[k] << "," << weights_[k] << "\n";
    for (std::size_t k = 0; k < thetas_.size(); ++k)
      for (std::size_t i = 0; i < x1_.size(); ++i)
        for (std::size_t j = 0; j < x2_.size(); ++j)
          os << k << "," << x1_[i] << "," << x2_[j] << "," << prob(k, i, j) << "\n";
    return os.str();
  }

  const std::string& label() const { return label_; }
  std::size_t theta_count() const { return thetas_.size(); }
  std::size_t x1_count() const { return x1_.size(); }
  std::size_t x2_count() const { return x2_.size(); }
  std::size_t cells() const { return x1_.size() * x2_.size(); }
  const std::vector<double>& thetas() const { return thetas_; }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& x1_values() const { return x1_; }
  const std::vector<double>& x2_values() const { return x2_; }
  const PriorSpec& prior() const { return prior_; }

  double prob(std::size_t k, std::size_t i, std::size_t j) const { return probs_[(k * x1_.size() + i) * x2_.size() + j]; }
  double prob_cell(std::size_t k, std::size_t cell) const { return probs_[k * cells() + cell]; }
  Observation cell_value(std::size_t cell) const { return {x1_[cell / x2_.size()], x2_[cell % x2_.size()]}; }

  int theta_index(double theta) const
  {
    auto it = std::lower_bound(thetas_.begin(), thetas_.end(), theta);
    if (it == thetas_.end() || *it != theta)
      return -1;
    return static_cast<int>(it - thetas_.begin());
  }
  int x1_index(double x1) const { return index_in(x1_, x1); }
  int x2_index(double x2) const { return index_in(x2_, x2); }

  std::string name() const override { return "table:" + label_; }
  Support param_support() const override { return Support::finite(thetas_); }
  Support x1_support() const override { return Support::finite(x1_); }
  Support x2_support() const override { return Support::finite(x2_); }

  double log_joint_density(double theta, double x1, double x2) const override
  {
    const int k = theta_index(theta), i = x1_index(x1), j = x2_index(x2);
    if (k < 0 || i < 0 || j < 0)
      return -kInf;
    const double p = prob(static_cast<std::size_t>(k), static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    return p > 0.0 ? std::log(p) : -kInf;
  }
  double marginal1_density(double theta, double x1) const override
  {
    const int k = theta_index(theta), i = x1_index(x1);
    if (k < 0 || i < 0)
      return 0.0;
    CompensatedSum s;
    for (std::size_t j = 0; j < x2_.size(); ++j)
      s += prob(static_cast<std::size_t>(k), static_cast<std::size_t>(i), j);
    return s.value();
  }
  double conditional_density(double theta, double x1, double x2) const override
  {
    const double m = marginal1_density(theta, x1);
    if (!(m > 0.0))
      return 0.0;
    return joint_density(theta, x1, x2) / m;
  }
  double conditional_cdf(double theta, double x1, double t) const override
  {
    const double m = marginal1_density(theta, x1);
    if (!(m > 0.0))
      return 0.0;
    CompensatedSum s;
    for (double v : x2_)
      if (v <= t)
        s += joint_density(theta, x1, v);
    return std::min(1.0, s.value() / m);
  }
  double regression(double theta, double x1) const override
  {
    const double m = marginal1_density(theta, x1);
    if (!(m > 0.0))
      return kNaN;
    CompensatedSum s;
    for (double v : x2_)
      s += v * joint_density(theta, x1, v);
    return s.value() / m;
  }

  Observation sample(double theta, Rng& rng) const override
  {
    const int k = theta_index(theta);
    std::vector<double> row(probs_.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(k) * cells()),
                            probs_.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(k) + 1) * cells()));
    const std::size_t c = std::discrete_distribution<std::size_t>(row.begin(), row.end())(rng);
    return cell_value(c);
  }

private:
  static int index_in(const std::vector<double>& v, double x)
  {
    auto it = std::lower_bound(v.begin(), v.end(), x);
    if (it == v.end() || *it != x)
      return -1;
    return static_cast<int>(it - v.begin());
  }
  static std::string trim(const std::string& s)
  {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
      return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }
  static double parse_real(const std::string& s, std::size_t line)
  {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw ParseError("not a number: '" + s + "'", line);
    }
    if (used != s.size() || !std::isfinite(v))
      throw ParseError("not a finite number: '" + s + "'", line);
    return v;
  }
  static int parse_index(const std::string& s, std::size_t line)
  {
    const double v = parse_real(s, line);
    if (v < 0 || v != std::floor(v) || v > 1e6)
      throw ParseError("theta index must be a nonnegative integer: '" + s + "'", line);
    return static_cast<int>(v);
  }

  std::vector<double> thetas_, weights_, x1_, x2_, probs_;
  std::string label_;
  PriorSpec prior_ = PriorSpec::uniform01();
};

//! The shipped finite families: "two_point", "three_coin", "ladder".
inline FiniteTableFamily demo_finite_family(const std::string& name)
{
  if (name == "two_point") {
    // R_0 = point mass at (0,0); R_1 = uniform on {0,1}²
    return FiniteTableFamily({0.0, 1.0}, {0.5, 0.5}, {0.0, 1.0}, {0.0, 1.0},
                             {1.0, 0.0, 0.0, 0.0, 0.25, 0.25, 0.25, 0.25}, "two_point");
  }
  if (name == "three_coin") {
    std::vector<double> probs;
    for (double t : {0.2, 0.5, 0.8})
      for (double k1 : {0.0, 1.0})
        for (double k2 : {0.0, 1.0})
          probs.push_back(CoinPairFamily::pmf(t, k1, k2));
    return FiniteTableFamily({0.2, 0.5, 0.8}, {0.3, 0.4, 0.3}, {0.0, 1.0}, {0.0, 1.0}, probs, "three_coin");
  }
  if (name == "ladder") {
    return FiniteTableFamily({1.0, 2.0, 3.0, 4.0}, {0.1, 0.2, 0.3, 0.4}, {0.0, 1.0, 2.0}, {0.0, 1.0},
                             {0.30, 0.10, 0.15, 0.15, 0.05, 0.25,
                              0.20, 0.10, 0.20, 0.10, 0.25, 0.15,
                              0.10, 0.15, 0.25, 0.05, 0.30, 0.15,
                              0.05, 0.25, 0.10, 0.20, 0.35, 0.05},
                             "ladder");
  }
  throw std::invalid_argument("unknown demo family '" + name + "'");
}

inline std::vector<std::string> demo_finite_family_names() { return {"two_point", "three_coin", "ladder"}; }

//==============================================================================
// Gamma–exponential closed forms
//==============================================================================

namespace detail {

inline void check_gamma_args(std::span<const Observation> sample, double x1, double lambda)
{
  if (!(lambda > 0.0))
    throw DomainError("lambda must be > 0");
  if (!(x1 > 0.0) || !std::isfinite(x1))
    throw DomainError("x1 must be > 0", DomainError::no_index, 1);
  GammaExpFamily(lambda).check_sample(sample);
}

} // namespace detail

//! a_n(x', x1) = λ + x1 + Σ x'_{i1}(1 + x'_{i2}).
inline double gamma_a_n(std::span<const Observation> sample, double x1, double lambda)
{
  detail::check_gamma_args(sample, x1, lambda);
  CompensatedSum s;
  s += lambda;
  s += x1;
  for (const auto& p : sample)
    s += p.x1 * (1.0 + p.x2);
  return s.value();
}

inline double gamma_conditional_density_cf(std::span<const Observation> sample, double x1, double x2,
                                           double lambda)
{
  if (!(x2 >= 0.0))
    throw DomainError("x2 must be >= 0", DomainError::no_index, 2);
  const double a = gamma_a_n(sample, x1, lambda);
  const double k = 2.0 * static_cast<double>(sample.size()) + 2.0;
  // (2n+2)·x1·a^{2n+2} / (x1·x2 + a)^{2n+3}
  return k * x1 / a * std::exp(-(k + 1.0) * std::log1p(x1 * x2 / a));
}

inline double gamma_conditional_cdf_cf(std::span<const Observation> sample, double x1, double t,
                                       double lambda)
{
  if (!(t > 0.0))
    return 0.0;
  const double a = gamma_a_n(sample, x1, lambda);
  if (std::isinf(t))
    return 1.0;
  const double k = 2.0 * static_cast<double>(sample.size()) + 2.0;
  return -std::expm1(-k * std::log1p(x1 * t / a));
}

inline double gamma_regression_cf(std::span<const Observation> sample, double x1, double lambda)
{
  const double a = gamma_a_n(sample, x1, lambda);
  return a / ((2.0 * static_cast<double>(sample.size()) + 1.0) * x1);
}

//==============================================================================
// Coin-pair closed forms
//==============================================================================

struct CoinCounts
{
  int n00 = 0, n01 = 0, n10 = 0, n11 = 0;
  int n_plus0 = 0;
  //! Exponents of θ and 1-θ in f_{n,θ}(k'); a + b = 2n.
  int a = 0, b = 0;
};

inline CoinCounts coin_counts(std::span<const Observation> sample)
{
  CoinPairFamily().check_sample(sample);
  CoinCounts c;
  for (const auto& p : sample) {
    const int k1 = p.x1 == 1.0, k2 = p.x2 == 1.0;
    if (!k1 && !k2)
      ++c.n00;
    else if (!k1 && k2)
      ++c.n01;
    else if (k1 && !k2)
      ++c.n10;
    else
      ++c.n11;
  }
  c.n_plus0 = c.n00 + c.n10;
  c.a = c.n_plus0 + 2 * c.n11;
  c.b = c.n_plus0 + 2 * c.n01;
  return c;
}

namespace detail {

inline void check_binary(double v, const char* what)
{
  if (v != 0.0 && v != 1.0)
    throw DomainError(std::string(what) + " must be 0 or 1");
}

} // namespace detail

//! P*(X2 = k2 | X1 = k1) under the posterior predictive, from exact Beta
//! integral ratios over the piecewise joint mass.
inline double coin_conditional_pf_cf(std::span<const Observation> sample, double k1, double k2)
{
  detail::check_binary(k1, "k1");
  detail::check_binary(k2, "k2");
  const CoinCounts c = coin_counts(sample);
  const double denom = 2.0 * static_cast<double>(sample.size()) + 3.0;
  double p1; // P*(k2 = 1 | k1)
  if (k1 == 0.0)
    p1 = (c.b + 2.0) / denom;
  else
    p1 = (c.a + 2.0) / denom;
  return k2 == 1.0 ? p1 : 1.0 - p1;
}

inline double coin_regression_cf(std::span<const Observation> sample, double k1)
{
  return coin_conditional_pf_cf(sample, k1, 1.0);
}

//==============================================================================
// Bivariate normal closed forms
//==============================================================================

struct NormalPosteriorHyper
{
  double A1 = 0.0, B1 = 0.0, C1 = 0.0;
  double mean = 0.0, variance = 0.0;
};

struct NormalPredictiveParams
{
  double rho1 = 0.0, sigma1_sq = 0.0, m1 = 0.0;
  //! Coefficients of x1², x1·x2 and (x1+x2) in the predictive exponent.
  double A3 = 0.0, B3 = 0.0, C3 = 0.0;
};

struct NormalConditional
{
  double mean = 0.0, variance = 0.0;
};

namespace detail {

struct NormalStats
{
  double n = 0.0, s1 = 0.0, s2 = 0.0, p = 0.0;
};

inline NormalStats normal_stats(std::span<const Observation> sample)
{
  CompensatedSum s1, s2, p;
  for (const auto& o : sample) {
    if (!std::isfinite(o.x1) || !std::isfinite(o.x2))
      throw DomainError("normal family observations must be finite");
    s1 += o.x1 + o.x2;
    s2 += o.x1 * o.x1 + o.x2 * o.x2;
    p += o.x1 * o.x2;
  }
  return {static_cast<double>(sample.size()), s1.value(), s2.value(), p.value()};
}

} // namespace detail

inline NormalPosteriorHyper normal_posterior_hyper(std::span<const Observation> sample, double sigma,
                                                   double rho, double mu, double tau)
{
  BivariateNormalFamily validate(sigma, rho, mu, tau);
  const auto st = detail::normal_stats(sample);
  const double s2 = sigma * sigma, t2 = tau * tau;
  NormalPosteriorHyper h;
  h.A1 = st.n / (s2 * (1.0 + rho)) + 1.0 / (2.0 * t2);
  h.B1 = st.s1 / (s2 * (1.0 + rho)) + mu / t2;
  h.C1 = (st.s2 - 2.0 * rho * st.p) / (2.0 * s2 * (1.0 - rho * rho)) + mu * mu / (2.0 * t2);
  h.mean = h.B1 / (2.0 * h.A1);
  h.variance = 1.0 / (2.0 * h.A1);
  return h;
}

//! Parameters of the Gaussian posterior predictive N2((m1, m1), σ1²[[1, ρ1], [ρ1, 1]]),
//! read off the completed square in θ of the predictive exponent.
inline NormalPredictiveParams normal_predictive_params(std::span<const Observation> sample, double sigma,
                                                       double rho, double mu, double tau)
{
  BivariateNormalFamily validate(sigma, rho, mu, tau);
  const auto st = detail::normal_stats(sample);
  const double s2 = sigma * sigma, t2 = tau * tau;
  const double c = 1.0 / (s2 * (1.0 + rho));
  const double A2 = (st.n + 1.0) * c + 1.0 / (2.0 * t2);
  NormalPredictiveParams out;
  out.A3 = 1.0 / (2.0 * s2 * (1.0 - rho * rho)) - c * c / (4.0 * A2);
  out.B3 = -rho / (s2 * (1.0 - rho * rho)) - c * c / (2.0 * A2);
  out.C3 = -c * (st.s1 * c + mu / t2) / (2.0 * A2);
  out.rho1 = -out.B3 / (2.0 * out.A3);
  out.sigma1_sq = 1.0 / (2.0 * out.A3 * (1.0 - out.rho1 * out.rho1));
  out.m1 = -out.C3 / (2.0 * out.A3 * (1.0 - out.rho1));
  return out;
}

inline NormalConditional normal_conditional_cf(const NormalPredictiveParams& params, double x1)
{
  if (!(std::abs(params.rho1) < 1.0) || !(params.sigma1_sq > 0.0))
    throw std::invalid_argument("invalid predictive parameters");
  return {(1.0 - params.rho1) * params.m1 + params.rho1 * x1,
          params.sigma1_sq * (1.0 - params.rho1 * params.rho1)};
}

} // namespace ppbayes
