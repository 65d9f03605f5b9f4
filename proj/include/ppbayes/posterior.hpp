#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "core.hpp"
#include "integrate.hpp"

namespace ppbayes {

//! The posterior of θ given x', kept as the prior Q plus its Q-density
//! r*(θ) = K(x')·f_{n,θ}(x').
class PosteriorRep
{
public:
  std::shared_ptr<const ModelFamily> model_ptr() const { return model_; }
  const ModelFamily& model() const { return *model_; }
  const PriorSpec& prior() const { return prior_; }
  const SampleBatch& sample() const { return sample_; }
  const QuadratureSettings& settings() const { return settings_; }

  //! log K(x') = -log ∫ f_{n,θ}(x') dQ(θ).
  double log_normalizer() const { return log_normalizer_; }
  //! ∫ r* dQ re-evaluated on the coarser refinement level; ≈ 1.
  double normalization_check() const { return normalization_check_; }
  bool converged() const { return converged_; }
  const std::optional<PeakHint>& peak() const { return peak_; }

  double log_likelihood(double theta) const
  {
    return detail::log_likelihood(*model_, theta, sample_);
  }

  //! r*_{n,x'}(θ), a density with respect to Q.
  double density(double theta) const
  {
    model_->check_param(theta);
    const double l = log_likelihood(theta);
    if (std::isinf(l) && l < 0)
      return 0.0;
    return std::exp(log_normalizer_ + l);
  }

  //! Quadrature nodes carrying posterior mass; weights sum to 1.
  std::span<const WeightedNode> nodes() const { return nodes_; }

  //! ∫ g dR*_{n,x'} on the posterior nodes.
  template <class G>
  double expectation(G&& g) const
  {
    CompensatedSum s;
    for (const auto& nd : nodes_)
      s += nd.weight * g(nd.theta);
    return s.value();
  }

  double mean() const
  {
    return expectation([](double t) { return t; });
  }

private:
  friend PosteriorRep build_posterior(std::shared_ptr<const ModelFamily>, PriorSpec, SampleBatch,
                                      QuadratureSettings);

  PosteriorRep(std::shared_ptr<const ModelFamily> model, PriorSpec prior, SampleBatch sample,
               QuadratureSettings settings)
    : model_(std::move(model)), prior_(std::move(prior)), sample_(std::move(sample)),
      settings_(settings)
  {}

  std::shared_ptr<const ModelFamily> model_;
  PriorSpec prior_;
  SampleBatch sample_;
  QuadratureSettings settings_;
  double log_normalizer_ = 0.0;
  double normalization_check_ = 1.0;
  bool converged_ = true;
  std::optional<PeakHint> peak_;
  std::vector<WeightedNode> nodes_;
};

namespace detail {

struct EvidencePass
{
  std::vector<WeightedNode> prior_nodes;
  std::vector<double> log_lik;
  double max_log = -kInf;
  double stabilized = 0.0; // Σ w·exp(log_lik - max_log)
};

inline EvidencePass evidence_pass(const PosteriorRep& post, std::vector<WeightedNode> nodes)
{
  EvidencePass pass;
  pass.prior_nodes = std::move(nodes);
  pass.log_lik.reserve(pass.prior_nodes.size());
  for (const auto& nd : pass.prior_nodes) {
    const double l = post.log_likelihood(nd.theta);
    if (std::isnan(l) || l == kInf)
      throw IntegrationError("non-finite log-likelihood at theta=" + format_number(nd.theta));
    pass.log_lik.push_back(l);
    pass.max_log = std::max(pass.max_log, l);
  }
  if (std::isinf(pass.max_log))
    return pass;
  CompensatedSum s;
  for (std::size_t i = 0; i < pass.log_lik.size(); ++i)
    s += pass.prior_nodes[i].weight * std::exp(pass.log_lik[i] - pass.max_log);
  pass.stabilized = s.value();
  return pass;
}

inline double log_evidence(const EvidencePass& p)
{
  return p.stabilized > 0.0 ? p.max_log + std::log(p.stabilized) : -kInf;
}

} // namespace detail

//! Build the posterior; the normalizer is computed on the log-stabilized
//! likelihood with panel boundaries placed around the posterior peak.
inline PosteriorRep build_posterior(std::shared_ptr<const ModelFamily> model, PriorSpec prior,
                                    SampleBatch sample, QuadratureSettings settings = {})
{
  settings.validate();
  model->check_sample(sample);
  for (double theta : prior.points())
    model->check_param(theta);
  if (!prior.is_finite()) {
    const auto ps = model->param_support();
    const auto qs = prior.support();
    if (ps.is_finite() || qs.lo() < ps.lo() || qs.hi() > ps.hi())
      throw DomainError("prior support " + qs.describe() + " exceeds parameter support " +
                        ps.describe() + " of " + model->name());
  }

  PosteriorRep post(std::move(model), std::move(prior), std::move(sample), settings);
  const PriorSpec& q = post.prior_;

  detail::EvidencePass final_pass;
  if (q.is_finite()) {
    final_pass = detail::evidence_pass(post, theta_rule(q, {}, 0, 0));
    post.converged_ = true;
    post.normalization_check_ = 1.0;
  } else {
    if (!post.sample_.empty()) {
      auto [lo, hi] = prior_integration_interval(q, settings);
      post.peak_ = find_log_peak(
        [&](double t) {
          if (!q.support().contains(t))
            return -kInf;
          return post.log_likelihood(t) + q.log_density(t);
        },
        lo, hi);
    }
    const auto bp = theta_breakpoints(q, settings, post.peak_);
    const int npp = settings.nodes_per_panel();
    auto prev = detail::evidence_pass(post, theta_rule(q, bp, 0, npp));
    final_pass = prev;
    post.converged_ = false;
    for (int level = 1; level <= QuadratureSettings::max_refinements; ++level) {
      auto cur = detail::evidence_pass(post, theta_rule(q, bp, level, npp));
      const double lc = detail::log_evidence(cur), lp = detail::log_evidence(prev);
      final_pass = cur;
      if (std::isfinite(lc) && std::isfinite(lp)) {
        post.normalization_check_ = std::exp(lp - lc);
        if (std::abs(post.normalization_check_ - 1.0) <= settings.rel_tol) {
          post.converged_ = true;
          break;
        }
      }
      prev = std::move(cur);
    }
  }

  const double log_ev = detail::log_evidence(final_pass);
  if (!std::isfinite(log_ev))
    throw ImpossibleSampleError(post.model_->name() + ": sample of size " +
                                std::to_string(post.sample_.size()) +
                                " has zero likelihood under every parameter value");
  post.log_normalizer_ = -log_ev;

  const double total = final_pass.stabilized;
  double max_w = 0.0;
  std::vector<WeightedNode> nodes;
  nodes.reserve(final_pass.prior_nodes.size());
  for (std::size_t i = 0; i < final_pass.prior_nodes.size(); ++i) {
    const double w = final_pass.prior_nodes[i].weight *
                     std::exp(final_pass.log_lik[i] - final_pass.max_log) / total;
    nodes.push_back({final_pass.prior_nodes[i].theta, w});
    max_w = std::max(max_w, w);
  }
  for (const auto& nd : nodes)
    if (nd.weight > 1e-20 * max_w)
      post.nodes_.push_back(nd);
  return post;
}

inline double posterior_density(const PosteriorRep& post, double theta) { return post.density(theta); }

} // namespace ppbayes
