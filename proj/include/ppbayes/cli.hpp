#pragma once

#include <unistd.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "discrete_oracle.hpp"
#include "estimators.hpp"
#include "models.hpp"
#include "predictive.hpp"
#include "risk.hpp"

namespace ppbayes::cli {

enum ExitCode : int
{
  exit_ok = 0,
  exit_internal = 1,
  exit_config = 2,
  exit_data = 3,
  exit_tolerance = 4,
  exit_ordering = 5
};

class ConfigError : public Error
{
public:
  using Error::Error;
};

class DataError : public Error
{
public:
  using Error::Error;
};

class ToleranceError : public Error
{
public:
  using Error::Error;
};

//! Evenly spaced grid "a:b:k".
struct Grid
{
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;

  static Grid parse(const std::string& text)
  {
    std::vector<std::string> f;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ':'))
      f.push_back(part);
    Grid g;
    try {
      if (f.size() != 3)
        throw std::invalid_argument("");
      std::size_t used = 0;
      g.lo = std::stod(f[0], &used);
      if (used != f[0].size())
        throw std::invalid_argument("");
      g.hi = std::stod(f[1], &used);
      if (used != f[1].size())
        throw std::invalid_argument("");
      const long k = std::stol(f[2], &used);
      if (used != f[2].size() || k < 1)
        throw std::invalid_argument("");
      g.count = static_cast<std::size_t>(k);
    } catch (const std::exception&) {
      throw ConfigError("grid '" + text + "' must have the form a:b:k with k >= 1");
    }
    if (!std::isfinite(g.lo) || !std::isfinite(g.hi) || g.lo > g.hi || (g.count == 1 && g.lo != g.hi))
      throw ConfigError("grid '" + text + "' needs finite a <= b, and a == b when k == 1");
    return g;
  }

  std::vector<double> points() const
  {
    std::vector<double> out;
    for (std::size_t i = 0; i < count; ++i)
      out.push_back(count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
    return out;
  }
};

//! Everything a command needs; flags override the config file.
struct RunConfig
{
  std::string family = "gamma";
  std::string prior;
  std::string engine;
  QuadratureSettings quadrature;
  std::string samples;
  std::string x1_grid;
  std::string t_grid;
  std::string x2_grid;
  //! Sample size; risk defaults to 5, validate to enumeration depth 2.
  std::optional<std::size_t> n;
  std::size_t reps = 2000;
  std::uint64_t seed = 42;
  std::size_t x1_per_rep = 4;
  unsigned workers = 1;
  std::string competitors = "prior_predictive;perturbed_bayes(0.2);plug_in_posterior_mean;plug_in_mle";
  std::string losses = "sq_total_variation;sq_L1_density;sq_Linf_cdf;sq_error_regression";
  std::size_t cases = 10;
  std::string out;
};

namespace detail {

inline double parse_real(const std::string& key, const std::string& v)
{
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size() && std::isfinite(d))
      return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + key + "' must be a finite number, got '" + v + "'");
}

inline std::uint64_t parse_count(const std::string& key, const std::string& v)
{
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError("'" + key + "' must be a nonnegative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' is out of range");
  }
}

inline std::vector<std::string> split(const std::string& s, char sep)
{
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char c : s) {
    depth += (c == '(') - (c == ')');
    if (c == sep && depth == 0) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty() || !out.empty())
    out.push_back(cur);
  return out;
}

//! "name:k=v,k=v" into a name and a key map; every key must be consumed.
struct Selector
{
  std::string name;
  std::string rest;
  std::map<std::string, std::string> args;

  static Selector parse(const std::string& text, bool keyed = true)
  {
    Selector s;
    const auto colon = text.find(':');
    s.name = text.substr(0, colon);
    if (colon == std::string::npos)
      return s;
    s.rest = text.substr(colon + 1);
    if (keyed)
      for (const auto& kv : split(s.rest, ',')) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
          throw ConfigError("expected key=value in '" + text + "'");
        if (!s.args.emplace(kv.substr(0, eq), kv.substr(eq + 1)).second)
          throw ConfigError("duplicate key '" + kv.substr(0, eq) + "' in '" + text + "'");
      }
    return s;
  }

  double take(const std::string& key, double fallback)
  {
    auto it = args.find(key);
    if (it == args.end())
      return fallback;
    const double v = parse_real(name + "." + key, it->second);
    args.erase(it);
    return v;
  }

  void finish() const
  {
    if (!args.empty())
      throw ConfigError("unknown key '" + args.begin()->first + "' for '" + name + "'");
  }
};

} // namespace detail

//! A resolved family: the model, and the table form when it is finite.
struct FamilyChoice
{
  std::shared_ptr<const ModelFamily> model;
  std::shared_ptr<const FiniteTableFamily> table;
  PriorSpec natural_prior = PriorSpec::uniform01();
};

//! gamma[:lambda=] | coin | normal[:sigma=,rho=,mu=,tau=] | table:<path> | demo:<name>
inline FamilyChoice make_family(const std::string& text)
{
  FamilyChoice fc;
  try {
    if (text.rfind("table:", 0) == 0 || text.rfind("demo:", 0) == 0) {
      const auto sel = detail::Selector::parse(text, false);
      if (sel.rest.empty())
        throw ConfigError("'" + sel.name + "' needs an argument");
      FiniteTableFamily f = sel.name == "demo" ? demo_finite_family(sel.rest) : FiniteTableFamily::load(sel.rest);
      fc.table = std::make_shared<const FiniteTableFamily>(std::move(f));
      fc.model = fc.table;
      fc.natural_prior = fc.table->prior();
      return fc;
    }
    auto sel = detail::Selector::parse(text);
    if (sel.name == "gamma") {
      auto g = std::make_shared<const GammaExpFamily>(sel.take("lambda", 1.0));
      fc.natural_prior = g->prior();
      fc.model = g;
    } else if (sel.name == "coin") {
      auto c = std::make_shared<const CoinPairFamily>();
      fc.natural_prior = c->prior();
      fc.model = c;
    } else if (sel.name == "normal") {
      auto nf = std::make_shared<const BivariateNormalFamily>(sel.take("sigma", 1.0), sel.take("rho", 0.0),
                                                              sel.take("mu", 0.0), sel.take("tau", 1.0));
      fc.natural_prior = nf->prior();
      fc.model = nf;
    } else {
      throw ConfigError("unknown family '" + sel.name + "'");
    }
    sel.finish();
  } catch (const ParseError&) {
    throw;
  } catch (const SizeCapError&) {
    throw;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  return fc;
}

//! gamma:shape=,scale= | normal:mean=,var= | uniform01 | point:<θ> | finite:θ=w,θ=w,...
inline PriorSpec make_prior(const std::string& text, const FamilyChoice& fc)
{
  if (text.empty())
    return fc.natural_prior;
  try {
    if (text.rfind("point:", 0) == 0)
      return PriorSpec::point_mass(detail::parse_real("point", text.substr(6)));
    if (text.rfind("finite:", 0) == 0) {
      std::vector<double> pts, ws;
      for (const auto& kv : detail::split(text.substr(7), ',')) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
          throw ConfigError("finite prior entries are theta=weight");
        pts.push_back(detail::parse_real("theta", kv.substr(0, eq)));
        ws.push_back(detail::parse_real("weight", kv.substr(eq + 1)));
      }
      return PriorSpec::finite(pts, ws);
    }
    auto sel = detail::Selector::parse(text);
    PriorSpec p = PriorSpec::uniform01();
    if (sel.name == "gamma")
      p = PriorSpec::gamma(sel.take("shape", 1.0), sel.take("scale", 1.0));
    else if (sel.name == "normal")
      p = PriorSpec::normal(sel.take("mean", 0.0), sel.take("var", 1.0));
    else if (sel.name != "uniform01")
      throw ConfigError("unknown prior '" + sel.name + "'");
    sel.finish();
    return p;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

inline Engine parse_engine(const std::string& s, bool* both = nullptr)
{
  if (both)
    *both = s == "both";
  if (s.empty() || s == "auto")
    return Engine::automatic;
  if (s == "closed-form")
    return Engine::closed_form;
  if (s == "numeric" || s == "both")
    return Engine::numeric;
  throw ConfigError("engine must be closed-form, numeric or both");
}

//! Reads [model], [quadrature], [data], [grid], [risk], [validate] and [output]
//! sections of an INI file; unknown sections or keys are errors.
inline void apply_config_file(const std::string& path, RunConfig& rc)
{
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config '" + path + "': " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  using Setter = std::function<void(const std::string&)>;
  auto str = [](std::string& dst) { return Setter([&dst](const std::string& v) { dst = v; }); };
  auto real = [](double& dst, const std::string& key) {
    return Setter([&dst, key](const std::string& v) { dst = detail::parse_real(key, v); });
  };
  auto count = [](auto& dst, const std::string& key) {
    return Setter([&dst, key](const std::string& v) {
      dst = static_cast<std::remove_reference_t<decltype(dst)>>(detail::parse_count(key, v));
    });
  };
  int nodes = rc.quadrature.node_count, panels = rc.quadrature.panel_count;
  const std::map<std::string, std::map<std::string, Setter>> known{
    {"model", {{"family", str(rc.family)}, {"prior", str(rc.prior)}, {"engine", str(rc.engine)}}},
    {"quadrature",
     {{"node_count", count(nodes, "node_count")},
      {"panel_count", count(panels, "panel_count")},
      {"abs_tol", real(rc.quadrature.abs_tol, "abs_tol")},
      {"rel_tol", real(rc.quadrature.rel_tol, "rel_tol")},
      {"truncation_mass", real(rc.quadrature.truncation_mass, "truncation_mass")}}},
    {"data", {{"samples", str(rc.samples)}}},
    {"grid", {{"x1", str(rc.x1_grid)}, {"t", str(rc.t_grid)}, {"x2", str(rc.x2_grid)}}},
    {"risk",
     {{"n", Setter([&rc](const std::string& v) { rc.n = detail::parse_count("n", v); })},
      {"reps", count(rc.reps, "reps")},
      {"seed", count(rc.seed, "seed")},
      {"x1_per_rep", count(rc.x1_per_rep, "x1_per_rep")},
      {"workers", count(rc.workers, "workers")},
      {"competitors", str(rc.competitors)},
      {"losses", str(rc.losses)}}},
    {"validate", {{"cases", count(rc.cases, "cases")}}},
    {"output", {{"out", str(rc.out)}}}};
  for (const auto& [section, body] : tree) {
    auto sit = known.find(section);
    if (sit == known.end())
      throw ConfigError("config '" + path + "': unknown section [" + section + "]");
    if (!body.data().empty() && body.empty())
      throw ConfigError("config '" + path + "': key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      auto kit = sit->second.find(key);
      if (kit == sit->second.end())
        throw ConfigError("config '" + path + "': unknown key '" + key + "' in [" + section + "]");
      kit->second(value.data());
    }
  }
  rc.quadrature.node_count = nodes;
  rc.quadrature.panel_count = panels;
}

//! x1,x2 per line, '#' comments; support violations reported by line.
inline SampleBatch read_samples(const std::string& path, const ModelFamily& model)
{
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open samples file '" + path + "'");
  SampleBatch out;
  std::vector<std::size_t> lines;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto pos = line.find('#'); pos != std::string::npos)
      line.erase(pos);
    if (line.find_first_not_of(" \t\r") == std::string::npos)
      continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 2)
      throw ParseError("expected two comma-separated values", lineno);
    Observation o;
    try {
      o.x1 = detail::parse_real("x1", f[0].substr(f[0].find_first_not_of(" \t")));
      const auto b = f[1].find_first_not_of(" \t");
      const auto e = f[1].find_last_not_of(" \t\r");
      o.x2 = detail::parse_real("x2", b == std::string::npos ? "" : f[1].substr(b, e - b + 1));
    } catch (const std::exception& ex) {
      throw ParseError(ex.what(), lineno);
    }
    out.push_back(o);
    lines.push_back(lineno);
  }
  try {
    model.check_sample(out);
  } catch (const DomainError& e) {
    const std::string where =
      e.index() < lines.size() ? " (line " + std::to_string(lines[e.index()]) + ")" : std::string();
    throw DataError(std::string(e.what()) + where);
  }
  return out;
}

namespace detail {

inline bool use_color()
{
  return std::getenv("NO_COLOR") == nullptr && ::isatty(2);
}

inline std::string status(bool ok)
{
  if (!use_color())
    return ok ? "ok" : "FAIL";
  return ok ? "\033[32mok\033[0m" : "\033[31mFAIL\033[0m";
}

inline double rel_gap(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

} // namespace detail

//==============================================================================
// Commands
//==============================================================================

//! Grid evaluations of the Bayes estimates, long format quantity,x1,arg,value.
inline int cmd_estimate(const RunConfig& rc, std::ostream& out, std::ostream& err)
{
  const FamilyChoice fc = make_family(rc.family);
  const PriorSpec prior = make_prior(rc.prior, fc);
  bool both = false;
  const Engine engine = parse_engine(rc.engine, &both);
  rc.quadrature.validate();
  if (rc.x1_grid.empty())
    throw ConfigError("estimate needs --x1-grid");
  const auto x1s = Grid::parse(rc.x1_grid).points();
  const auto ts = rc.t_grid.empty() ? std::vector<double>{} : Grid::parse(rc.t_grid).points();
  const auto x2s = rc.x2_grid.empty() ? std::vector<double>{} : Grid::parse(rc.x2_grid).points();
  const SampleBatch sample = rc.samples.empty() ? SampleBatch{} : read_samples(rc.samples, *fc.model);
  if (both && !has_closed_form(*fc.model, prior))
    throw ConfigError(fc.model->name() + " with prior " + prior.describe() + " has no closed form to compare");

  std::unique_ptr<ConditionalEstimate> primary, numeric;
  try {
    primary = fit_bayes(fc.model, prior, sample, both ? Engine::closed_form : engine, rc.quadrature);
    if (both)
      numeric = fit_bayes(fc.model, prior, sample, Engine::numeric, rc.quadrature);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  for (double x1 : x1s)
    if (!fc.model->x1_support().contains(x1))
      throw ConfigError("x1 grid value " + format_number(x1) + " lies outside " + fc.model->x1_support().describe());

  out << (both ? "quantity,x1,arg,closed_form,numeric,discrepancy" : "quantity,x1,arg,value") << '\n';
  double worst = 0.0;
  bool monotone = true;
  auto emit = [&](const char* q, double x1, std::optional<double> arg, auto&& f) {
    const double a = f(*primary);
    out << q << ',' << format_number(x1) << ',' << (arg ? format_number(*arg) : std::string()) << ','
        << format_number(a);
    if (both) {
      const double b = f(*numeric);
      const double gap = detail::rel_gap(a, b);
      worst = std::max(worst, gap);
      out << ',' << format_number(b) << ',' << format_number(gap);
    }
    out << '\n';
    return a;
  };
  for (double x1 : x1s) {
    emit("regression", x1, std::nullopt, [&](const ConditionalEstimate& e) { return e.regression(x1); });
    for (double x2 : x2s)
      emit("density", x1, x2, [&](const ConditionalEstimate& e) { return e.density(x1, x2); });
    double prev = -kInf;
    for (double t : ts) {
      const double v = emit("cdf", x1, t, [&](const ConditionalEstimate& e) { return e.cdf(x1, t); });
      monotone = monotone && v >= prev;
      prev = v;
    }
  }
  if (both)
    err << "max engine discrepancy " << format_number(worst) << ' ' << detail::status(worst <= 1e-4) << '\n';
  if (!monotone)
    throw ToleranceError("estimated CDF decreases along the t grid");
  if (both && worst > 1e-4)
    throw ToleranceError("closed-form and numeric engines differ by " + format_number(worst));
  return exit_ok;
}

//! Bayes must not lose to a competitor by more than 3 paired SEs.
inline bool within_ordering(const RiskReport& r) { return r.diff >= -3.0 * r.diff_se; }

//! Paired Monte-Carlo risks of the Bayes estimate and the configured competitors.
inline int cmd_risk(const RunConfig& rc, std::ostream& out, std::ostream& err)
{
  const FamilyChoice fc = make_family(rc.family);
  const PriorSpec prior = make_prior(rc.prior, fc);
  const Engine engine = parse_engine(rc.engine);
  rc.quadrature.validate();
  RiskConfig cfg;
  cfg.model = fc.model;
  cfg.prior = prior;
  cfg.n = rc.n.value_or(5);
  cfg.reps = rc.reps;
  cfg.seed = rc.seed;
  cfg.x1_per_rep = rc.x1_per_rep;
  cfg.workers = std::max(1u, rc.workers);
  cfg.losses.clear();
  std::vector<EstimatorSpec> es;
  try {
    for (const auto& l : detail::split(rc.losses, ';'))
      cfg.losses.push_back(parse_loss_kind(l));
    es.push_back(bayes_estimator(fc.model, prior, engine, rc.quadrature));
    for (const auto& c : detail::split(rc.competitors, ';'))
      if (!c.empty())
        es.push_back(competitor(c, fc.model, prior, engine));
    if (cfg.reps < 100)
      throw std::invalid_argument("risk needs --reps >= 100");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const auto reports = compare_bayes_risk(cfg, es);
  write_reports(out, reports);
  bool ordered = true;
  for (const auto& r : reports) {
    if (r.estimator == "bayes")
      continue;
    const bool ok = within_ordering(r);
    ordered = ordered && ok;
    const double z = r.diff_se > 0.0 ? r.diff / r.diff_se : 0.0;
    err << r.estimator << ' ' << to_string(r.loss) << " margin " << format_number(r.diff, 6) << " (z "
        << format_number(z, 4) << ") " << detail::status(ok) << '\n';
  }
  return ordered ? exit_ok : exit_ordering;
}

namespace detail {

struct CheckRow
{
  std::string check;
  std::size_t cases = 0;
  double max_violation = 0.0;
  double tolerance = 0.0;
  bool skipped = false;

  void add(double v)
  {
    ++cases;
    max_violation = std::max(max_violation, std::isfinite(v) ? v : kInf);
  }
  bool ok() const { return skipped || max_violation <= tolerance; }
};

inline std::vector<CheckRow> validate_finite(std::shared_ptr<const FiniteTableFamily> f,
                                             std::size_t max_n, unsigned workers)
{
  std::vector<CheckRow> rows;
  for (std::size_t n = 0; n <= max_n; ++n) {
    const JointTable t(f, n, workers);
    const auto rep = check_joint_identities(t, workers);
    for (const auto& c : rep.checks) {
      CheckRow r{"n=" + std::to_string(n) + " " + c.name, 0, 0.0, 1e-12};
      r.add(c.max_violation);
      rows.push_back(r);
    }
    CheckRow lem{"n=" + std::to_string(n) + " conditional_expectation", 0, 0.0, 1e-12};
    lem.add(check_conditional_expectation(t, workers));
    rows.push_back(lem);
    if (n >= 1) {
      CheckRow mi{"n=" + std::to_string(n) + " predictive_marginal_identity", 0, 0.0, 1e-12};
      for (std::size_t s = 0; s < t.sample_count(); ++s)
        if (t.sample_mass(s) > 0.0)
          mi.add(check_predictive_marginal_identity(t, s));
      rows.push_back(mi);
    }
  }
  return rows;
}

inline std::vector<CheckRow> validate_continuous(const FamilyChoice& fc, const PriorSpec& prior, const RunConfig& rc)
{
  const auto& model = *fc.model;
  const bool closed = has_closed_form(model, prior);
  const bool finite_x2 = model.x2_support().is_finite();
  const double agree_tol = finite_x2 ? 1e-12 : 1e-6;
  CheckRow dens{"closed_vs_numeric_density", 0, 0.0, agree_tol, !closed};
  CheckRow cdf{"closed_vs_numeric_cdf", 0, 0.0, agree_tol, !closed};
  CheckRow reg{"closed_vs_numeric_regression", 0, 0.0, agree_tol, !closed};
  CheckRow norm{"density_normalization", 0, 0.0, 1e-6};
  CheckRow mono{"cdf_monotone", 0, 0.0, 1e-12};
  CheckRow lim{"cdf_limits", 0, 0.0, 1e-6};
  CheckRow lem{"conditional_expectation", 0, 0.0, finite_x2 ? 1e-12 : 1e-6};

  for (std::size_t c = 0; c < rc.cases; ++c) {
    Rng rng = substream(rc.seed, c);
    const double theta = sample_param(prior, rng);
    const SampleBatch x =
      rc.samples.empty() ? sample_batch(model, theta, rc.n.value_or(2), rng) : read_samples(rc.samples, model);
    const double x1 = model.sample(theta, rng).x1;
    const auto num = fit_bayes(fc.model, prior, x, Engine::numeric, rc.quadrature);
    const auto ref = closed ? fit_bayes(fc.model, prior, x, Engine::closed_form, rc.quadrature) : nullptr;
    const auto& best = ref ? *ref : *num;
    const ScaleHint h = best.scale(x1);
    std::vector<double> grid;
    if (finite_x2) {
      grid = model.x2_support().points();
    } else {
      for (int i = -8; i <= 8; ++i)
        grid.push_back(h.center + 0.5 * i * h.scale);
      if (std::isfinite(model.x2_support().lo()))
        for (double& g : grid)
          g = std::max(g, model.x2_support().lo());
    }
    if (ref) {
      for (double t : grid) {
        dens.add(rel_gap(ref->density(x1, t), num->density(x1, t)));
        cdf.add(rel_gap(ref->cdf(x1, t), num->cdf(x1, t)));
      }
      reg.add(rel_gap(ref->regression(x1), num->regression(x1)));
    }
    const Support s2 = model.x2_support();
    if (finite_x2) {
      CompensatedSum m;
      for (double v : s2.points())
        m += best.density(x1, v);
      norm.add(std::abs(m.value() - 1.0));
    } else {
      norm.add(std::abs(line_integral([&](double t) { return best.density(x1, t); }, s2.lo(), s2.hi(),
                                      rc.quadrature, h)
                          .value -
                        1.0));
    }
    double prev = -kInf, drop = 0.0;
    for (int i = 0; i < 512; ++i) {
      const double t = h.center + h.scale * (-40.0 + 80.0 * i / 511.0);
      const double v = best.cdf(x1, t);
      drop = std::max(drop, prev - v);
      prev = std::max(prev, v);
    }
    mono.add(drop);
    const double lo_t = std::isfinite(s2.lo()) ? s2.lo() - 1.0 : h.center - 1e6 * h.scale;
    const double hi_t = std::isfinite(s2.hi()) ? s2.hi() : h.center + 1e6 * h.scale;
    lim.add(std::max(std::abs(best.cdf(x1, lo_t)), std::abs(1.0 - best.cdf(x1, hi_t))));
    // E[P_θ(X2 <= t | x1) | x', x1] by posterior quadrature against the CDF estimate
    const auto post = build_posterior(fc.model, prior, x, rc.quadrature);
    for (double t : grid) {
      CompensatedSum a, b;
      for (const auto& nd : post.nodes()) {
        const double w = nd.weight * model.marginal1_density(nd.theta, x1);
        a += w * model.conditional_cdf(nd.theta, x1, t);
        b += w;
      }
      lem.add(std::abs(a.value() / b.value() - best.cdf(x1, t)));
    }
  }
  return {dens, cdf, reg, norm, mono, lim, lem};
}

} // namespace detail

//! Oracle identities for finite families; engine agreement and structural
//! checks for the others.
inline int cmd_validate(const RunConfig& rc, std::ostream& out, std::ostream& err)
{
  const FamilyChoice fc = make_family(rc.family);
  const PriorSpec prior = make_prior(rc.prior, fc);
  rc.quadrature.validate();
  std::vector<detail::CheckRow> rows;
  if (fc.table) {
    if (!rc.prior.empty())
      throw ConfigError("finite families carry their own prior");
    rows = detail::validate_finite(fc.table, rc.n.value_or(2),
                                   std::max(1u, rc.workers));
  } else {
    rows = detail::validate_continuous(fc, prior, rc);
  }
  out << "check,cases,max_violation,tolerance,status\n";
  bool ok = true;
  for (const auto& r : rows) {
    out << r.check << ',' << r.cases << ',' << format_number(r.max_violation) << ',' << format_number(r.tolerance)
        << ',' << (r.skipped ? "skipped" : (r.ok() ? "ok" : "FAIL")) << '\n';
    ok = ok && r.ok();
    if (!r.ok())
      err << r.check << " violation " << format_number(r.max_violation) << ' ' << detail::status(false) << '\n';
  }
  if (!ok)
    throw ToleranceError("validation tolerance breached");
  return exit_ok;
}

//==============================================================================
// Entry point
//==============================================================================

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
  CLI::App app{"Posterior predictive Bayes estimates of conditional distributions and regression curves"};
  app.require_subcommand(1);
  RunConfig rc;
  std::string config_path;
  app.add_option("--config", config_path, "INI file; flags override its values");

  std::map<std::string, std::string> flags;
  const std::vector<std::pair<const char*, const char*>> common = {
    {"--family", "gamma[:lambda=], coin, normal[:sigma=,rho=,mu=,tau=], table:PATH or demo:NAME"},
    {"--prior", "point:T, finite:T=W,..., gamma:shape=,scale=, normal:mean=,var= or uniform01"},
    {"--engine", "auto, closed-form, numeric or both"},
    {"--samples", "CSV of x1,x2 rows"},
    {"--out", "write the table here instead of stdout"},
    {"--node-count", "Gauss-Legendre nodes per pass"},
    {"--panel-count", "panels per pass"},
    {"--rel-tol", "relative refinement tolerance"},
    {"--abs-tol", "absolute tolerance"},
    {"--workers", "worker threads"},
    {"--seed", "base seed"},
    {"--n", "sample size"}};
  auto add_common = [&](CLI::App* sub) {
    for (const auto& [name, help] : common)
      sub->add_option(name, flags[name], help);
    sub->add_option("--config", config_path, "INI file; flags override its values");
  };
  auto* est = app.add_subcommand("estimate", "Evaluate the Bayes estimates on grids");
  add_common(est);
  est->add_option("--x1-grid", flags["--x1-grid"], "conditioning points a:b:k");
  est->add_option("--t-grid", flags["--t-grid"], "CDF arguments a:b:k");
  est->add_option("--x2-grid", flags["--x2-grid"], "density arguments a:b:k");
  auto* risk = app.add_subcommand("risk", "Monte-Carlo Bayes risk comparison with paired seeds");
  add_common(risk);
  risk->add_option("--reps", flags["--reps"], "replications R");
  risk->add_option("--x1-per-rep", flags["--x1-per-rep"], "fresh x1 draws per replication");
  risk->add_option("--competitors", flags["--competitors"], "';'-separated estimator names");
  risk->add_option("--losses", flags["--losses"], "';'-separated loss names");
  auto* val = app.add_subcommand("validate", "Oracle and structural checks for a family");
  add_common(val);
  val->add_option("--cases", flags["--cases"], "randomized cases for continuous families");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return exit_config;
  }

  std::ofstream file;
  try {
    if (!config_path.empty())
      apply_config_file(config_path, rc);
    auto set = [&](const char* key, auto&& apply) {
      if (auto it = flags.find(key); it != flags.end() && !it->second.empty())
        apply(it->second);
    };
    set("--family", [&](const std::string& v) { rc.family = v; });
    set("--prior", [&](const std::string& v) { rc.prior = v; });
    set("--engine", [&](const std::string& v) { rc.engine = v; });
    set("--samples", [&](const std::string& v) { rc.samples = v; });
    set("--out", [&](const std::string& v) { rc.out = v; });
    set("--x1-grid", [&](const std::string& v) { rc.x1_grid = v; });
    set("--t-grid", [&](const std::string& v) { rc.t_grid = v; });
    set("--x2-grid", [&](const std::string& v) { rc.x2_grid = v; });
    set("--competitors", [&](const std::string& v) { rc.competitors = v; });
    set("--losses", [&](const std::string& v) { rc.losses = v; });
    set("--node-count", [&](const std::string& v) { rc.quadrature.node_count = static_cast<int>(detail::parse_count("node-count", v)); });
    set("--panel-count", [&](const std::string& v) { rc.quadrature.panel_count = static_cast<int>(detail::parse_count("panel-count", v)); });
    set("--rel-tol", [&](const std::string& v) { rc.quadrature.rel_tol = detail::parse_real("rel-tol", v); });
    set("--abs-tol", [&](const std::string& v) { rc.quadrature.abs_tol = detail::parse_real("abs-tol", v); });
    set("--workers", [&](const std::string& v) { rc.workers = static_cast<unsigned>(detail::parse_count("workers", v)); });
    set("--seed", [&](const std::string& v) { rc.seed = detail::parse_count("seed", v); });
    set("--n", [&](const std::string& v) { rc.n = detail::parse_count("n", v); });
    set("--reps", [&](const std::string& v) { rc.reps = detail::parse_count("reps", v); });
    set("--x1-per-rep", [&](const std::string& v) { rc.x1_per_rep = detail::parse_count("x1-per-rep", v); });
    set("--cases", [&](const std::string& v) { rc.cases = detail::parse_count("cases", v); });

    std::ostream* sink = &out;
    if (!rc.out.empty()) {
      file.open(rc.out);
      if (!file)
        throw ConfigError("cannot write '" + rc.out + "'");
      sink = &file;
    }
    // tables are emitted whole: on success and on tolerance or ordering breaches
    std::ostringstream table;
    int code = exit_ok;
    try {
      code = est->parsed() ? cmd_estimate(rc, table, err)
             : risk->parsed() ? cmd_risk(rc, table, err)
                              : cmd_validate(rc, table, err);
    } catch (const ToleranceError&) {
      *sink << table.str();
      throw;
    }
    *sink << table.str();
    return code;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const SizeCapError& e) {
    err << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const RiskBudgetError& e) {
    err << "risk error: " << e.what() << '\n';
    return exit_tolerance;
  } catch (const ParseError& e) {
    err << "data error: " << e.what() << '\n';
    return exit_data;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return exit_data;
  } catch (const ImpossibleSampleError& e) {
    err << "data error: " << e.what() << '\n';
    return exit_data;
  } catch (const NullConditioningError& e) {
    err << "data error: " << e.what() << '\n';
    return exit_data;
  } catch (const NonIntegrableMeanError& e) {
    err << "tolerance error: " << e.what() << '\n';
    return exit_tolerance;
  } catch (const IntegrationError& e) {
    err << "tolerance error: " << e.what() << '\n';
    return exit_tolerance;
  } catch (const ToleranceError& e) {
    err << "tolerance error: " << e.what() << '\n';
    return exit_tolerance;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_internal;
  }
}

} // namespace ppbayes::cli
