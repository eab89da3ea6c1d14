#include "ebdesign_tools/cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "ebdesign/core_types.hpp"
#include "ebdesign/csv.hpp"
#include "ebdesign/designer.hpp"
#include "ebdesign/error.hpp"
#include "ebdesign/estimators.hpp"
#include "ebdesign/risk_engine.hpp"
#include "ebdesign/sensitivity.hpp"
#include "ebdesign/simulation.hpp"

#ifndef EBDESIGN_VERSION
#define EBDESIGN_VERSION "0.0.0"
#endif

namespace ebdesign::cli {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Collects outputs, their digests and the run manifest.
class Run {
 public:
  Run(std::string subcommand, const std::string& dir) : dir_(dir) {
    manifest_["tool"] = "ebdesign";
    manifest_["version"] = EBDESIGN_VERSION;
    manifest_["subcommand"] = std::move(subcommand);
    manifest_["config"] = json::object();
    manifest_["seeds"] = json::object();
    manifest_["inputs"] = json::object();
    manifest_["outputs"] = json::object();
  }

  json& config() { return manifest_["config"]; }
  json& seeds() { return manifest_["seeds"]; }
  json& result() { return manifest_["result"]; }

  // Reads an input file and records its digest under `role`.
  std::string input(const std::string& role, const std::string& path) {
    auto text = read_text(path);
    manifest_["inputs"][role] = {{"path", path}, {"sha256", sha256_hex(text)}};
    return text;
  }

  void write(const std::string& name, const std::string& content) {
    fs::create_directories(dir_);
    const auto path = (fs::path(dir_) / name).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot write '" + path + "'");
    out << content;
    if (!out) throw Error(ErrorKind::io, "failed writing '" + path + "'");
    manifest_["outputs"][name] = sha256_hex(content);
  }

  void finish() { write("manifest.json", manifest_.dump(2) + "\n"); }

 private:
  std::string dir_;
  json manifest_;
};

template <class F>
std::string render(F&& f) {
  std::ostringstream os;
  f(os);
  return os.str();
}

std::string vector_csv(const std::string& column, std::span<const double> v) {
  std::ostringstream os;
  os << "stratum," << column << '\n';
  for (std::size_t k = 0; k < v.size(); ++k) os << k + 1 << ',' << csv::format_double(v[k]) << '\n';
  return os.str();
}

EffectVector read_vector_csv(const std::string& text, const std::string& column) {
  std::istringstream is(text);
  auto t = csv::Table::read(is);
  t.require({"stratum", column});
  const auto cs = t.column("stratum"), cv = t.column(column);
  std::vector<double> v(t.rows());
  std::vector<bool> seen(t.rows(), false);
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto k = t.integer(r, cs);
    if (k < 1 || static_cast<std::size_t>(k) > t.rows() || seen[k - 1])
      throw Error(ErrorKind::schema, "stratum column must list 1..K once each");
    seen[k - 1] = true;
    v[k - 1] = t.number(r, cv);
  }
  return EffectVector(std::move(v));
}

std::vector<UnitRecord> parse_units(const std::string& text) {
  std::istringstream is(text);
  return read_units_csv(is);
}

json propensity_json(const PropensityModel& m) {
  return {{"intercept", m.intercept},
          {"coefficients", m.coefficients},
          {"clip", m.clip},
          {"converged", m.converged},
          {"iterations", m.iterations},
          {"separation_warning", m.separation_warning}};
}

json guardrail_json(const GuardrailConfig& g) {
  return {{"ss_min", g.ss_min},
          {"delta_d", g.delta_d},
          {"detachability", to_string(g.detachability)},
          {"risk_reduction", to_string(g.risk_reduction)},
          {"baseline", to_string(g.baseline)}};
}

json report_json(const GuardrailReport& r) {
  json j = {{"passed", r.passed()}, {"floor_ok", r.floor_ok}, {"detach_ok", r.detach_ok}, {"risk_ok", r.risk_ok}};
  j["detach_ratio"] = std::isnan(r.detach_ratio) ? json(nullptr) : json(r.detach_ratio);
  if (!r.detail.empty()) j["detail"] = r.detail;
  return j;
}

// ---------------------------------------------------------------------------

struct FitObsArgs {
  std::string obs, out = ".";
  double clip = 0.01;
  double ridge = 1e-6;
  bool calibrate = false;
  unsigned threads = 1;
};

int run_fit_obs(const FitObsArgs& a, std::ostream& out, std::ostream& err) {
  Run run("fit-obs", a.out);
  auto units = parse_units(run.input("obs", a.obs));
  if (units.empty()) throw Error(ErrorKind::schema, "observational file has no rows");
  const auto K = strata_in(units);
  PropensityFitOptions fit;
  fit.clip = a.clip;
  fit.ridge = a.ridge;
  run.config() = {{"clip", a.clip}, {"ridge", a.ridge}, {"strata", K}, {"units", units.size()}};
  const auto model = fit_propensity(units, fit);
  if (model.separation_warning) err << "warning: propensity fit hit separation; refit with a heavier ridge\n";
  const auto tau_o = sipw_estimates(units, model, K);
  const auto moments = sipw_moments(units, model, K);
  run.write("moments.csv", render([&](std::ostream& os) { write_moments_csv(os, moments); }));
  run.write("tau_o.csv", vector_csv("estimate", tau_o.values()));
  run.write("propensity.json", propensity_json(model).dump(2) + "\n");
  if (a.calibrate) {
    auto cal = calibrate_gamma(units, fit);
    for (const auto& w : cal.warnings) err << "warning: " << w << '\n';
    json j = {{"gamma", cal.gamma}, {"per_covariate", cal.per_covariate}, {"warnings", cal.warnings}};
    run.write("gamma_calibration.json", j.dump(2) + "\n");
  }
  run.finish();
  out << "fit-obs: " << units.size() << " units, " << K << " strata -> " << a.out << '\n';
  return exit_ok;
}

struct SensitivityArgs {
  std::string obs, out = ".";
  double gamma = 1.0, alpha = 0.05, clip = 0.01;
  int boot = 1000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

int run_sensitivity(const SensitivityArgs& a, bool seed_given, std::ostream& out, std::ostream& err) {
  Run run("sensitivity", a.out);
  auto units = parse_units(run.input("obs", a.obs));
  if (units.empty()) throw Error(ErrorKind::schema, "observational file has no rows");
  const auto K = strata_in(units);
  PropensityFitOptions fit;
  fit.clip = a.clip;
  run.config() = {{"gamma", a.gamma}, {"alpha", a.alpha}, {"bootstrap", a.boot}, {"clip", a.clip}, {"strata", K}};
  run.seeds() = {{"bootstrap", a.seed}, {"defaulted", !seed_given}};
  if (!seed_given) err << "note: --seed not given; using " << a.seed << '\n';
  const auto model = fit_propensity(units, fit);
  if (model.separation_warning) err << "warning: propensity fit hit separation; refit with a heavier ridge\n";
  const auto tau_o = sipw_estimates(units, model, K);
  const auto bounds = sensitivity_bounds(units, model, K, a.gamma, a.alpha, {a.boot, a.seed, a.threads});
  const auto wc = worst_case_error(bounds, tau_o);
  run.write("bounds.csv", render([&](std::ostream& os) { write_bounds_csv(os, bounds); }));
  run.write("tau_o.csv", vector_csv("estimate", tau_o.values()));
  run.write("xi_prime.csv", vector_csv("xi", wc.xi_prime.values()));
  run.write("worst_case_moments.csv", render([&](std::ostream& os) { write_moments_csv(os, wc.v_prime); }));
  run.finish();
  out << "sensitivity: gamma " << a.gamma << ", alpha " << a.alpha << ", " << a.boot << " resamples -> " << a.out
      << '\n';
  return exit_ok;
}

struct DesignArgs {
  std::string heuristic, moments, tau_o, bounds, true_moments, xi, out = ".";
  std::string detach = "point", risk_reduction = "point", baseline = "neyman", family = "kappa2";
  int n_r = 1000, ss_min = 10, starts = 3;
  double gamma = 1.0, alpha = 0.05, delta_d = 1.2;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

int run_design(const DesignArgs& a, bool seed_given, std::ostream& out, std::ostream& err) {
  Run run("design", a.out);
  StratumMoments v_hat;
  {
    std::istringstream is(run.input("moments", a.moments));
    v_hat = read_moments_csv(is);
  }
  const auto K = v_hat.strata();
  GuardrailConfig g;
  g.ss_min = a.ss_min;
  g.delta_d = a.delta_d;
  g.detachability = parse_guardrail_mode(a.detach);
  g.risk_reduction = parse_guardrail_mode(a.risk_reduction);
  g.baseline = parse_baseline_rule(a.baseline);
  g.validate();
  const auto family = parse_family(a.family);
  run.config() = {{"heuristic", a.heuristic}, {"n_r", a.n_r},          {"family", a.family},
                  {"gamma", a.gamma},         {"alpha", a.alpha},      {"starts", a.starts},
                  {"guardrails", guardrail_json(g)}};
  run.seeds() = {{"search", a.seed}, {"defaulted", !seed_given}};

  const bool robust = a.heuristic == "robust";
  std::optional<SensitivityBounds> bounds;
  if (robust || g.needs_bounds()) {
    if (a.bounds.empty())
      throw Error(ErrorKind::configuration, "--bounds is required for the robust heuristic and robust guardrails");
    std::istringstream is(run.input("bounds", a.bounds));
    bounds = read_bounds_csv(is, a.gamma, a.alpha);
    if (bounds->strata() != K) throw Error(ErrorKind::schema, "bounds and moments disagree on the number of strata");
  }
  GuardrailContext ctx{g, baseline_design(g.baseline, v_hat, a.n_r, g.ss_min), v_hat, bounds};
  ctx.validate();

  SearchSettings search;
  search.threads = a.threads;
  search.mc_seed = a.seed;
  std::optional<DesignObjective> objective;
  Design design;
  if (a.heuristic == "equal") {
    design = equal_allocation(K, a.n_r);
  } else if (a.heuristic == "neyman") {
    std::vector<std::string> warnings;
    design = neyman_allocation(v_hat, a.n_r, g.ss_min, &warnings);
    for (const auto& w : warnings) err << "warning: " << w << '\n';
  } else if (a.heuristic == "naive") {
    objective = DesignObjective{v_hat, EffectVector::zeros(K), family};
  } else if (robust) {
    if (a.tau_o.empty()) throw Error(ErrorKind::configuration, "--tau-o is required for the robust heuristic");
    const auto tau_o = read_vector_csv(run.input("tau_o", a.tau_o), "estimate");
    if (tau_o.size() != K) throw Error(ErrorKind::schema, "tau_o and moments disagree on the number of strata");
    auto wc = worst_case_error(*bounds, tau_o);
    objective = DesignObjective{wc.v_prime, wc.xi_prime, family};
  } else if (a.heuristic == "oracle") {
    if (a.true_moments.empty() || a.xi.empty())
      throw Error(ErrorKind::configuration, "--true-moments and --xi are required for the oracle heuristic");
    std::istringstream is(run.input("true_moments", a.true_moments));
    auto truth = read_moments_csv(is);
    auto xi = read_vector_csv(run.input("xi", a.xi), "xi");
    if (truth.strata() != K || xi.size() != K)
      throw Error(ErrorKind::schema, "oracle inputs disagree with the moments on the number of strata");
    objective = DesignObjective{std::move(truth), std::move(xi), family};
  }

  std::string audit;
  double risk = std::numeric_limits<double>::quiet_NaN();
  if (objective) {
    auto res = multi_start_optimize(*objective, ctx, a.n_r, a.starts, a.seed, search);
    for (const auto& s : res.skipped) err << "note: start '" << s << "' violated the guardrails and was skipped\n";
    design = res.best.design;
    risk = res.best.risk;
    audit = render([&](std::ostream& os) { write_audit(os, res); });
    run.result()["iterations"] = res.best.iterations;
    run.result()["skipped_starts"] = res.skipped;
  } else {
    // Reference designs: report risk under the point moments with xi = 0.
    risk = design_risk(design, {v_hat, EffectVector::zeros(K), family}, search);
    audit = "start,iteration,risk,move_from,move_to,rejected_neighbors\n" + a.heuristic + ",0," +
            csv::format_double(risk) + ",stop,stop,0\n";
  }
  const auto report = check_guardrails(design, ctx);
  run.result()["risk"] = risk;
  run.result()["risk_sum"] = risk * static_cast<double>(K);
  run.result()["guardrails"] = report_json(report);
  if (!report.passed()) err << "warning: the " << a.heuristic << " design does not satisfy the guardrails\n";
  run.write("design.csv", render([&](std::ostream& os) { write_design_csv(os, design); }));
  run.write("audit.csv", audit);
  run.finish();
  out << "design (" << a.heuristic << "): " << design << "  risk " << csv::format_double(risk) << '\n';
  return exit_ok;
}

struct RiskArgs {
  std::string query, out;
  std::int64_t mc = 0;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

int run_risk(const RiskArgs& a, bool seed_given, std::ostream& out, std::ostream& err) {
  Run run("risk", a.out.empty() ? "." : a.out);
  json q;
  try {
    q = json::parse(run.input("query", a.query));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, std::string("risk query is not valid JSON: ") + e.what());
  }
  RiskQuery query;
  std::size_t K = 0;
  try {
    K = q.at("K").get<std::size_t>();
    query.family = parse_family(q.value("family", std::string("kappa2")));
    auto sigma = q.at("sigma").get<std::vector<double>>();
    auto xi = q.contains("xi") ? q.at("xi").get<std::vector<double>>() : std::vector<double>(K, 0.0);
    if (sigma.size() != K || xi.size() != K)
      throw Error(ErrorKind::schema, "risk query: sigma and xi must have K entries");
    query.sigma = DiagonalCovariance(std::move(sigma));
    query.xi = EffectVector(std::move(xi));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, std::string("risk query: ") + e.what() + " (expected K, sigma, xi, family)");
  }
  run.config() = {{"K", K}, {"family", to_string(query.family)}, {"mc_draws", a.mc}};
  if (a.mc > 0) {
    run.seeds() = {{"mc", a.seed}, {"defaulted", !seed_given}};
    if (!seed_given) err << "note: --seed not given; using " << a.seed << '\n';
  }

  json res = {{"family", to_string(query.family)}, {"K", K}};
  bool have_exact = false;
  try {
    const auto r = risk_exact(query);
    res["risk"] = r.value;
    res["risk_sum"] = r.value * static_cast<double>(K);
    res["upper_bound"] = r.upper_bound;
    have_exact = true;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::unsupported_closed_form || a.mc <= 0) throw;
    err << "note: " << e.what() << '\n';
  }
  if (a.mc > 0) {
    const auto m = mc_risk(query, a.mc, a.seed, a.threads);
    res["mc"] = {{"draws", m.draws},
                 {"seed", a.seed},
                 {"risk", m.mean},
                 {"std_error", m.std_error},
                 {"risk_sum", m.mean * static_cast<double>(K)}};
  }
  if (!have_exact && a.mc <= 0) throw Error(ErrorKind::unsupported_closed_form, "no risk computed");
  run.result() = res;
  const auto text = res.dump(2) + "\n";
  if (!a.out.empty()) {
    run.write("risk.json", text);
    run.finish();
  }
  out << text;
  return exit_ok;
}

struct SimulateArgs {
  std::string profile = "desk", effects = "constant", confounding = "none", out = ".";
  std::vector<std::string> designs{"equal", "neyman", "naive", "robust:1.0", "robust:1.1",
                                   "robust:1.2", "robust:1.5", "oracle"};
  std::string detach = "point", risk_reduction = "point", baseline = "neyman";
  int reps = 0, ss_min = 10, starts = 3, boot = 1000;
  std::size_t superpop = 0;
  double delta_d = 1.2, alpha = 0.05;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

int run_simulate(const SimulateArgs& a, std::ostream& out, std::ostream& err) {
  Run run("simulate", a.out);
  SimConfig c = a.profile == "paper" ? SimConfig::paper() : SimConfig::desk();
  c.effects = parse_effect_model(a.effects);
  if (a.confounding == "drop3") c.unmeasured = {2};
  if (a.reps > 0) c.reps = a.reps;
  if (a.superpop > 0) c.superpop_size = a.superpop;
  c.seed = a.seed;
  c.threads = a.threads;
  c.guardrails.ss_min = a.ss_min;
  c.guardrails.delta_d = a.delta_d;
  c.guardrails.detachability = parse_guardrail_mode(a.detach);
  c.guardrails.risk_reduction = parse_guardrail_mode(a.risk_reduction);
  c.guardrails.baseline = parse_baseline_rule(a.baseline);
  c.obs_alpha = a.alpha;
  c.bootstrap = a.boot;
  c.extra_starts = a.starts;
  run.config() = {{"profile", a.profile},
                  {"effects", a.effects},
                  {"confounding", a.confounding},
                  {"designs", a.designs},
                  {"superpop_size", c.superpop_size},
                  {"n_obs", c.n_obs},
                  {"n_r", c.n_r},
                  {"reps", c.reps},
                  {"obs_alpha", c.obs_alpha},
                  {"bootstrap", c.bootstrap},
                  {"extra_starts", c.extra_starts},
                  {"guardrails", guardrail_json(c.guardrails)}};
  run.seeds() = {{"master", c.seed}};

  const auto o = run_simulation(c, a.designs);
  for (const auto& w : o.warnings) err << "warning: " << w << '\n';
  const auto text = render([&](std::ostream& os) { write_risk_table_text(os, o.table); });
  run.write("risk_table.csv", render([&](std::ostream& os) { write_risk_table_csv(os, o.table); }));
  run.write("risk_table.txt", text);
  run.write("designs.csv", render([&](std::ostream& os) { write_designs_csv(os, o); }));
  run.write("guardrails.csv", render([&](std::ostream& os) { write_guardrail_audit(os, o); }));
  std::ostringstream search;
  search << "design,start,iteration,risk,move_from,move_to,rejected_neighbors\n";
  for (const auto& r : o.designs) {
    if (!r.search) continue;
    std::istringstream lines(render([&](std::ostream& os) { write_audit(os, *r.search); }));
    std::string line;
    std::getline(lines, line);  // header
    while (std::getline(lines, line)) search << r.name << ',' << line << '\n';
  }
  run.write("search_audit.csv", search.str());
  run.result() = {{"effect_scale", o.calibration.T},
                  {"cohens_d", o.calibration.d},
                  {"covariance_repaired", o.covariance_repaired},
                  {"warnings", o.warnings},
                  {"tau", o.tau.values()},
                  {"tau_o", o.tau_o.values()}};
  run.finish();
  out << text;
  return exit_ok;
}

void add_threads(CLI::App* sub, unsigned& threads) {
  sub->add_option("--threads", threads, "Worker threads (never changes results)")->check(CLI::Range(1u, 1024u));
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorKind::io, "sha256 failed");
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Design stratified trials for shrinkage toward observational estimates."};
  app.name("ebdesign");
  app.require_subcommand(1);
  app.set_version_flag("--version", EBDESIGN_VERSION);

  const std::vector<std::string> modes{"off", "point", "robust"};
  const std::vector<std::string> rules{"equal", "neyman"};

  FitObsArgs fo;
  auto* fit = app.add_subcommand("fit-obs", "Fit the propensity model and SIPW estimates for an observational CSV");
  fit->add_option("--obs", fo.obs, "Observational units CSV (unit_id,x1..xp,w,y,stratum)")->required();
  fit->add_option("--out", fo.out, "Output directory")->capture_default_str();
  fit->add_option("--clip", fo.clip, "Propensity clipping level")->capture_default_str()->check(CLI::Range(0.0, 0.5));
  fit->add_option("--ridge", fo.ridge, "Ridge penalty on the propensity slopes")->capture_default_str();
  fit->add_flag("--calibrate-gamma", fo.calibrate, "Also estimate a sensitivity parameter by dropping covariates");
  add_threads(fit, fo.threads);

  SensitivityArgs sa;
  auto* sens = app.add_subcommand("sensitivity", "Bootstrap bounds on the stratum arm means under a sensitivity model");
  sens->add_option("--obs", sa.obs, "Observational units CSV")->required();
  sens->add_option("--gamma", sa.gamma, "Sensitivity parameter (>= 1)")->capture_default_str()->check(CLI::Range(1.0, 1e6));
  sens->add_option("--alpha", sa.alpha, "Type I error for the bounds")->capture_default_str()->check(CLI::Range(1e-6, 0.999999));
  sens->add_option("--boot", sa.boot, "Bootstrap resamples")->capture_default_str()->check(CLI::Range(1, 10'000'000));
  auto* sens_seed = sens->add_option("--seed", sa.seed, "Bootstrap seed")->capture_default_str();
  sens->add_option("--clip", sa.clip, "Propensity clipping level")->capture_default_str()->check(CLI::Range(0.0, 0.5));
  sens->add_option("--out", sa.out, "Output directory")->capture_default_str();
  add_threads(sens, sa.threads);

  DesignArgs da;
  auto* des = app.add_subcommand("design", "Allocate trial units to strata and arms");
  des->add_option("--heuristic", da.heuristic, "equal|neyman|naive|robust|oracle")
      ->required()
      ->check(CLI::IsMember({"equal", "neyman", "naive", "robust", "oracle"}));
  des->add_option("--moments", da.moments, "Point moments CSV (stratum,mu_t,mu_c,var_t,var_c)")->required();
  des->add_option("--n", da.n_r, "Trial size")->capture_default_str()->check(CLI::Range(2, 100'000'000));
  des->add_option("--tau-o", da.tau_o, "Observational estimates CSV (stratum,estimate); robust");
  des->add_option("--bounds", da.bounds, "Sensitivity bounds CSV; robust heuristic or robust guardrails");
  des->add_option("--gamma", da.gamma, "Gamma the bounds were computed at")->capture_default_str();
  des->add_option("--alpha", da.alpha, "Alpha the bounds were computed at")->capture_default_str();
  des->add_option("--true-moments", da.true_moments, "True moments CSV; oracle");
  des->add_option("--xi", da.xi, "True error vector CSV (stratum,xi); oracle");
  des->add_option("--family", da.family, "Estimator whose risk is minimized")->capture_default_str();
  des->add_option("--ss-min", da.ss_min, "Minimum units per cell")->capture_default_str()->check(CLI::Range(1, 1'000'000));
  des->add_option("--delta-d", da.delta_d, "Detachability tolerance (>= 1)")->capture_default_str();
  des->add_option("--detach", da.detach, "Detachability guardrail")->capture_default_str()->check(CLI::IsMember(modes));
  des->add_option("--risk-reduction", da.risk_reduction, "Risk-reduction guardrail")
      ->capture_default_str()
      ->check(CLI::IsMember(modes));
  des->add_option("--baseline", da.baseline, "Baseline design for detachability")
      ->capture_default_str()
      ->check(CLI::IsMember(rules));
  des->add_option("--starts", da.starts, "Random starts besides equal and Neyman")->capture_default_str()->check(CLI::Range(0, 1000));
  auto* des_seed = des->add_option("--seed", da.seed, "Seed for random starts and Monte Carlo objectives")->capture_default_str();
  des->add_option("--out", da.out, "Output directory")->capture_default_str();
  add_threads(des, da.threads);

  RiskArgs ra;
  auto* risk = app.add_subcommand("risk", "Exact (and optionally Monte Carlo) risk for a JSON query {K, sigma, xi, family}");
  risk->add_option("--query", ra.query, "Query JSON file")->required();
  risk->add_option("--mc", ra.mc, "Monte Carlo draws (0 = off, otherwise >= 10000)")->capture_default_str();
  auto* risk_seed = risk->add_option("--seed", ra.seed, "Monte Carlo seed")->capture_default_str();
  risk->add_option("--out", ra.out, "Directory for risk.json and the manifest (default: stdout only)");
  add_threads(risk, ra.threads);

  SimulateArgs si;
  auto* sim = app.add_subcommand("simulate", "Run the replication study and print the risk table");
  sim->add_option("--profile", si.profile, "paper|desk")->capture_default_str()->check(CLI::IsMember({"paper", "desk"}));
  sim->add_option("--effects", si.effects, "constant|linear|quadratic")
      ->capture_default_str()
      ->check(CLI::IsMember({"constant", "linear", "quadratic"}));
  sim->add_option("--confounding", si.confounding, "none|drop3 (hide the third covariate)")
      ->capture_default_str()
      ->check(CLI::IsMember({"none", "drop3"}));
  sim->add_option("--designs", si.designs, "Comma list of equal,neyman,naive,robust:<gamma>,oracle")
      ->delimiter(',')
      ->capture_default_str();
  sim->add_option("--seed", si.seed, "Master seed")->required();
  sim->add_option("--reps", si.reps, "Override the profile's replication count")->check(CLI::Range(1, 100'000'000));
  sim->add_option("--superpop", si.superpop, "Override the profile's super-population size");
  sim->add_option("--ss-min", si.ss_min, "Minimum units per cell")->capture_default_str()->check(CLI::Range(1, 1'000'000));
  sim->add_option("--delta-d", si.delta_d, "Detachability tolerance (>= 1)")->capture_default_str();
  sim->add_option("--detach", si.detach, "Detachability guardrail")->capture_default_str()->check(CLI::IsMember(modes));
  sim->add_option("--risk-reduction", si.risk_reduction, "Risk-reduction guardrail")
      ->capture_default_str()
      ->check(CLI::IsMember(modes));
  sim->add_option("--baseline", si.baseline, "Baseline design for detachability")
      ->capture_default_str()
      ->check(CLI::IsMember(rules));
  sim->add_option("--alpha", si.alpha, "Observational-study alpha for robust designs")->capture_default_str();
  sim->add_option("--boot", si.boot, "Bootstrap resamples for robust designs")->capture_default_str();
  sim->add_option("--starts", si.starts, "Random greedy starts")->capture_default_str()->check(CLI::Range(0, 1000));
  sim->add_option("--out", si.out, "Output directory")->capture_default_str();
  add_threads(sim, si.threads);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_ok : exit_usage;
  }

  try {
    if (fit->parsed()) return run_fit_obs(fo, out, err);
    if (sens->parsed()) return run_sensitivity(sa, sens_seed->count() > 0, out, err);
    if (des->parsed()) return run_design(da, des_seed->count() > 0, out, err);
    if (risk->parsed()) return run_risk(ra, risk_seed->count() > 0, out, err);
    if (sim->parsed()) return run_simulate(si, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_runtime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_runtime;
  }
  return exit_usage;
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace ebdesign::cli
