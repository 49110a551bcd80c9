// cpqr: change-point detection in sparse quantile regression.
//
// Exit codes: 0 ok, 1 usage/parse error, 2 infeasible search, 3 numerical
// failure, 4 failed check or invalid simulation report.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cpqr/io.hpp"

namespace {

using namespace cpqr;

enum Exit { kOk = 0, kUsage = 1, kInfeasible = 2, kNumerical = 3, kCheckFailed = 4 };

struct FitArgs {
  std::string input;
  Index k = 1;
  std::string method = "lasso-type";
  double tau = 0.5;
  Index min_segment = 0;
  Index grid_step = 1;
  int threads = 1;
  std::string out = "markdown";
  std::string save;
};

struct SimArgs {
  std::string law = "normal";
  Index n = 200;
  int reps = 100;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string methods = "lasso-type,scad";
  double tau = -1.0;  // < 0: 0.5 for lasso-type, F(0) of the error law otherwise
  Index grid_step = 0;  // 0: exact search below n = 400, stride 10 from there
  std::string out = "markdown";
  std::string outdir;
};

struct CheckArgs {
  std::string fit;
  bool prop1 = false;
  Index samples = 100000;
  std::uint64_t seed = 1;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_fit(const FitArgs& a) {
  io::FitReport rep;
  rep.data = io::ingest_csv(a.input);
  {
    std::ifstream in(a.input);
    rep.covariates = io::csv_covariate_names(in);
  }
  rep.input = a.input;
  rep.method.name = a.method;
  rep.method.tau = a.tau;
  rep.k = a.k;
  SearchConfig search;
  search.min_segment = a.min_segment;
  search.grid_step = a.grid_step;
  search.threads = a.threads;
  rep.min_segment = search.resolve_min_segment(rep.data.p());
  rep.fit = detect_changepoints(rep.data, a.k, rep.method.to_method(), search);
  const io::Format fmt = io::parse_format(a.out);
  std::cout << io::render_fit(rep, fmt);
  if (!a.save.empty()) io::save_fit(rep, a.save);
  return kOk;
}

int cmd_simulate(const SimArgs& a) {
  const ErrorLaw law = parse_law(a.law);
  const io::Format fmt = io::parse_format(a.out);
  const ScenarioTruth truth = study_scenario(law, a.n);
  std::vector<SegmentMethod> methods;
  for (const auto& name : split_list(a.methods)) {
    io::MethodSettings s;
    s.name = name;
    s.tau = a.tau < 0 ? study_tau(name, truth) : a.tau;
    methods.push_back(s.to_method());
  }
  MonteCarloConfig cfg;
  cfg.n = a.n;
  cfg.reps = a.reps;
  cfg.seed = a.seed;
  cfg.threads = a.threads;
  cfg.search.grid_step = a.grid_step > 0 ? a.grid_step : (a.n >= 400 ? 10 : 1);
  const MetricsReport rep = run_monte_carlo(truth, methods, cfg);

  const std::string table = io::render_metrics(rep, fmt);
  const std::string l1 = io::render_l1_errors(rep, fmt);
  if (a.outdir.empty()) {
    std::cout << table << '\n' << l1;
  } else {
    std::filesystem::create_directories(a.outdir);
    const std::string stem = law_name(law) + "_n" + std::to_string(a.n) + "." + io::format_extension(fmt);
    const auto t1 = std::filesystem::path(a.outdir) / ("table_" + stem);
    const auto t2 = std::filesystem::path(a.outdir) / ("l1_error_" + stem);
    std::ofstream(t1) << table;
    std::ofstream(t2) << l1;
    std::cout << "wrote " << t1.string() << " and " << t2.string() << '\n';
  }
  if (rep.invalid()) {
    std::cerr << "report invalid: more than 5% of replications failed\n";
    return kCheckFailed;
  }
  return kOk;
}

int cmd_check(const CheckArgs& a) {
  bool ok = true;
  if (!a.fit.empty()) {
    const io::FitReport rep = io::load_fit(a.fit);
    const io::Recertification rc = io::recertify(rep);
    if (!rc.breaks_consistent) {
      std::cout << "fit file is inconsistent: segments do not match breaks or data\n";
      ok = false;
    }
    for (std::size_t s = 0; s < rc.residuals.size(); ++s) {
      const bool pass = rc.residuals[s] <= rc.limits[s];
      std::cout << "segment " << s + 1 << " kkt_residual " << rc.residuals[s] << " limit " << rc.limits[s]
                << (pass ? " PASS" : " FAIL") << '\n';
      ok = ok && pass;
    }
  }
  if (a.prop1) {
    const ScenarioTruth truth = study_scenario(ErrorLaw::Normal01, 200);
    const auto grid = default_phi_grid(truth.coef[0], 20, a.seed);
    const auto rep = diag_expected_g_nonnegative(
        truth.coef[0], grid, {ErrorLaw::Normal01, ErrorLaw::Cauchy, ErrorLaw::ShiftedExp}, a.samples, a.seed);
    int bad = 0;
    for (const auto& e : rep.estimates)
      if (e.violation) {
        ++bad;
        std::cout << "violation: law " << law_name(e.law) << " mean " << e.mean << " se " << e.std_error << '\n';
      }
    std::cout << "expected-G sweep: " << rep.estimates.size() << " estimates, " << bad << " below -3 SE"
              << (bad == 0 ? " PASS" : " FAIL") << '\n';
    ok = ok && bad == 0;
  }
  return ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Change-point detection in sparse quantile regression"};
  app.require_subcommand(1);

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "Estimate change-points and per-segment coefficients from a CSV file");
  f->add_option("--input", fit.input, "CSV with a header row and a column named y")->required();
  f->add_option("--k", fit.k, "Number of change-points")->check(CLI::NonNegativeNumber);
  f->add_option("--method", fit.method, "Segment estimator")->check(CLI::IsMember({"scad", "lasso-type", "quantile"}));
  f->add_option("--tau", fit.tau, "Quantile level in (0,1)");
  f->add_option("--min-segment", fit.min_segment, "Minimum segment length (0 = max(p+2, 12))")
      ->check(CLI::NonNegativeNumber);
  f->add_option("--grid-step", fit.grid_step, "Coarse-to-fine stride (1 = exact search)")->check(CLI::PositiveNumber);
  f->add_option("--threads", fit.threads, "Threads for segment costs")->check(CLI::PositiveNumber);
  f->add_option("--out", fit.out, "Output format")->check(CLI::IsMember({"csv", "markdown", "json"}));
  f->add_option("--save", fit.save, "Write the fit as JSON for later checking");

  SimArgs sim;
  auto* s = app.add_subcommand("simulate", "Monte Carlo study of the three-regime scenario");
  s->add_option("--law", sim.law, "Error law")->check(CLI::IsMember({"normal", "cauchy", "exp"}));
  s->add_option("--n", sim.n, "Sample size")->check(CLI::PositiveNumber);
  s->add_option("--reps", sim.reps, "Replications")->check(CLI::PositiveNumber);
  s->add_option("--seed", sim.seed, "Random seed");
  s->add_option("--threads", sim.threads, "Replication threads")->check(CLI::PositiveNumber);
  s->add_option("--methods", sim.methods, "Comma-separated list of scad, lasso-type, quantile");
  s->add_option("--tau", sim.tau, "Quantile level for every method (default: 0.5 for lasso-type, F(0) of the error law otherwise)");
  s->add_option("--grid-step", sim.grid_step, "Coarse-to-fine stride (1 = exact search; default 1 below n = 400, else 10)")
      ->check(CLI::PositiveNumber);
  s->add_option("--out", sim.out, "Output format")->check(CLI::IsMember({"csv", "markdown", "json"}));
  s->add_option("--outdir", sim.outdir, "Write tables to this directory instead of stdout");

  CheckArgs chk;
  auto* c = app.add_subcommand("check", "Re-certify a saved fit or run the expected-G sweep");
  c->add_option("--fit", chk.fit, "Fit saved with fit --save");
  c->add_flag("--prop1", chk.prop1, "Monte Carlo check that E[G] >= 0 on a 20-point grid, three laws");
  c->add_option("--samples", chk.samples, "Samples per grid point")->check(CLI::Range(Index{2}, Index{1} << 40));
  c->add_option("--seed", chk.seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }
  if (c->parsed() && chk.fit.empty() && !chk.prop1) {
    std::cerr << "check: give --fit PATH and/or --prop1\n";
    return kUsage;
  }

  try {
    if (f->parsed()) return cmd_fit(fit);
    if (s->parsed()) return cmd_simulate(sim);
    return cmd_check(chk);
  } catch (const InfeasibleSearch& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return kInfeasible;
  } catch (const SegmentTooShort& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return kInfeasible;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
}
