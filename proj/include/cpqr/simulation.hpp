#ifndef CPQR_SIMULATION_HPP
#define CPQR_SIMULATION_HPP

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "cpqr/changepoint.hpp"
#include "cpqr/loss.hpp"
#include "cpqr/types.hpp"

namespace cpqr {

// ---------------------------------------------------------------------------
// Error laws

enum class ErrorLaw { Normal01, Cauchy, ShiftedExp };

inline std::string law_name(ErrorLaw law) {
  switch (law) {
    case ErrorLaw::Normal01: return "normal";
    case ErrorLaw::Cauchy: return "cauchy";
    case ErrorLaw::ShiftedExp: return "exp";
  }
  return "?";
}

inline ErrorLaw parse_law(const std::string& s) {
  if (s == "normal") return ErrorLaw::Normal01;
  if (s == "cauchy") return ErrorLaw::Cauchy;
  if (s == "exp") return ErrorLaw::ShiftedExp;
  throw InvalidArgument("unknown error law '" + s + "' (expected normal, cauchy or exp)");
}

/// ShiftedExp is Exp(1) - 1.5.
inline constexpr double kExpShift = 1.5;

inline double law_cdf(ErrorLaw law, double x) {
  switch (law) {
    case ErrorLaw::Normal01: return 0.5 * std::erfc(-x / std::numbers::sqrt2);
    case ErrorLaw::Cauchy: return 0.5 + std::atan(x) / std::numbers::pi;
    case ErrorLaw::ShiftedExp: return x > -kExpShift ? 1.0 - std::exp(-(x + kExpShift)) : 0.0;
  }
  return 0.0;
}

inline double law_density(ErrorLaw law, double x) {
  switch (law) {
    case ErrorLaw::Normal01: return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    case ErrorLaw::Cauchy: return 1.0 / (std::numbers::pi * (1.0 + x * x));
    case ErrorLaw::ShiftedExp: return x >= -kExpShift ? std::exp(-(x + kExpShift)) : 0.0;
  }
  return 0.0;
}

/// F(0): the quantile level at which the error has quantile zero.
inline double law_tau_star(ErrorLaw law) { return law_cdf(law, 0.0); }
inline double law_f0(ErrorLaw law) { return law_density(law, 0.0); }

// ---------------------------------------------------------------------------
// Scenario

inline constexpr Index kScenarioP = 10;

struct ScenarioTruth {
  std::vector<Index> breaks;      ///< true (l_1, l_2)
  std::vector<Vector> coef;       ///< one length-10 vector per segment
  ErrorLaw law = ErrorLaw::Normal01;
  double tau_star = 0.5;
  double f0 = 0.0;

  Index segments() const { return static_cast<Index>(coef.size()); }

  /// Indices of nonzero true coefficients in segment r.
  std::vector<Index> support(Index r) const {
    std::vector<Index> s;
    const Vector& c = coef[static_cast<std::size_t>(r)];
    for (Index j = 0; j < c.size(); ++j)
      if (c[j] != 0.0) s.push_back(j);
    return s;
  }
};

/// True breaks: (30, 100) at n = 200, scaled proportionally with rounding;
/// the small-sample layout n = 60 uses (17, 40).
inline std::vector<Index> scenario_breaks(Index n) {
  if (n == 60) return {17, 40};
  const auto l1 = static_cast<Index>(std::lround(30.0 * static_cast<double>(n) / 200.0));
  const auto l2 = static_cast<Index>(std::lround(100.0 * static_cast<double>(n) / 200.0));
  if (l1 < 1 || l2 <= l1 || l2 >= n) throw InvalidArgument("n too small for the three-segment scenario");
  return {l1, l2};
}

inline ScenarioTruth study_scenario(ErrorLaw law, Index n) {
  static const double kCoef[3][10] = {{1, 0, 4, 0, -3, 5, 6, 0, -1, 0},
                                      {0, 3, -4, -3, 0, 1, 2, -3, 0, 10},
                                      {1, 3, 4, 0, 0, 1, 0, 0, 0, 1}};
  ScenarioTruth t;
  t.breaks = scenario_breaks(n);
  for (const auto& row : kCoef) {
    Vector c(kScenarioP);
    for (Index j = 0; j < kScenarioP; ++j) c[j] = row[j];
    t.coef.push_back(c);
  }
  t.law = law;
  t.tau_star = law_tau_star(law);
  t.f0 = law_f0(law);
  return t;
}

/// Default quantile level of a method in the study. LASSO-type is a median
/// estimator; SCAD and the plain quantile fit use F(0) of the error law.
inline double study_tau(const std::string& method, const ScenarioTruth& truth) {
  return method == "lasso-type" ? 0.5 : truth.tau_star;
}

// ---------------------------------------------------------------------------
// Randomness

/// Identifies an independent random stream: (seed, stream) fully determines
/// every draw. Streams are derived by SplitMix64 hashing, so replication r
/// sees the same numbers regardless of thread scheduling.
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  static std::uint64_t splitmix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine() const {
    std::seed_seq seq{static_cast<std::uint32_t>(splitmix(seed)), static_cast<std::uint32_t>(splitmix(seed) >> 32),
                      static_cast<std::uint32_t>(splitmix(seed ^ splitmix(stream))),
                      static_cast<std::uint32_t>(splitmix(stream + 0x632BE59BD9B4E019ULL))};
    return std::mt19937_64(seq);
  }
};

/// Column means of the scenario covariates: X3 ~ N(2,1), X4 ~ N(4,1), X5 ~ N(1,1), others N(0,1).
inline Vector covariate_means() {
  Vector mu = Vector::Zero(kScenarioP);
  mu[2] = 2.0;
  mu[3] = 4.0;
  mu[4] = 1.0;
  return mu;
}

inline Matrix sample_covariates(Index n, std::mt19937_64& rng) {
  if (n < 1) throw InvalidArgument("n must be >= 1");
  const Vector mu = covariate_means();
  std::normal_distribution<double> g;
  Matrix x(n, kScenarioP);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < kScenarioP; ++j) x(i, j) = mu[j] + g(rng);
  return x;
}

inline Vector sample_errors(ErrorLaw law, Index n, std::mt19937_64& rng) {
  if (n < 1) throw InvalidArgument("n must be >= 1");
  Vector e(n);
  switch (law) {
    case ErrorLaw::Normal01: {
      std::normal_distribution<double> d;
      for (Index i = 0; i < n; ++i) e[i] = d(rng);
      break;
    }
    case ErrorLaw::Cauchy: {
      std::cauchy_distribution<double> d;
      for (Index i = 0; i < n; ++i) e[i] = d(rng);
      break;
    }
    case ErrorLaw::ShiftedExp: {
      std::exponential_distribution<double> d(1.0);
      for (Index i = 0; i < n; ++i) e[i] = d(rng) - kExpShift;
      break;
    }
  }
  return e;
}

/// Y_i = X_i^t phi_r + eps_i where observation i (1-based) lies in segment r
/// when l_{r-1} < i <= l_r. `zero_noise` drops eps (test hook).
inline Dataset generate_dataset(const ScenarioTruth& truth, Index n, std::mt19937_64& rng, bool zero_noise = false) {
  Matrix x = sample_covariates(n, rng);
  const Vector e = sample_errors(truth.law, n, rng);
  Segmentation seg{truth.breaks};
  const auto b = seg.bounds(n);
  if (b.size() != truth.coef.size() + 1) throw DimensionMismatch("scenario has mismatched breaks and coefficients");
  Vector y(n);
  for (std::size_t r = 1; r < b.size(); ++r)
    for (Index i = b[r - 1]; i < b[r]; ++i) y[i] = x.row(i).dot(truth.coef[r - 1]) + (zero_noise ? 0.0 : e[i]);
  return Dataset(std::move(y), std::move(x));
}

// ---------------------------------------------------------------------------
// Monte Carlo driver

struct MonteCarloConfig {
  Index n = 200;
  Index k = 2;
  int reps = 100;
  std::uint64_t seed = 1;
  int threads = 1;
  bool zero_noise = false;
  SearchConfig search;
  SolverConfig solver;
  /// Reports with more failed replications than this fraction are invalid.
  double max_failure_fraction = 0.05;
};

/// Outcome of one method on one replication.
struct ReplicationOutcome {
  bool failed = false;
  std::string error;
  std::vector<Index> breaks;
  std::vector<Vector> coefficients;
  double kkt_ratio = 0.0;  ///< worst kkt_residual / kkt_limit over the segments
};

namespace detail {
inline double worst_kkt_ratio(const ChangePointFit& fit) {
  double w = 0.0;
  for (const auto& f : fit.segment_fits) w = std::max(w, f.kkt_residual / kkt_limit(f.j2 - f.j1));
  return w;
}
}  // namespace detail

struct MethodMetrics {
  std::string method;
  double tau = 0.5;
  std::vector<double> median_breaks;
  double true_zero_pct = 0.0;
  double false_zero_pct = 0.0;
  /// Per segment: mean absolute error over the true nonzero coordinates,
  /// averaged over valid replications.
  std::vector<double> l1_error;
  int replications = 0;          ///< valid ones
  int failures = 0;
  bool invalid = false;
  double max_kkt_ratio = 0.0;  ///< over valid replications; <= 1 means every fit is certified
  // raw counts behind the percentages
  long true_zero_hits = 0;
  long true_zero_total = 0;
  long false_zero_hits = 0;
  long nonzero_total = 0;
  std::vector<std::vector<Index>> breaks;  ///< per valid replication, in replication order
};

struct MetricsReport {
  ErrorLaw law = ErrorLaw::Normal01;
  Index n = 0;
  int reps = 0;
  std::uint64_t seed = 0;
  double tau_star = 0.5;
  std::vector<Index> true_breaks;
  std::vector<MethodMetrics> methods;

  bool invalid() const {
    return std::any_of(methods.begin(), methods.end(), [](const MethodMetrics& m) { return m.invalid; });
  }
};

namespace detail {

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

/// Runs body(rep) for rep in [0, reps) on a pool; exceptions from body are rethrown.
template <class Body>
void parallel_reps(int reps, int threads, Body body) {
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex err_mutex;
  auto worker = [&] {
    for (int r = next++; r < reps; r = next++) {
      try {
        body(r);
      } catch (...) {
        std::lock_guard lock(err_mutex);
        if (!err) err = std::current_exception();
      }
    }
  };
  const int nt = std::max(1, std::min(threads, reps));
  if (nt == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (err) std::rethrow_exception(err);
}

}  // namespace detail

/// Aggregates per-replication outcomes (in replication order) into the study metrics.
inline MethodMetrics aggregate_outcomes(const std::string& name, double tau, const ScenarioTruth& truth,
                                        const std::vector<ReplicationOutcome>& outcomes, double max_failure_fraction) {
  MethodMetrics m;
  m.method = name;
  m.tau = tau;
  const auto segs = static_cast<std::size_t>(truth.segments());
  m.l1_error.assign(segs, 0.0);
  std::vector<std::vector<double>> coords(truth.breaks.size());
  for (const auto& o : outcomes) {
    if (o.failed) {
      ++m.failures;
      continue;
    }
    ++m.replications;
    m.max_kkt_ratio = std::max(m.max_kkt_ratio, o.kkt_ratio);
    m.breaks.push_back(o.breaks);
    for (std::size_t r = 0; r < o.breaks.size() && r < coords.size(); ++r)
      coords[r].push_back(static_cast<double>(o.breaks[r]));
    for (std::size_t r = 0; r < segs; ++r) {
      const Vector& est = o.coefficients[r];
      const Vector& tru = truth.coef[r];
      const double zt = zero_threshold(est);
      for (Index j = 0; j < tru.size(); ++j) {
        const bool est_zero = std::abs(est[j]) < zt;
        if (tru[j] == 0.0) {
          ++m.true_zero_total;
          if (est_zero) ++m.true_zero_hits;
        } else {
          ++m.nonzero_total;
          if (est_zero) ++m.false_zero_hits;
          m.l1_error[r] += std::abs(est[j] - tru[j]);
        }
      }
    }
  }
  for (auto& c : coords) m.median_breaks.push_back(detail::median_of(c));
  if (m.replications > 0)
    for (std::size_t r = 0; r < segs; ++r) {
      const auto q = static_cast<double>(truth.support(static_cast<Index>(r)).size());
      m.l1_error[r] /= static_cast<double>(m.replications) * std::max(q, 1.0);
    }
  m.true_zero_pct = m.true_zero_total > 0 ? 100.0 * static_cast<double>(m.true_zero_hits) / static_cast<double>(m.true_zero_total) : 0.0;
  m.false_zero_pct = m.nonzero_total > 0 ? 100.0 * static_cast<double>(m.false_zero_hits) / static_cast<double>(m.nonzero_total) : 0.0;
  const int total = m.replications + m.failures;
  m.invalid = m.replications == 0 || static_cast<double>(m.failures) > max_failure_fraction * total;
  return m;
}

/// Replicates the scenario `cfg.reps` times; every method sees the same data
/// in a given replication. Solver failures are counted, not thrown.
inline MetricsReport run_monte_carlo(const ScenarioTruth& truth, const std::vector<SegmentMethod>& methods,
                                     const MonteCarloConfig& cfg) {
  if (cfg.reps < 1) throw InvalidArgument("reps must be >= 1");
  if (methods.empty()) throw InvalidArgument("at least one method is required");
  for (const auto& m : methods) validate_method(m);
  cfg.search.validate();
  cfg.solver.validate();

  const std::size_t nm = methods.size();
  std::vector<std::vector<ReplicationOutcome>> out(nm, std::vector<ReplicationOutcome>(static_cast<std::size_t>(cfg.reps)));
  detail::parallel_reps(cfg.reps, cfg.threads, [&](int rep) {
    auto rng = RngStream{cfg.seed, static_cast<std::uint64_t>(rep)}.engine();
    const Dataset data = generate_dataset(truth, cfg.n, rng, cfg.zero_noise);
    for (std::size_t mi = 0; mi < nm; ++mi) {
      ReplicationOutcome& o = out[mi][static_cast<std::size_t>(rep)];
      try {
        SearchConfig sc = cfg.search;
        sc.threads = 1;
        const ChangePointFit fit = detect_changepoints(data, cfg.k, methods[mi], sc, cfg.solver);
        o.breaks = fit.segmentation.breaks;
        for (const auto& f : fit.segment_fits) o.coefficients.push_back(f.coefficients);
        o.kkt_ratio = detail::worst_kkt_ratio(fit);
      } catch (const NumericalFailure& e) {
        o.failed = true;
        o.error = e.what();
      }
    }
  });

  MetricsReport rep;
  rep.law = truth.law;
  rep.n = cfg.n;
  rep.reps = cfg.reps;
  rep.seed = cfg.seed;
  rep.tau_star = truth.tau_star;
  rep.true_breaks = truth.breaks;
  for (std::size_t mi = 0; mi < nm; ++mi)
    rep.methods.push_back(
        aggregate_outcomes(method_name(methods[mi]), method_tau(methods[mi]), truth, out[mi], cfg.max_failure_fraction));
  return rep;
}

// ---------------------------------------------------------------------------
// Diagnostics

struct ExpectationEstimate {
  ErrorLaw law = ErrorLaw::Normal01;
  Vector phi;
  double mean = 0.0;
  double std_error = 0.0;
  bool violation = false;  ///< mean < -3 standard errors
};

struct PositiveExpectationReport {
  std::vector<ExpectationEstimate> estimates;
  bool ok() const {
    return std::none_of(estimates.begin(), estimates.end(), [](const ExpectationEstimate& e) { return e.violation; });
  }
};

/// `count` points phi0 + t u: random unit directions u, radii t log-spaced on [0.01, 5].
inline std::vector<Vector> default_phi_grid(const Vector& phi0, int count, std::uint64_t seed) {
  if (count < 1) throw InvalidArgument("grid needs at least one point");
  auto rng = RngStream{seed, 0x70726F70ULL}.engine();
  std::normal_distribution<double> g;
  std::vector<Vector> grid;
  for (int k = 0; k < count; ++k) {
    Vector u(phi0.size());
    for (Index j = 0; j < u.size(); ++j) u[j] = g(rng);
    u /= u.norm();
    const double t = count == 1 ? 1.0 : 0.01 * std::pow(500.0, static_cast<double>(k) / (count - 1));
    grid.push_back(phi0 + t * u);
  }
  return grid;
}

/// Monte Carlo estimate of E[rho_tau(eps - X^t(phi - phi0)) - rho_tau(eps)] at
/// tau = F(0), for each phi in the grid and each law in `laws`. Covariates
/// follow the scenario design.
inline PositiveExpectationReport diag_expected_g_nonnegative(const Vector& phi0, const std::vector<Vector>& phi_grid,
                                                             const std::vector<ErrorLaw>& laws, Index n_samples,
                                                             std::uint64_t seed) {
  if (phi_grid.empty()) throw InvalidArgument("phi grid must be nonempty");
  if (n_samples < 2) throw InvalidArgument("need at least 2 samples");
  PositiveExpectationReport rep;
  std::uint64_t stream = 0;
  for (ErrorLaw law : laws) {
    const double tau = law_tau_star(law);
    for (const Vector& phi : phi_grid) {
      if (phi.size() != phi0.size()) throw DimensionMismatch("phi grid entry has wrong length");
      auto rng = RngStream{seed, stream++}.engine();
      const Vector h = phi0 - phi;
      Matrix x;
      if (phi0.size() == kScenarioP) {
        x = sample_covariates(n_samples, rng);
      } else {
        std::normal_distribution<double> g;
        x.resize(n_samples, phi0.size());
        for (Index i = 0; i < n_samples; ++i)
          for (Index j = 0; j < phi0.size(); ++j) x(i, j) = g(rng);
      }
      const Vector e = sample_errors(law, n_samples, rng);
      double sum = 0.0, sum2 = 0.0;
      for (Index i = 0; i < n_samples; ++i) {
        const double g = check_loss(e[i] + x.row(i).dot(h), tau) - check_loss(e[i], tau);
        sum += g;
        sum2 += g * g;
      }
      const double nn = static_cast<double>(n_samples);
      ExpectationEstimate est;
      est.law = law;
      est.phi = phi;
      est.mean = sum / nn;
      est.std_error = std::sqrt(std::max(0.0, (sum2 - nn * est.mean * est.mean) / (nn - 1.0)) / nn);
      est.violation = est.mean < -3.0 * est.std_error;
      rep.estimates.push_back(std::move(est));
    }
  }
  return rep;
}

struct NormalityCoordinate {
  Index index = 0;      ///< coefficient index within the segment
  double mean = 0.0;    ///< sample mean of sqrt(m) (phi_hat - phi0)
  double variance = 0.0;
  double target_variance = 0.0;  ///< tau (1 - tau) / f(0)^2 (Omega^-1)_kk
  double mean_bound = 0.0;       ///< 3 sd / sqrt(reps), sd the sample standard deviation
};

struct NormalityReport {
  Index segment = 0;
  Index segment_length = 0;
  double tau = 0.5;
  int replications = 0;
  int failures = 0;
  double max_kkt_ratio = 0.0;
  std::vector<NormalityCoordinate> coords;
};

/// Index of the longest true segment.
inline Index largest_segment(const ScenarioTruth& truth, Index n) {
  const auto b = Segmentation{truth.breaks}.bounds(n);
  Index best = 0;
  for (std::size_t r = 1; r < b.size(); ++r)
    if (b[r] - b[r - 1] > b[static_cast<std::size_t>(best) + 1] - b[static_cast<std::size_t>(best)])
      best = static_cast<Index>(r - 1);
  return best;
}

/// Replicates the scenario, estimates breaks and coefficients with `method`,
/// and summarizes sqrt(m) (phi_hat - phi0) on the true support of `segment`
/// against the limiting normal law. Omega is the Gram matrix of the segment
/// averaged over replications.
inline NormalityReport diag_asymptotic_normality(const ScenarioTruth& truth, const SegmentMethod& method,
                                                 const MonteCarloConfig& cfg, Index segment) {
  if (cfg.reps < 2) throw InvalidArgument("reps must be >= 2");
  const auto b = Segmentation{truth.breaks}.bounds(cfg.n);
  if (segment < 0 || segment >= truth.segments()) throw InvalidArgument("segment index out of range");
  const Index lo = b[static_cast<std::size_t>(segment)], hi = b[static_cast<std::size_t>(segment) + 1];
  const Index m = hi - lo;
  const std::vector<Index> support = truth.support(segment);
  const auto q = static_cast<Index>(support.size());
  const Vector& phi0 = truth.coef[static_cast<std::size_t>(segment)];

  struct Rep {
    bool failed = false;
    Vector z;
    Matrix gram;
    double kkt_ratio = 0.0;
  };
  std::vector<Rep> reps(static_cast<std::size_t>(cfg.reps));
  detail::parallel_reps(cfg.reps, cfg.threads, [&](int r) {
    auto rng = RngStream{cfg.seed, static_cast<std::uint64_t>(r)}.engine();
    const Dataset data = generate_dataset(truth, cfg.n, rng, cfg.zero_noise);
    Rep& out = reps[static_cast<std::size_t>(r)];
    Matrix xs(m, q);
    for (Index i = 0; i < m; ++i)
      for (Index k = 0; k < q; ++k) xs(i, k) = data.x()(lo + i, support[static_cast<std::size_t>(k)]);
    out.gram = xs.transpose() * xs / static_cast<double>(m);
    try {
      SearchConfig sc = cfg.search;
      sc.threads = 1;
      const ChangePointFit fit = detect_changepoints(data, cfg.k, method, sc, cfg.solver);
      out.kkt_ratio = detail::worst_kkt_ratio(fit);
      const Vector& est = fit.segment_fits[static_cast<std::size_t>(segment)].coefficients;
      out.z.resize(q);
      for (Index k = 0; k < q; ++k) {
        const Index j = support[static_cast<std::size_t>(k)];
        out.z[k] = std::sqrt(static_cast<double>(m)) * (est[j] - phi0[j]);
      }
    } catch (const NumericalFailure&) {
      out.failed = true;
    }
  });

  NormalityReport rep;
  rep.segment = segment;
  rep.segment_length = m;
  rep.tau = method_tau(method);
  Matrix omega = Matrix::Zero(q, q);
  Vector sum = Vector::Zero(q), sum2 = Vector::Zero(q);
  for (const auto& r : reps) {
    omega += r.gram;
    if (r.failed) {
      ++rep.failures;
      continue;
    }
    ++rep.replications;
    rep.max_kkt_ratio = std::max(rep.max_kkt_ratio, r.kkt_ratio);
    sum += r.z;
    sum2 += r.z.cwiseProduct(r.z);
  }
  omega /= static_cast<double>(cfg.reps);
  const Matrix omega_inv = omega.inverse();
  const double f0 = law_density(truth.law, 0.0);
  const double scale = rep.tau * (1.0 - rep.tau) / (f0 * f0);
  const double nr = static_cast<double>(rep.replications);
  for (Index k = 0; k < q; ++k) {
    NormalityCoordinate c;
    c.index = support[static_cast<std::size_t>(k)];
    c.mean = sum[k] / nr;
    c.variance = (sum2[k] - nr * c.mean * c.mean) / (nr - 1.0);
    c.target_variance = scale * omega_inv(k, k);
    c.mean_bound = 3.0 * std::sqrt(c.variance) / std::sqrt(nr);
    rep.coords.push_back(c);
  }
  return rep;
}

}  // namespace cpqr

#endif  // CPQR_SIMULATION_HPP
