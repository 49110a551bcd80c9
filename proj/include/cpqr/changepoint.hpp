#ifndef CPQR_CHANGEPOINT_HPP
#define CPQR_CHANGEPOINT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "cpqr/solver.hpp"
#include "cpqr/types.hpp"

namespace cpqr {

// ---------------------------------------------------------------------------
// Per-segment estimators

/// SCAD fit with lambda = lambda_scale * m^lambda_exponent on a segment of length m.
struct ScadMethod {
  double tau = 0.5;
  double a = kDefaultScadA;
  double lambda_scale = 1.0;
  double lambda_exponent = -0.4;

  double lambda(Index m) const { return lambda_scale * std::pow(static_cast<double>(m), lambda_exponent); }
};

/// Adaptive weighted-L1 fit: QLASSO pilot, then weights m^weight_exponent / |pilot_j|.
/// The segment loss is loss_scale * sum rho_tau (loss_scale = 2 gives sum |r| at
/// tau = 1/2); it is solved as sum rho_tau + (w / loss_scale)^t |phi|, so fit
/// objectives and weights are reported on the rho_tau scale.
struct LassoTypeMethod {
  double tau = 0.5;
  double weight_exponent = 0.4;
  double loss_scale = 2.0;

  Vector weights(const SegmentFit& pilot, Index m) const {
    const double scale = std::pow(static_cast<double>(m), weight_exponent);
    Vector w(pilot.coefficients.size());
    for (Index j = 0; j < w.size(); ++j) w[j] = scale / std::max(std::abs(pilot.coefficients[j]), kPilotFloor);
    return w;
  }

  Vector solver_weights(const SegmentFit& pilot, Index m) const { return weights(pilot, m) / loss_scale; }
};

/// Unpenalized quantile regression.
struct PlainQuantile {
  double tau = 0.5;
};

using SegmentMethod = std::variant<ScadMethod, LassoTypeMethod, PlainQuantile>;

inline double method_tau(const SegmentMethod& m) {
  return std::visit([](const auto& v) { return v.tau; }, m);
}

inline std::string method_name(const SegmentMethod& m) {
  struct {
    std::string operator()(const ScadMethod&) const { return "scad"; }
    std::string operator()(const LassoTypeMethod&) const { return "lasso-type"; }
    std::string operator()(const PlainQuantile&) const { return "quantile"; }
  } v;
  return std::visit(v, m);
}

inline void validate_method(const SegmentMethod& method) {
  QuantileLevel{method_tau(method)};
  if (const auto* s = std::get_if<ScadMethod>(&method)) {
    if (!(s->lambda_scale > 0.0) || !std::isfinite(s->lambda_scale) || !std::isfinite(s->lambda_exponent))
      throw InvalidArgument("SCAD lambda rule must give positive values");
    validate_scad(s->lambda(2), s->a);
  }
  if (const auto* l = std::get_if<LassoTypeMethod>(&method)) {
    if (!std::isfinite(l->weight_exponent)) throw InvalidArgument("weight exponent must be finite");
    if (!(l->loss_scale > 0.0) || !std::isfinite(l->loss_scale)) throw InvalidArgument("loss scale must be positive");
  }
}

/// Shortest segment a method can fit at all.
inline Index method_min_length(const SegmentMethod& method) {
  return std::holds_alternative<LassoTypeMethod>(method) ? 2 : 1;
}

/// Bases of the last LP solves, used to warm start the next segment.
struct WarmBases {
  std::vector<BasisTag> pilot;
  std::vector<BasisTag> final;
};

namespace detail {

inline SegmentFit fit_segment(Solver& solver, const Dataset& data, Index j1, Index j2, const SegmentMethod& method,
                              WarmBases* warm) {
  const DataView view = data.segment(j1, j2);
  const Index m = j2 - j1;
  std::vector<BasisTag> pilot_out, final_out;
  FitOptions opt;
  opt.row_offset = j1;
  if (warm != nullptr) {
    opt.warm_start = warm->final.empty() ? nullptr : &warm->final;
    opt.basis_out = &final_out;
  }

  SegmentFit fit;
  if (const auto* s = std::get_if<ScadMethod>(&method)) {
    fit = solver.scad_lla(view, s->tau, s->lambda(m), s->a, opt);
  } else if (const auto* l = std::get_if<LassoTypeMethod>(&method)) {
    FitOptions popt = opt;
    if (warm != nullptr) {
      popt.warm_start = warm->pilot.empty() ? nullptr : &warm->pilot;
      popt.basis_out = &pilot_out;
    }
    const SegmentFit pilot = solver.pilot_qlasso(view, l->tau, popt);
    fit = solver.lasso_type(view, l->tau, l->solver_weights(pilot, m), opt);
  } else {
    fit = solver.quantile(view, std::get<PlainQuantile>(method).tau, opt);
  }
  if (warm != nullptr) {
    warm->final = std::move(final_out);
    warm->pilot = std::move(pilot_out);
  }
  return fit;
}

}  // namespace detail

/// Minimal penalized cost of observations (j1, j2] under `method`, with the fit.
inline std::pair<double, SegmentFit> segment_cost(const Dataset& data, Index j1, Index j2, const SegmentMethod& method,
                                                  const SolverConfig& cfg = {}, Index min_segment = 1) {
  validate_method(method);
  if (j1 < 0 || j2 > data.n() || j1 >= j2)
    throw InvalidArgument("segment (" + std::to_string(j1) + ", " + std::to_string(j2) + "] out of range");
  if (j2 - j1 < std::max(min_segment, method_min_length(method)))
    throw SegmentTooShort("segment (" + std::to_string(j1) + ", " + std::to_string(j2) + "] is too short");
  Solver solver(cfg);
  SegmentFit fit = detail::fit_segment(solver, data, j1, j2, method, nullptr);
  const double c = fit.objective;
  return {c, std::move(fit)};
}

// ---------------------------------------------------------------------------
// Search configuration and cost cache

struct SearchConfig {
  Index min_segment = 0;  ///< 0 selects max(p + 2, kMinSegmentFloor)
  Index grid_step = 1;    ///< > 1 enables the coarse pass on a stride-grid_step grid, then local refinement
  std::size_t cache_capacity = std::size_t{1} << 20;  ///< fits kept in memory (costs are always kept)
  int threads = 1;
  bool warm_start = true;

  static constexpr Index kMinSegmentFloor = 12;

  Index resolve_min_segment(Index p) const {
    return min_segment > 0 ? min_segment : std::max<Index>(p + 2, kMinSegmentFloor);
  }

  void validate() const {
    if (min_segment != 0 && min_segment < 2) throw InvalidArgument("min_segment must be >= 2");
    if (grid_step < 1) throw InvalidArgument("grid_step must be >= 1");
    if (threads < 1) throw InvalidArgument("threads must be >= 1");
  }
};

/// Minimum segment length ceil(n^{3/4}) from the theory's spacing assumption.
inline Index theory_min_segment(Index n) {
  return static_cast<Index>(std::ceil(std::pow(static_cast<double>(n), 0.75) - 1e-9));
}

/// Memoized segment costs for one dataset and method. Lookups and inserts are
/// safe from several threads; every entry is deterministic given its warm
/// start chain, so concurrent inserts of one key are harmless.
class SegmentCostCache {
 public:
  SegmentCostCache(const Dataset& data, SegmentMethod method, SolverConfig cfg = {},
                   std::size_t capacity = std::size_t{1} << 20)
      : data_(data), method_(std::move(method)), cfg_(cfg), capacity_(capacity) {
    validate_method(method_);
    cfg_.validate();
  }

  const Dataset& data() const { return data_; }
  const SegmentMethod& method() const { return method_; }
  const SolverConfig& solver_config() const { return cfg_; }

  bool contains(Index j1, Index j2) const {
    std::shared_lock lock(mutex_);
    return costs_.count(key(j1, j2)) != 0;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return costs_.size();
  }

  double cost(Index j1, Index j2) {
    {
      std::shared_lock lock(mutex_);
      auto it = costs_.find(key(j1, j2));
      if (it != costs_.end()) return it->second;
    }
    return compute(j1, j2).objective;
  }

  /// The memoized fit; recomputed from a cold start if it was not retained.
  SegmentFit fit(Index j1, Index j2) {
    {
      std::shared_lock lock(mutex_);
      auto it = fits_.find(key(j1, j2));
      if (it != fits_.end()) return *it->second;
    }
    return compute(j1, j2);
  }

  /// Evaluates the listed segments. Segments sharing a start are solved in
  /// order of increasing end, each warm started from the previous basis.
  void fill(std::vector<std::pair<Index, Index>> pairs, int threads = 1, bool warm = true) {
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    std::vector<std::pair<std::size_t, std::size_t>> runs;  // [begin, end) with a shared start
    for (std::size_t b = 0; b < pairs.size();) {
      std::size_t e = b;
      while (e < pairs.size() && pairs[e].first == pairs[b].first) ++e;
      runs.push_back({b, e});
      b = e;
    }
    auto work = [&](std::size_t tid, std::size_t nthreads, std::exception_ptr& err) {
      try {
        Solver solver(cfg_);
        for (std::size_t r = tid; r < runs.size(); r += nthreads) {
          WarmBases bases;
          for (std::size_t q = runs[r].first; q < runs[r].second; ++q) {
            const auto [j1, j2] = pairs[q];
            if (contains(j1, j2)) {
              bases = WarmBases{};
              continue;
            }
            store(j1, j2, detail::fit_segment(solver, data_, j1, j2, method_, warm ? &bases : nullptr));
          }
        }
      } catch (...) {
        err = std::current_exception();
      }
    };
    const std::size_t nt = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(threads), runs.size()));
    std::vector<std::exception_ptr> errors(nt);
    if (nt == 1) {
      work(0, 1, errors[0]);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < nt; ++t) pool.emplace_back(work, t, nt, std::ref(errors[t]));
      for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

 private:
  static std::uint64_t key(Index j1, Index j2) {
    return (static_cast<std::uint64_t>(j1) << 32) | static_cast<std::uint64_t>(j2);
  }

  SegmentFit compute(Index j1, Index j2) {
    if (j2 - j1 < method_min_length(method_))
      throw SegmentTooShort("segment (" + std::to_string(j1) + ", " + std::to_string(j2) + "] is too short");
    Solver solver(cfg_);
    SegmentFit fit = detail::fit_segment(solver, data_, j1, j2, method_, nullptr);
    store(j1, j2, fit);
    return fit;
  }

  void store(Index j1, Index j2, SegmentFit fit) {
    std::unique_lock lock(mutex_);
    const auto k = key(j1, j2);
    costs_[k] = fit.objective;
    if (fits_.size() < capacity_ || fits_.count(k) != 0)
      fits_[k] = std::make_shared<const SegmentFit>(std::move(fit));
  }

  const Dataset& data_;
  SegmentMethod method_;
  SolverConfig cfg_;
  std::size_t capacity_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::uint64_t, double> costs_;
  std::unordered_map<std::uint64_t, std::shared_ptr<const SegmentFit>> fits_;
};

// ---------------------------------------------------------------------------
// Dynamic programming

namespace detail {

inline bool ties_or_beats(double v, double best) {
  return v <= best + 1e-12 * (1.0 + std::abs(best));
}

/// Exact minimum of sum of segment costs with break r drawn from cand[r].
/// Ties resolve to the lexicographically smallest break vector.
inline std::vector<Index> dp_over_candidates(SegmentCostCache& cache, Index n, Index ms,
                                             const std::vector<std::vector<Index>>& cand, int threads, bool warm) {
  const std::size_t k = cand.size();
  // precompute every segment the recursion can touch
  std::vector<std::pair<Index, Index>> pairs;
  auto starts = [&](std::size_t r) { return r == 0 ? std::vector<Index>{0} : cand[r - 1]; };
  auto ends = [&](std::size_t r) { return r == k ? std::vector<Index>{n} : cand[r]; };
  for (std::size_t r = 0; r <= k; ++r)
    for (Index a : starts(r))
      for (Index b : ends(r))
        if (b - a >= ms) pairs.emplace_back(a, b);
  cache.fill(std::move(pairs), threads, warm);

  // tail[r][i]: best cost of segments r+1 .. k from cand[r-1][i] (r >= 1) to n
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> tail(k + 1);
  for (std::size_t r = k; r >= 1; --r) {
    const auto& from = cand[r - 1];
    tail[r].assign(from.size(), inf);
    for (std::size_t i = 0; i < from.size(); ++i) {
      if (r == k) {
        if (n - from[i] >= ms) tail[r][i] = cache.cost(from[i], n);
        continue;
      }
      for (std::size_t q = 0; q < cand[r].size(); ++q) {
        const Index b = cand[r][q];
        if (b - from[i] < ms || tail[r + 1][q] == inf) continue;
        tail[r][i] = std::min(tail[r][i], cache.cost(from[i], b) + tail[r + 1][q]);
      }
    }
  }

  // forward pass picking the smallest admissible break at each stage
  std::vector<Index> breaks;
  Index prev = 0;
  for (std::size_t r = 1; r <= k; ++r) {
    double best = inf;
    for (std::size_t i = 0; i < cand[r - 1].size(); ++i) {
      const Index b = cand[r - 1][i];
      if (b - prev < ms || tail[r][i] == inf) continue;
      best = std::min(best, cache.cost(prev, b) + tail[r][i]);
    }
    if (best == inf) throw InfeasibleSearch("no admissible segmentation on the candidate grid");
    for (std::size_t i = 0; i < cand[r - 1].size(); ++i) {
      const Index b = cand[r - 1][i];
      if (b - prev < ms || tail[r][i] == inf) continue;
      if (ties_or_beats(cache.cost(prev, b) + tail[r][i], best)) {
        breaks.push_back(b);
        prev = b;
        break;
      }
    }
  }
  return breaks;
}

inline ChangePointFit assemble(SegmentCostCache& cache, Index n, std::vector<Index> breaks) {
  ChangePointFit out;
  out.segmentation.breaks = std::move(breaks);
  const auto b = out.segmentation.bounds(n);
  for (std::size_t r = 1; r < b.size(); ++r) {
    out.segment_fits.push_back(cache.fit(b[r - 1], b[r]));
    out.total_objective += out.segment_fits.back().objective;
  }
  return out;
}

}  // namespace detail

/// Exact K-change-point search over integer break positions.
inline ChangePointFit detect_changepoints(SegmentCostCache& cache, Index k, const SearchConfig& search = {}) {
  search.validate();
  if (k < 0) throw InvalidArgument("number of change-points must be >= 0");
  const Dataset& data = cache.data();
  const Index n = data.n();
  const Index ms = std::max(search.resolve_min_segment(data.p()), method_min_length(cache.method()));
  if (n < (k + 1) * ms)
    throw InfeasibleSearch("n = " + std::to_string(n) + " cannot hold " + std::to_string(k + 1) +
                           " segments of length >= " + std::to_string(ms));
  if (k == 0) return detail::assemble(cache, n, {});

  // break r (1-based) lies in [r * ms, n - (k - r + 1) * ms]
  auto feasible = [&](std::size_t r, Index l) {
    return l >= static_cast<Index>(r) * ms && l <= n - (k - static_cast<Index>(r) + 1) * ms;
  };
  const auto ku = static_cast<std::size_t>(k);
  std::vector<std::vector<Index>> cand(ku);
  const Index g = search.grid_step;
  for (std::size_t r = 1; r <= ku; ++r)
    for (Index l = 1; l < n; ++l)
      if (feasible(r, l) && (g == 1 || l % g == 0)) cand[r - 1].push_back(l);

  bool coarse_ok = true;
  for (const auto& c : cand) coarse_ok = coarse_ok && !c.empty();
  std::vector<Index> breaks;
  if (g > 1 && !coarse_ok) {
    // grid too coarse for the admissible ranges: fall back to the full search
    for (std::size_t r = 1; r <= ku; ++r) {
      cand[r - 1].clear();
      for (Index l = 1; l < n; ++l)
        if (feasible(r, l)) cand[r - 1].push_back(l);
    }
    breaks = detail::dp_over_candidates(cache, n, ms, cand, search.threads, search.warm_start);
  } else {
    breaks = detail::dp_over_candidates(cache, n, ms, cand, search.threads, search.warm_start);
    if (g > 1) {
      for (std::size_t r = 1; r <= ku; ++r) {
        cand[r - 1].clear();
        for (Index l = breaks[r - 1] - g; l <= breaks[r - 1] + g; ++l)
          if (feasible(r, l)) cand[r - 1].push_back(l);
      }
      breaks = detail::dp_over_candidates(cache, n, ms, cand, search.threads, search.warm_start);
    }
  }
  return detail::assemble(cache, n, std::move(breaks));
}

inline ChangePointFit detect_changepoints(const Dataset& data, Index k, const SegmentMethod& method,
                                          const SearchConfig& search = {}, const SolverConfig& cfg = {}) {
  SegmentCostCache cache(data, method, cfg, search.cache_capacity);
  return detect_changepoints(cache, k, search);
}

/// Per-segment fits at fixed breaks, served from the cache when present.
inline ChangePointFit refit_segments(SegmentCostCache& cache, const Segmentation& seg, Index min_segment = 1) {
  const Index n = cache.data().n();
  seg.validate(n, std::max(min_segment, method_min_length(cache.method())));
  return detail::assemble(cache, n, seg.breaks);
}

inline ChangePointFit refit_segments(const Dataset& data, const Segmentation& seg, const SegmentMethod& method,
                                     const SolverConfig& cfg = {}, Index min_segment = 1) {
  SegmentCostCache cache(data, method, cfg);
  return refit_segments(cache, seg, min_segment);
}

}  // namespace cpqr

#endif  // CPQR_CHANGEPOINT_HPP
