#ifndef CPQR_SOLVER_HPP
#define CPQR_SOLVER_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cpqr/interior_point.hpp"
#include "cpqr/kkt.hpp"
#include "cpqr/loss.hpp"
#include "cpqr/lp_simplex.hpp"
#include "cpqr/types.hpp"

namespace cpqr {

/// Floor on |pilot_j| when forming adaptive weights.
inline constexpr double kPilotFloor = 1e-4;
inline constexpr double kDefaultScadA = 3.7;

/// Placement of a fit inside a longer series, and optional simplex warm start.
struct FitOptions {
  Index row_offset = 0;
  const std::vector<BasisTag>* warm_start = nullptr;
  std::vector<BasisTag>* basis_out = nullptr;
};

/// Weighted-L1 / SCAD quantile regression on one range of observations.
/// Holds LP workspace; not shareable between threads.
class Solver {
 public:
  explicit Solver(SolverConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const SolverConfig& config() const { return cfg_; }

  SegmentFit weighted_l1(const DataView& data, double tau, const Eigen::Ref<const Vector>& weights,
                         const FitOptions& opt = {}) {
    Vector coef;
    bool nonunique = false;
    int iters = 0;
    if (cfg_.backend == Backend::Simplex) {
      auto res = simplex_.solve(data, tau, weights, cfg_, opt.row_offset, opt.warm_start);
      coef = std::move(res.coefficients);
      nonunique = res.nonunique;
      iters = res.iterations;
      if (opt.basis_out != nullptr) *opt.basis_out = std::move(res.basis);
    } else {
      auto res = solve_interior_point(data, tau, weights, cfg_);
      coef = std::move(res.coefficients);
      nonunique = res.nonunique;
      iters = res.iterations;
      if (opt.basis_out != nullptr) opt.basis_out->clear();
    }
    SegmentFit fit;
    fit.j1 = opt.row_offset;
    fit.j2 = opt.row_offset + data.n();
    fit.coefficients = std::move(coef);
    fit.active_set = active_set(fit.coefficients);
    fit.weights = weights;
    fit.objective = penalized_objective(data, tau, fit.coefficients, WeightedL1{fit.weights});
    fit.kkt_residual = kkt_residual_weighted(data, tau, fit.coefficients, fit.weights);
    fit.nonunique = nonunique;
    fit.lp_iterations = iters;
    return fit;
  }

  SegmentFit quantile(const DataView& data, double tau, const FitOptions& opt = {}) {
    SegmentFit fit = weighted_l1(data, tau, Vector::Zero(data.p()), opt);
    fit.weights = Vector();
    return fit;
  }

  /// SCAD-penalized fit of sum_i rho_tau + m * sum_j p_lambda(|b_j|) by local
  /// linear approximation: start from the unpenalized fit, then reweight with
  /// m * p'_lambda(|b_j|) at the previous iterate. An exact fit stays exact
  /// once its nonzero coefficients clear a * lambda.
  SegmentFit scad_lla(const DataView& data, double tau, double lambda, double a, const FitOptions& opt = {}) {
    validate_scad(lambda, a);
    const Index m = data.n();
    const Index p = data.p();
    const Scad penalty{lambda, a};

    std::vector<BasisTag> basis;
    FitOptions inner = opt;
    inner.basis_out = &basis;

    Vector w = Vector::Zero(p);
    SegmentFit fit = weighted_l1(data, tau, w, inner);
    double obj = penalized_objective(data, tau, fit.coefficients, penalty);
    int lp_iters = fit.lp_iterations;
    int lla_iters = 1;

    for (int t = 0; t < cfg_.lla_max_iters; ++t) {
      w = scad_tangent_weights(fit.coefficients, m, lambda, a);
      inner.warm_start = &basis;
      std::vector<BasisTag> next_basis;
      inner.basis_out = &next_basis;
      SegmentFit next = weighted_l1(data, tau, w, inner);
      ++lla_iters;
      lp_iters += next.lp_iterations;
      const double next_obj = penalized_objective(data, tau, next.coefficients, penalty);
      if (next_obj > obj + 1e-9 * (1.0 + std::abs(obj)))
        throw NumericalFailure("SCAD objective increased across LLA iterations");
      const double delta = (next.coefficients - fit.coefficients).cwiseAbs().maxCoeff();
      fit = std::move(next);
      basis = std::move(next_basis);
      obj = next_obj;
      if (delta < cfg_.lla_coef_tol) break;
    }

    fit.objective = obj;
    fit.kkt_residual = kkt_check_scad(fit, data, tau, lambda, a);
    fit.lp_iterations = lp_iters;
    fit.lla_iterations = lla_iters;
    if (opt.basis_out != nullptr) *opt.basis_out = std::move(basis);
    return fit;
  }

  SegmentFit lasso_type(const DataView& data, double tau, const Eigen::Ref<const Vector>& weights,
                        const FitOptions& opt = {}) {
    return weighted_l1(data, tau, weights, opt);
  }

  /// Quantile fit with uniform L1 weight log(m).
  SegmentFit pilot_qlasso(const DataView& data, double tau, const FitOptions& opt = {}) {
    if (data.n() < 2) throw SegmentTooShort("QLASSO pilot needs at least 2 observations");
    const Vector w = Vector::Constant(data.p(), std::log(static_cast<double>(data.n())));
    return weighted_l1(data, tau, w, opt);
  }

 private:
  SolverConfig cfg_;
  QuantileSimplex simplex_;
};

/// Weights m^{2/5} / max(|pilot_j|, kPilotFloor).
inline Vector adaptive_weights_lasso_type(const SegmentFit& pilot, Index m) {
  if (m < 1) throw InvalidArgument("segment length must be >= 1");
  const double scale = std::pow(static_cast<double>(m), 0.4);
  Vector w(pilot.coefficients.size());
  for (Index j = 0; j < w.size(); ++j) w[j] = scale / std::max(std::abs(pilot.coefficients[j]), kPilotFloor);
  return w;
}

// Free-function entry points -------------------------------------------------

inline SegmentFit solve_weighted_l1_qr(const DataView& data, double tau, const Eigen::Ref<const Vector>& weights,
                                       const SolverConfig& cfg = {}) {
  return Solver(cfg).weighted_l1(data, tau, weights);
}

inline SegmentFit solve_quantile(const DataView& data, double tau, const SolverConfig& cfg = {}) {
  return Solver(cfg).quantile(data, tau);
}

inline SegmentFit fit_scad_lla(const DataView& data, double tau, double lambda, double a = kDefaultScadA,
                               const SolverConfig& cfg = {}) {
  return Solver(cfg).scad_lla(data, tau, lambda, a);
}

inline SegmentFit fit_lasso_type(const DataView& data, double tau, const Eigen::Ref<const Vector>& weights,
                                 const SolverConfig& cfg = {}) {
  return Solver(cfg).lasso_type(data, tau, weights);
}

inline SegmentFit pilot_qlasso(const DataView& data, double tau, const SolverConfig& cfg = {}) {
  return Solver(cfg).pilot_qlasso(data, tau);
}

}  // namespace cpqr

#endif  // CPQR_SOLVER_HPP
