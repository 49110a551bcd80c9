#ifndef CPQR_KKT_HPP
#define CPQR_KKT_HPP

#include <algorithm>
#include <cmath>

#include "cpqr/loss.hpp"
#include "cpqr/types.hpp"

namespace cpqr {

namespace detail {

inline double interval_distance(double value, double lo, double hi) {
  if (value < lo) return lo - value;
  if (value > hi) return value - hi;
  return 0.0;
}

}  // namespace detail

/// Largest violation of the stationarity conditions of
///   sum_i rho_tau(y_i - x_i^t b) + sum_j w_j |b_j|
/// at `coef`. Observations with zero residual may take any subgradient in
/// [tau - 1, tau]; each coordinate takes the most favourable choice.
inline double kkt_residual_weighted(const DataView& data, double tau, const Eigen::Ref<const Vector>& coef,
                                    const Eigen::Ref<const Vector>& weights) {
  const Index n = data.n(), p = data.p();
  if (coef.size() != p || weights.size() != p) throw DimensionMismatch("KKT check: length != p");

  Vector fixed = Vector::Zero(p);
  Vector lo = Vector::Zero(p);
  Vector hi = Vector::Zero(p);
  for (Index i = 0; i < n; ++i) {
    const double fit = data.x.row(i).dot(coef);
    const double r = data.y[i] - fit;
    const double tol = 1e-9 * (1.0 + std::abs(data.y[i]) + std::abs(fit));
    if (std::abs(r) <= tol) {
      for (Index j = 0; j < p; ++j) {
        const double xij = data.x(i, j);
        lo[j] += xij > 0.0 ? xij * (tau - 1.0) : xij * tau;
        hi[j] += xij > 0.0 ? xij * tau : xij * (tau - 1.0);
      }
    } else {
      fixed += data.x.row(i).transpose() * (r > 0.0 ? tau : tau - 1.0);
    }
  }

  const double z = zero_threshold(coef);
  double worst = 0.0;
  for (Index j = 0; j < p; ++j) {
    double res;
    if (std::abs(coef[j]) >= z) {
      const double target = weights[j] * (coef[j] > 0.0 ? 1.0 : -1.0);
      res = detail::interval_distance(target - fixed[j], lo[j], hi[j]);
    } else {
      res = std::max({0.0, fixed[j] + lo[j] - weights[j], -weights[j] - (fixed[j] + hi[j])});
    }
    worst = std::max(worst, res);
  }
  return worst;
}

/// Certification tolerance on the KKT residual of a segment of length m.
inline double kkt_limit(Index m) { return 1e-4 * static_cast<double>(m); }

/// Penalty weights m * p'_lambda(|b_j|) that linearize the SCAD term at coef.
inline Vector scad_tangent_weights(const Eigen::Ref<const Vector>& coef, Index m, double lambda, double a) {
  Vector w(coef.size());
  for (Index j = 0; j < coef.size(); ++j)
    w[j] = static_cast<double>(m) * scad_derivative(std::abs(coef[j]), lambda, a);
  return w;
}

inline double kkt_check_weighted_l1(const SegmentFit& fit, const DataView& data, double tau,
                                    const Eigen::Ref<const Vector>& weights) {
  return kkt_residual_weighted(data, tau, fit.coefficients, weights);
}

/// SCAD stationarity for the segment objective sum_i rho_tau + m * sum_j p_lambda(|b_j|).
inline double kkt_check_scad(const SegmentFit& fit, const DataView& data, double tau, double lambda, double a) {
  validate_scad(lambda, a);
  const Vector w = scad_tangent_weights(fit.coefficients, data.n(), lambda, a);
  return kkt_residual_weighted(data, tau, fit.coefficients, w);
}

}  // namespace cpqr

#endif  // CPQR_KKT_HPP
