#ifndef CPQR_LOSS_HPP
#define CPQR_LOSS_HPP

#include <algorithm>
#include <cmath>
#include <variant>
#include <vector>

#include "cpqr/types.hpp"

namespace cpqr {

/// Coefficients with |c_j| below this are treated as estimated exactly zero.
inline double zero_threshold(const Eigen::Ref<const Vector>& coef) {
  double inf_norm = coef.size() > 0 ? coef.cwiseAbs().maxCoeff() : 0.0;
  return 1e-6 * std::max(1.0, inf_norm);
}

/// Check loss rho_tau(r): tau * r for r > 0, (tau - 1) * r otherwise.
inline double check_loss(double r, double tau) { return r > 0.0 ? tau * r : (tau - 1.0) * r; }

/// Sum of check losses of y - x * coef.
inline double check_loss_sum(const DataView& data, double tau, const Eigen::Ref<const Vector>& coef) {
  double s = 0.0;
  for (Index i = 0; i < data.n(); ++i) s += check_loss(data.y[i] - data.x.row(i).dot(coef), tau);
  return s;
}

/// SCAD penalty derivative p'_lambda(theta) for theta >= 0.
inline double scad_derivative(double theta, double lambda, double a) {
  validate_scad(lambda, a);
  if (theta <= lambda) return lambda;
  return std::max(a * lambda - theta, 0.0) / (a - 1.0);
}

/// SCAD penalty value: the integral of scad_derivative from 0 to theta.
inline double scad_value(double theta, double lambda, double a) {
  validate_scad(lambda, a);
  if (theta <= lambda) return lambda * theta;
  if (theta <= a * lambda) return (2.0 * a * lambda * theta - theta * theta - lambda * lambda) / (2.0 * (a - 1.0));
  return lambda * lambda * (a + 1.0) / 2.0;
}

/// Penalty term alone. SCAD carries the factor n (the number of observations
/// in the range) because the penalty sits inside the per-observation sum.
inline double penalty_value(const PenaltySpec& penalty, const Eigen::Ref<const Vector>& coef, Index n) {
  return std::visit(
      [&](const auto& pen) -> double {
        using T = std::decay_t<decltype(pen)>;
        if constexpr (std::is_same_v<T, NoPenalty>) {
          return 0.0;
        } else if constexpr (std::is_same_v<T, Scad>) {
          double s = 0.0;
          for (Index j = 0; j < coef.size(); ++j) s += scad_value(std::abs(coef[j]), pen.lambda, pen.a);
          return static_cast<double>(n) * s;
        } else {
          if (pen.weights.size() != coef.size()) throw DimensionMismatch("weight vector length != p");
          validate_weights(pen.weights);
          return pen.weights.dot(coef.cwiseAbs());
        }
      },
      penalty);
}

inline double penalized_objective(const DataView& data, double tau, const Eigen::Ref<const Vector>& coef,
                                  const PenaltySpec& penalty) {
  if (coef.size() != data.p()) throw DimensionMismatch("coefficient length != p");
  return check_loss_sum(data, tau, coef) + penalty_value(penalty, coef, data.n());
}

inline double penalized_objective(const Dataset& data, double tau, const Eigen::Ref<const Vector>& coef,
                                  const PenaltySpec& penalty) {
  return penalized_objective(data.view(), tau, coef, penalty);
}

/// Indices j with |coef_j| >= zero_threshold(coef), ascending.
inline std::vector<Index> active_set(const Eigen::Ref<const Vector>& coef) {
  const double z = zero_threshold(coef);
  std::vector<Index> out;
  for (Index j = 0; j < coef.size(); ++j)
    if (std::abs(coef[j]) >= z) out.push_back(j);
  return out;
}

}  // namespace cpqr

#endif  // CPQR_LOSS_HPP
