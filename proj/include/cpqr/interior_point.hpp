#ifndef CPQR_INTERIOR_POINT_HPP
#define CPQR_INTERIOR_POINT_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cpqr/lp_simplex.hpp"
#include "cpqr/types.hpp"

namespace cpqr {

struct InteriorPointResult {
  Vector coefficients;
  double duality_gap = 0.0;
  int iterations = 0;
  bool nonunique = false;
};

/// Frisch-Newton primal-dual interior point method on the bounded dual
///   max  sum_i s_i y_i a_i   s.t.  sum_i s_i x_i a_i = sum_i beta_i x_i,  0 <= a <= 1,
/// where each row carries slopes (alpha_i, beta_i), s_i = alpha_i + beta_i, and
/// penalty rows (x = e_j, y = 0, alpha = beta = w_j) encode w_j |b_j|. The
/// regression coefficients are the negated equality multipliers. Returns an
/// interior solution of the optimal face, so exact zeros are not produced.
inline InteriorPointResult solve_interior_point(const DataView& data, double tau, const Eigen::Ref<const Vector>& weights,
                                                const SolverConfig& cfg) {
  const Index m = data.n(), p = data.p();
  if (weights.size() != p) throw DimensionMismatch("weight vector length != p");
  validate_weights(weights);

  Index rows = m;
  for (Index j = 0; j < p; ++j)
    if (weights[j] > 0.0) ++rows;

  // a_mat is p x rows (columns are scaled rows), cost is -s_i y_i.
  Eigen::MatrixXd a_mat(p, rows);
  Vector cost(rows), x(rows);
  Vector rhs = Vector::Zero(p);
  Index col = 0;
  for (Index i = 0; i < m; ++i, ++col) {
    a_mat.col(col) = data.x.row(i).transpose();
    cost[col] = -data.y[i];
    x[col] = 1.0 - tau;
    rhs += data.x.row(i).transpose() * (1.0 - tau);
  }
  for (Index j = 0; j < p; ++j) {
    if (weights[j] <= 0.0) continue;
    a_mat.col(col).setZero();
    a_mat(j, col) = 2.0 * weights[j];
    cost[col] = 0.0;
    x[col] = 0.5;
    rhs[j] += weights[j];
    ++col;
  }

  InteriorPointResult out;
  Eigen::MatrixXd gram = a_mat * a_mat.transpose();
  const double ridge = 1e-12 * std::max(1.0, gram.diagonal().maxCoeff());
  for (Index j = 0; j < p; ++j) {
    if (gram(j, j) <= ridge) {
      out.nonunique = true;
      gram(j, j) += ridge;
    }
  }

  Eigen::LDLT<Eigen::MatrixXd> chol(gram);
  Vector y = chol.solve(a_mat * cost);
  Vector r = cost - a_mat.transpose() * y;
  const double eps = 1e-7;
  Vector z(rows), w(rows), s(rows);
  for (Index i = 0; i < rows; ++i) {
    const double base_eps = std::abs(r[i]) < eps ? eps : 0.0;
    z[i] = std::max(r[i], 0.0) + base_eps;
    w[i] = std::max(-r[i], 0.0) + base_eps;
    s[i] = 1.0 - x[i];
  }

  const double beta = 0.99995;
  const int max_iters = 200;
  const double big = std::numeric_limits<double>::max();
  Vector d(rows), dx(rows), ds(rows), dz(rows), dw(rows), dr(rows), tmp(rows);
  Vector dy(p), rhs_saved(p);

  auto gap_of = [&] { return z.dot(x) + w.dot(s); };
  double gap = gap_of();
  int it = 0;
  while (gap > cfg.optimality_tol * std::max(1.0, std::abs(cost.dot(x))) && it < max_iters) {
    ++it;
    for (Index i = 0; i < rows; ++i) {
      d[i] = 1.0 / (z[i] / x[i] + w[i] / s[i]);
      ds[i] = z[i] - w[i];
      dz[i] = d[i] * ds[i];
    }
    dy = rhs - a_mat * x + a_mat * dz;
    rhs_saved = dy;
    Eigen::MatrixXd ada = a_mat * d.asDiagonal() * a_mat.transpose();
    for (Index j = 0; j < p; ++j) ada(j, j) += ridge;
    Eigen::LDLT<Eigen::MatrixXd> fac(ada);
    dy = fac.solve(dy);
    ds = a_mat.transpose() * dy - ds;

    double step_p = big, step_d = big;
    for (Index i = 0; i < rows; ++i) {
      dx[i] = d[i] * ds[i];
      ds[i] = -dx[i];
      dz[i] = -z[i] * (dx[i] / x[i] + 1.0);
      dw[i] = -w[i] * (ds[i] / s[i] + 1.0);
      if (dx[i] < 0) step_p = std::min(step_p, -x[i] / dx[i]);
      if (ds[i] < 0) step_p = std::min(step_p, -s[i] / ds[i]);
      if (dz[i] < 0) step_d = std::min(step_d, -z[i] / dz[i]);
      if (dw[i] < 0) step_d = std::min(step_d, -w[i] / dw[i]);
    }
    step_p = std::min(beta * step_p, 1.0);
    step_d = std::min(beta * step_d, 1.0);

    if (std::min(step_p, step_d) < 1.0) {
      // Mehrotra corrector.
      double mu = x.dot(z) + s.dot(w);
      const double g = mu + step_p * dx.dot(z) + step_d * dz.dot(x) + step_p * step_d * dz.dot(dx) +
                       step_p * ds.dot(w) + step_d * dw.dot(s) + step_p * step_d * ds.dot(dw);
      mu = mu * std::pow(g / mu, 3) / static_cast<double>(2 * rows);
      for (Index i = 0; i < rows; ++i)
        dr[i] = d[i] * (mu * (1.0 / s[i] - 1.0 / x[i]) + dx[i] * dz[i] / x[i] - ds[i] * dw[i] / s[i]);
      dy = fac.solve(rhs_saved + a_mat * dr);
      tmp = a_mat.transpose() * dy;
      step_p = big;
      step_d = big;
      for (Index i = 0; i < rows; ++i) {
        const double dxdz = dx[i] * dz[i];
        const double dsdw = ds[i] * dw[i];
        dx[i] = d[i] * (tmp[i] - z[i] + w[i]) - dr[i];
        ds[i] = -dx[i];
        dz[i] = -z[i] + (mu - z[i] * dx[i] - dxdz) / x[i];
        dw[i] = -w[i] + (mu - w[i] * ds[i] - dsdw) / s[i];
        if (dx[i] < 0) step_p = std::min(step_p, -x[i] / dx[i]);
        if (ds[i] < 0) step_p = std::min(step_p, -s[i] / ds[i]);
        if (dz[i] < 0) step_d = std::min(step_d, -z[i] / dz[i]);
        if (dw[i] < 0) step_d = std::min(step_d, -w[i] / dw[i]);
      }
      step_p = std::min(beta * step_p, 1.0);
      step_d = std::min(beta * step_d, 1.0);
    }

    x += step_p * dx;
    s += step_p * ds;
    y += step_d * dy;
    z += step_d * dz;
    w += step_d * dw;
    gap = gap_of();
    if (!std::isfinite(gap)) throw NumericalFailure("interior point iterates diverged");
  }
  if (it >= max_iters) throw NumericalFailure("interior point did not converge in " + std::to_string(max_iters) + " iterations");

  out.coefficients = -y;
  out.duality_gap = gap;
  out.iterations = it;
  return out;
}

}  // namespace cpqr

#endif  // CPQR_INTERIOR_POINT_HPP
