#ifndef CPQR_LP_SIMPLEX_HPP
#define CPQR_LP_SIMPLEX_HPP

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "cpqr/types.hpp"

namespace cpqr {

enum class Backend { Simplex, InteriorPoint };

struct SolverConfig {
  double feasibility_tol = 1e-8;
  double optimality_tol = 1e-8;
  int lla_max_iters = 100;  // reweighting steps; a fit stopped by the cap is generally not a KKT point
  double lla_coef_tol = 1e-6;
  Backend backend = Backend::Simplex;
  /// Pivot budget per LP; 0 picks 50 * (n + p) + 100.
  int lp_max_iters = 0;

  void validate() const {
    if (!(feasibility_tol > 0.0) || !(optimality_tol > 0.0) || !(lla_coef_tol > 0.0))
      throw InvalidArgument("solver tolerances must be > 0");
    if (lla_max_iters < 1) throw InvalidArgument("lla_max_iters must be >= 1");
  }
};

/// Standard-form LP for the weighted-L1 quantile problem:
///   minimize  tau * sum(u) + (1 - tau) * sum(v) + sum_j w_j (b+_j + b-_j)
///   s.t.      X (b+ - b-) + u - v = y,   all variables >= 0.
/// Variable order is (b+, b-, u, v). The simplex below works on the equivalent
/// row formulation; this form is kept for inspection and testing.
struct LpProblem {
  Vector cost;     ///< length 2p + 2n
  Matrix a_eq;     ///< n x (2p + 2n)
  Vector b_eq;     ///< length n

  Index num_variables() const { return cost.size(); }
  Index num_constraints() const { return b_eq.size(); }
};

inline LpProblem make_lp_problem(const DataView& data, double tau, const Eigen::Ref<const Vector>& weights) {
  const Index n = data.n(), p = data.p();
  if (weights.size() != p) throw DimensionMismatch("weight vector length != p");
  LpProblem lp;
  lp.cost.resize(2 * p + 2 * n);
  lp.cost.segment(0, p) = weights;
  lp.cost.segment(p, p) = weights;
  lp.cost.segment(2 * p, n).setConstant(tau);
  lp.cost.segment(2 * p + n, n).setConstant(1.0 - tau);
  lp.a_eq = Matrix::Zero(n, 2 * p + 2 * n);
  lp.a_eq.block(0, 0, n, p) = data.x;
  lp.a_eq.block(0, p, n, p) = -data.x;
  lp.a_eq.block(0, 2 * p, n, n).setIdentity();
  lp.a_eq.block(0, 2 * p + n, n, n) = -Matrix::Identity(n, n);
  lp.b_eq = data.y;
  return lp;
}

/// Basis rows are identified across problems by tag: data rows by their global
/// observation index (>= 0), penalty rows for coefficient j by -(j + 1).
using BasisTag = long long;

/// Exact vertex solver for
///   min_b  sum_i rho_tau(y_i - x_i^t b) + sum_j w_j |b_j|.
///
/// Each penalty term w_j |b_j| is an extra row (x = e_j, y = 0) with slope w_j
/// on both sides, so every vertex is pinned by p rows with zero residual. The
/// simplex keeps that p x p basis, prices the 2p edge directions that release
/// one basis row, and walks each chosen edge through residual sign changes
/// until the directional derivative turns nonnegative. Bland's rule takes over
/// while pivots are degenerate.
///
/// Holds mutable workspace: use one instance per thread.
class QuantileSimplex {
 public:
  struct Result {
    Vector coefficients;
    double objective = 0.0;
    std::vector<BasisTag> basis;
    int iterations = 0;
    bool nonunique = false;
  };

  Result solve(const DataView& data, double tau, const Eigen::Ref<const Vector>& weights, const SolverConfig& cfg,
               Index row_offset = 0, const std::vector<BasisTag>* warm_start = nullptr) {
    const Index m = data.n();
    const Index p = data.p();
    const Index rows = m + p;
    if (weights.size() != p) throw DimensionMismatch("weight vector length != p");
    validate_weights(weights);
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidArgument("quantile level must lie in (0, 1)");

    m_ = m;
    p_ = p;
    tau_ = tau;
    weights_ = weights;

    init_basis(data, row_offset, warm_start);
    side_positive_.assign(static_cast<std::size_t>(rows), 1);
    const int max_iters = cfg.lp_max_iters > 0 ? cfg.lp_max_iters : static_cast<int>(50 * rows + 100);

    // Phase 1 runs on right-hand sides shifted by a tiny fixed pattern, which
    // removes the ties behind degenerate pivots; phase 2 finishes on the
    // exact data from that basis and is usually a single pricing pass.
    double scale = 1.0;
    for (Index i = 0; i < m; ++i) scale = std::max(scale, std::abs(data.y[i]));
    rhs_.resize(rows);
    for (Index i = 0; i < rows; ++i) {
      const BasisTag tag = i < m ? static_cast<BasisTag>(row_offset + i) : -static_cast<BasisTag>(i - m + 1);
      rhs_[i] = (i < m ? data.y[i] : 0.0) + kPerturbation * scale * perturbation_pattern(tag);
    }
    int iter = run(data, cfg, max_iters, 1e-3 * kPerturbation);
    for (Index i = 0; i < rows; ++i) rhs_[i] = i < m ? data.y[i] : 0.0;
    iter += run(data, cfg, max_iters - iter, cfg.feasibility_tol);

    Result res;
    res.coefficients = coef_;
    res.iterations = iter;
    res.objective = objective(data);
    res.basis.resize(static_cast<std::size_t>(p));
    for (Index k = 0; k < p; ++k) {
      const Index row = basis_[k];
      res.basis[static_cast<std::size_t>(k)] =
          row < m ? static_cast<BasisTag>(row_offset + row) : -static_cast<BasisTag>(row - m + 1);
    }
    for (Index j = 0; j < p; ++j)
      if (weights_[j] == 0.0 && data.x.col(j).cwiseAbs().maxCoeff() == 0.0) res.nonunique = true;
    return res;
  }

  static constexpr double kPerturbation = 1e-9;

 private:
  /// Deterministic value in [-1, -0.5] U [0.5, 1] keyed by basis tag.
  static double perturbation_pattern(BasisTag tag) {
    std::uint64_t z = static_cast<std::uint64_t>(tag) + 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    const double u = static_cast<double>(z >> 11) * 0x1.0p-53;  // [0, 1)
    return u < 0.5 ? -(0.5 + u) : u;
  }

  /// Simplex pivots from the current basis on right-hand sides rhs_. Rows with
  /// relative |residual| below side_tol keep their previous side.
  int run(const DataView& data, const SolverConfig& cfg, int budget, double side_tol) {
    const Index m = m_, p = p_, rows = m + p;
    side_tol_ = side_tol;
    int degenerate_run = 0;
    for (int iter = 0;; ++iter) {
      factorize(data);
      update_point(data);

      // Price: c_i is the loss slope of non-basic row i on its current side.
      cdata_.resize(m);
      for (Index i = 0; i < m; ++i)
        cdata_[i] = basis_pos_[i] >= 0 ? 0.0 : (side_positive_[i] ? tau_ : tau_ - 1.0);
      grad_.noalias() = data.x.transpose() * cdata_;
      for (Index j = 0; j < p; ++j) {
        const Index i = m + j;
        if (basis_pos_[i] < 0) grad_[j] += side_positive_[i] ? weights_[j] : -weights_[j];
      }
      dual_.noalias() = inv_.transpose() * grad_;

      const bool bland = degenerate_run > 0;
      Index enter_pos = -1;
      int enter_dir = 0;
      double enter_cost = 0.0;
      BasisTag enter_key = std::numeric_limits<BasisTag>::max();
      for (Index k = 0; k < p; ++k) {
        const Index row = basis_[k];
        const double tol = cfg.optimality_tol * std::max(1.0, std::abs(dual_[k]));
        const double up = alpha(row) + dual_[k];    // release row with positive residual
        const double down = beta(row) - dual_[k];   // release row with negative residual
        for (int dir : {+1, -1}) {
          const double rc = dir > 0 ? up : down;
          if (rc >= -tol) continue;
          if (bland) {
            const BasisTag key = 2 * static_cast<BasisTag>(row) + (dir > 0 ? 0 : 1);
            if (key < enter_key) {
              enter_key = key;
              enter_pos = k;
              enter_dir = dir;
              enter_cost = rc;
            }
          } else if (rc < enter_cost) {
            enter_pos = k;
            enter_dir = dir;
            enter_cost = rc;
          }
        }
      }
      if (enter_pos < 0) return iter;
      if (iter >= budget)
        throw NumericalFailure("simplex did not converge within " + std::to_string(budget) + " pivots");

      // Residual velocities along the edge: r_i(t) = r_i + t * zeta_i.
      direction_ = inv_.col(enter_pos) * static_cast<double>(enter_dir);
      zeta_.noalias() = data.x * direction_;
      double zeta_scale = 0.0;
      for (Index i = 0; i < m; ++i) zeta_scale = std::max(zeta_scale, std::abs(zeta_[i]));
      for (Index j = 0; j < p; ++j) zeta_scale = std::max(zeta_scale, std::abs(direction_[j]));
      const double pivot_tol = 1e-11 * std::max(1.0, zeta_scale);

      breakpoints_.clear();
      for (Index i = 0; i < rows; ++i) {
        if (basis_pos_[i] >= 0) continue;
        const double z = i < m ? zeta_[i] : direction_[i - m];
        if (std::abs(z) <= pivot_tol) continue;
        const double r = resid_[i];
        if (side_positive_[i] && z < 0.0) {
          breakpoints_.emplace_back(std::max(0.0, r / -z), i);
        } else if (!side_positive_[i] && z > 0.0) {
          breakpoints_.emplace_back(std::max(0.0, -r / z), i);
        }
      }
      if (breakpoints_.empty()) throw NumericalFailure("unbounded descent direction in quantile LP");
      std::sort(breakpoints_.begin(), breakpoints_.end());

      double slope = enter_cost;
      const double slope_tol = cfg.optimality_tol * std::max(1.0, std::abs(enter_cost));
      std::size_t stop = breakpoints_.size();
      for (std::size_t b = 0; b < breakpoints_.size(); ++b) {
        const Index i = breakpoints_[b].second;
        const double z = i < m ? zeta_[i] : direction_[i - m];
        slope += (alpha(i) + beta(i)) * std::abs(z);
        if (slope >= -slope_tol) {
          stop = b;
          break;
        }
      }
      if (stop == breakpoints_.size()) throw NumericalFailure("quantile LP line search did not terminate");

      for (std::size_t b = 0; b < stop; ++b) {
        const Index i = breakpoints_[b].second;
        side_positive_[i] = !side_positive_[i];
      }
      const double step = breakpoints_[stop].first;
      const Index entering_row = breakpoints_[stop].second;
      const Index leaving_row = basis_[enter_pos];
      basis_pos_[leaving_row] = -1;
      side_positive_[leaving_row] = enter_dir > 0;
      basis_[enter_pos] = entering_row;
      basis_pos_[entering_row] = enter_pos;

      degenerate_run = step <= side_tol_ * 1e-3 ? degenerate_run + 1 : 0;
    }
  }

 private:
  double alpha(Index row) const { return row < m_ ? tau_ : weights_[row - m_]; }
  double beta(Index row) const { return row < m_ ? 1.0 - tau_ : weights_[row - m_]; }

  void set_pseudo_basis() {
    for (Index k = 0; k < p_; ++k) basis_[k] = m_ + k;
  }

  void init_basis(const DataView& data, Index row_offset, const std::vector<BasisTag>* warm) {
    basis_.resize(p_);
    bool ok = false;
    if (warm != nullptr && static_cast<Index>(warm->size()) == p_) {
      ok = true;
      std::vector<char> seen(static_cast<std::size_t>(m_ + p_), 0);
      for (Index k = 0; k < p_ && ok; ++k) {
        const BasisTag tag = (*warm)[static_cast<std::size_t>(k)];
        Index row;
        if (tag >= 0) {
          row = static_cast<Index>(tag) - row_offset;
          if (row < 0 || row >= m_) ok = false;
        } else {
          row = m_ + static_cast<Index>(-tag - 1);
          if (row < m_ || row >= m_ + p_) ok = false;
        }
        if (ok && seen[static_cast<std::size_t>(row)]) ok = false;
        if (ok) {
          seen[static_cast<std::size_t>(row)] = 1;
          basis_[k] = row;
        }
      }
      if (ok) {
        fill_basis_matrix(data);
        Eigen::FullPivLU<Eigen::MatrixXd> lu(basis_matrix_);
        if (lu.rank() < p_ || lu.rcond() < 1e-12) ok = false;
      }
    }
    if (!ok) set_pseudo_basis();
    basis_pos_.assign(static_cast<std::size_t>(m_ + p_), -1);
    for (Index k = 0; k < p_; ++k) basis_pos_[basis_[k]] = k;
  }

  void fill_basis_matrix(const DataView& data) {
    basis_matrix_.resize(p_, p_);
    for (Index k = 0; k < p_; ++k) {
      const Index row = basis_[k];
      if (row < m_) {
        basis_matrix_.row(k) = data.x.row(row);
      } else {
        basis_matrix_.row(k).setZero();
        basis_matrix_(k, row - m_) = 1.0;
      }
    }
  }

  void factorize(const DataView& data) {
    fill_basis_matrix(data);
    basis_rhs_.resize(p_);
    for (Index k = 0; k < p_; ++k) basis_rhs_[k] = rhs_[basis_[k]];
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(basis_matrix_);
    inv_ = lu.inverse();
    if (!inv_.allFinite()) throw NumericalFailure("singular simplex basis");
  }

  void update_point(const DataView& data) {
    coef_.noalias() = inv_ * basis_rhs_;
    for (Index k = 0; k < p_; ++k)
      if (basis_[k] >= m_) coef_[basis_[k] - m_] = rhs_[basis_[k]];
    fitted_.noalias() = data.x * coef_;
    resid_.resize(m_ + p_);
    for (Index i = 0; i < m_; ++i) resid_[i] = rhs_[i] - fitted_[i];
    for (Index j = 0; j < p_; ++j) resid_[m_ + j] = rhs_[m_ + j] - coef_[j];
    for (Index k = 0; k < p_; ++k) resid_[basis_[k]] = 0.0;
    for (Index i = 0; i < m_ + p_; ++i) {
      if (basis_pos_[i] >= 0) continue;
      const double fi = i < m_ ? fitted_[i] : coef_[i - m_];
      const double tol = side_tol_ * (1.0 + std::abs(rhs_[i]) + std::abs(fi));
      if (std::abs(resid_[i]) > tol) side_positive_[i] = resid_[i] > 0.0;
    }
  }

  double objective(const DataView& data) const {
    double s = 0.0;
    for (Index i = 0; i < m_; ++i) {
      const double r = data.y[i] - data.x.row(i).dot(coef_);
      s += r > 0.0 ? tau_ * r : (tau_ - 1.0) * r;
    }
    return s + weights_.dot(coef_.cwiseAbs());
  }

  Index m_ = 0;
  Index p_ = 0;
  double tau_ = 0.5;
  Vector weights_;
  std::vector<Index> basis_;
  std::vector<Index> basis_pos_;
  std::vector<char> side_positive_;
  Eigen::MatrixXd basis_matrix_;
  Eigen::MatrixXd inv_;
  Vector basis_rhs_;
  Vector rhs_;
  double side_tol_ = 0.0;
  Vector coef_;
  Vector fitted_;
  Vector resid_;
  Vector cdata_;
  Vector grad_;
  Vector dual_;
  Vector direction_;
  Vector zeta_;
  std::vector<std::pair<double, Index>> breakpoints_;
};

}  // namespace cpqr

#endif  // CPQR_LP_SIMPLEX_HPP
