#include <gtest/gtest.h>

#include <random>

#include "cpqr/kkt.hpp"
#include "cpqr/solver.hpp"
#include "test_util.hpp"

namespace cpqr {
namespace {

using testing::make_dataset;

// Brute-force residual: enumerate every sign pattern of the subgradients of
// the interpolated rows and keep, per coordinate, the smallest violation.
double enumerated_residual(const Dataset& d, double tau, const Vector& b, const Vector& w) {
  const Index n = d.n(), p = d.p();
  std::vector<Index> tied;
  Vector grad = Vector::Zero(p);  // sum_i x_ij psi(r_i) over untied rows
  for (Index i = 0; i < n; ++i) {
    double fit = 0.0;
    for (Index j = 0; j < p; ++j) fit += d.x()(i, j) * b[j];
    const double r = d.y()[i] - fit;
    if (std::abs(r) <= 1e-9 * (1.0 + std::abs(d.y()[i]) + std::abs(fit)))
      tied.push_back(i);
    else
      for (Index j = 0; j < p; ++j) grad[j] += d.x()(i, j) * (r > 0 ? tau : tau - 1.0);
  }
  const double zt = 1e-6 * std::max(1.0, b.cwiseAbs().maxCoeff());
  double worst = 0.0;
  for (Index j = 0; j < p; ++j) {
    double best = std::numeric_limits<double>::infinity();
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (unsigned mask = 0; mask < (1u << tied.size()); ++mask) {
      double g = grad[j];
      for (std::size_t k = 0; k < tied.size(); ++k)
        g += d.x()(tied[k], j) * ((mask >> k) & 1u ? tau : tau - 1.0);
      lo = std::min(lo, g);
      hi = std::max(hi, g);
    }
    // reachable gradients form [lo, hi]
    if (std::abs(b[j]) >= zt) {
      const double t = w[j] * (b[j] > 0 ? 1.0 : -1.0);
      best = t < lo ? lo - t : (t > hi ? t - hi : 0.0);
    } else {
      // need some g in [lo, hi] with |g| <= w_j
      best = std::max({0.0, lo - w[j], -w[j] - hi});
    }
    worst = std::max(worst, best);
  }
  return worst;
}

TEST(Kkt, HandExamples) {
  const Dataset d = make_dataset({1, 2, 3}, {{1}, {1}, {1}});
  const Vector none = Vector::Zero(1);
  EXPECT_DOUBLE_EQ(kkt_residual_weighted(d, 0.5, Vector::Constant(1, 2.0), none), 0.0);
  // residuals -1.5, -0.5, 0.5: gradient 0.5*(1) - 0.5*(2) = -0.5
  EXPECT_DOUBLE_EQ(kkt_residual_weighted(d, 0.5, Vector::Constant(1, 2.5), none), 0.5);
  // penalty slope adds to the violation above the median
  EXPECT_DOUBLE_EQ(kkt_residual_weighted(d, 0.5, Vector::Constant(1, 2.5), Vector::Constant(1, 0.5)), 1.0);
  // below it, residuals -0.5, 0.5, 1.5 give gradient 0.5, balanced by weight 0.5
  EXPECT_DOUBLE_EQ(kkt_residual_weighted(d, 0.5, Vector::Constant(1, 1.5), none), 0.5);
  EXPECT_DOUBLE_EQ(kkt_residual_weighted(d, 0.5, Vector::Constant(1, 1.5), Vector::Constant(1, 0.5)), 0.0);
  // at zero every residual is positive: |1.5| exceeds weight 1 by 0.5
  EXPECT_DOUBLE_EQ(kkt_residual_weighted(d, 0.5, Vector::Zero(1), Vector::Constant(1, 1.0)), 0.5);
  EXPECT_DOUBLE_EQ(kkt_residual_weighted(d, 0.5, Vector::Zero(1), Vector::Constant(1, 1.5)), 0.0);
}

TEST(Kkt, SingleInterpolatedPointIsStationary) {
  const Dataset d = make_dataset({0}, {{1}});
  const Vector zero = Vector::Zero(1);
  for (double tau : {0.1, 0.5, 0.9}) {
    for (double lam : {1e-3, 0.5, 4.0}) {
      SegmentFit f;
      f.coefficients = zero;
      EXPECT_EQ(kkt_check_scad(f, d, tau, lam, 3.7), 0.0);
      EXPECT_EQ(kkt_check_weighted_l1(f, d, tau, Vector::Constant(1, lam)), 0.0);
    }
    EXPECT_EQ(kkt_residual_weighted(d, tau, zero, zero), 0.0);
  }
}

TEST(Kkt, MatchesEnumerationOracle) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> val(-4, 4), nn(1, 9), pp(1, 3), pick(0, 2);
  const double taus[] = {0.25, 0.5, 0.75};
  const double wts[] = {0.0, 0.5, 3.0};
  for (int k = 0; k < 500; ++k) {
    const int n = nn(rng), p = pp(rng);
    Vector y(n);
    Matrix x(n, p);
    for (int i = 0; i < n; ++i) {
      y[i] = val(rng);
      for (int j = 0; j < p; ++j) x(i, j) = val(rng);
    }
    Vector b(p), w(p);
    for (int j = 0; j < p; ++j) b[j] = pick(rng) == 0 ? 0.0 : val(rng) / 2.0, w[j] = wts[pick(rng)];
    const double tau = taus[pick(rng)];
    const Dataset d(y, x);
    EXPECT_NEAR(kkt_residual_weighted(d, tau, b, w), enumerated_residual(d, tau, b, w), 1e-12);
  }
}

TEST(Kkt, SolverFixedPointsAreCertified) {
  std::mt19937_64 rng(32);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.1, 0.9);
  for (int k = 0; k < 40; ++k) {
    const Index n = 30 + 5 * k, p = 1 + k % 5;
    Vector y(n);
    Matrix x(n, p);
    for (Index i = 0; i < n; ++i) {
      x(i, 0) = 1.0;
      for (Index j = 1; j < p; ++j) x(i, j) = g(rng);
      y[i] = x(i, 0) + (p > 1 ? 2 * x(i, 1) : 0.0) + g(rng);
    }
    const Dataset d(y, x);
    const double tau = u(rng);
    Vector w(p);
    for (Index j = 0; j < p; ++j) w[j] = 3.0 * u(rng) * (j % 2);
    auto l1 = solve_weighted_l1_qr(d, tau, w);
    EXPECT_LE(kkt_check_weighted_l1(l1, d, tau, w), 1e-4 * n);
    EXPECT_DOUBLE_EQ(kkt_check_weighted_l1(l1, d, tau, w), l1.kkt_residual);
    const double lam = std::pow(static_cast<double>(n), -0.4);
    auto sc = fit_scad_lla(d, tau, lam);
    EXPECT_LE(kkt_check_scad(sc, d, tau, lam, 3.7), 1e-4 * n);
  }
}

TEST(Kkt, PerturbingActiveCoordinateBreaksStationarity) {
  std::mt19937_64 rng(33);
  std::normal_distribution<double> g;
  for (int k = 0; k < 20; ++k) {
    const Index n = 80, p = 3;
    Vector y(n);
    Matrix x(n, p);
    for (Index i = 0; i < n; ++i) {
      x(i, 0) = 1.0;
      x(i, 1) = g(rng);
      x(i, 2) = g(rng);
      y[i] = 1.0 + 3.0 * x(i, 1) + g(rng);
    }
    const Dataset d(y, x);
    const Vector w = Vector::Constant(p, 0.2);
    auto fit = solve_weighted_l1_qr(d, 0.5, w);
    ASSERT_FALSE(fit.active_set.empty());
    const Index j = fit.active_set.front();
    Vector moved = fit.coefficients;
    moved[j] += 0.5;
    EXPECT_GT(kkt_residual_weighted(d, 0.5, moved, w), 1e-3);
    SegmentFit f = fit;
    f.coefficients = moved;
    const double lam = std::pow(80.0, -0.4);
    EXPECT_GT(kkt_check_scad(f, d, 0.5, lam, 3.7), 1e-3);
  }
}

TEST(Kkt, ScadResidualFollowsDerivativeShape) {
  // no interpolated rows; coefficient 10 is far past a * lambda
  const Dataset d = make_dataset({1, 2, 3}, {{1}, {1}, {1}});
  SegmentFit f;
  f.coefficients = Vector::Constant(1, 10.0);
  // all residuals negative: gradient -1.5 against a zero penalty slope
  EXPECT_NEAR(kkt_check_scad(f, d, 0.5, 0.5, 3.7), 1.5, 1e-12);
  // all residuals positive: gradient 1.5 against slope m * lambda = 1.5
  f.coefficients = Vector::Constant(1, 0.4);
  EXPECT_NEAR(kkt_check_scad(f, d, 0.5, 0.5, 3.7), 0.0, 1e-12);
  const Vector tw = scad_tangent_weights(Vector::Constant(1, 1.0), 3, 0.5, 3.7);
  EXPECT_NEAR(tw[0], 3 * (3.7 * 0.5 - 1.0) / 2.7, 1e-12);
}

TEST(Kkt, DimensionMismatch) {
  const Dataset d = make_dataset({1, 2}, {{1}, {1}});
  EXPECT_THROW(kkt_residual_weighted(d, 0.5, Vector::Zero(2), Vector::Zero(1)), DimensionMismatch);
  EXPECT_THROW(kkt_residual_weighted(d, 0.5, Vector::Zero(1), Vector::Zero(2)), DimensionMismatch);
  SegmentFit f;
  f.coefficients = Vector::Zero(3);
  EXPECT_THROW(kkt_check_scad(f, d, 0.5, 0.5, 3.7), DimensionMismatch);
}

}  // namespace
}  // namespace cpqr
