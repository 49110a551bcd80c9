#ifndef CPQR_TYPES_HPP
#define CPQR_TYPES_HPP

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace cpqr {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// The LP did not reach an optimal vertex within its iteration budget, or a
/// pivot became numerically singular.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

class SegmentTooShort : public Error {
 public:
  using Error::Error;
};

/// n < (k + 1) * min_segment: no admissible segmentation exists.
class InfeasibleSearch : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t row, std::size_t col, const std::string& reason)
      : Error("parse error at row " + std::to_string(row) + ", column " + std::to_string(col) + ": " +
              reason),
        row_(row),
        col_(col) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t col() const noexcept { return col_; }

 private:
  std::size_t row_;
  std::size_t col_;
};

class EmptyFile : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Data

/// Read-only window on a contiguous run of observations.
struct DataView {
  Eigen::Ref<const Matrix> x;
  Eigen::Ref<const Vector> y;

  Index n() const { return y.size(); }
  Index p() const { return x.cols(); }
};

/// Response vector and covariate matrix (row i is X_i^t). All entries finite.
class Dataset {
 public:
  Dataset(Vector y, Matrix x) : y_(std::move(y)), x_(std::move(x)) {
    if (y_.size() < 1 || x_.cols() < 1) throw InvalidArgument("dataset needs n >= 1 and p >= 1");
    if (x_.rows() != y_.size())
      throw DimensionMismatch("covariate rows (" + std::to_string(x_.rows()) + ") != response length (" +
                              std::to_string(y_.size()) + ")");
    if (!y_.allFinite() || !x_.allFinite()) throw InvalidArgument("dataset contains non-finite values");
  }

  Index n() const { return y_.size(); }
  Index p() const { return x_.cols(); }
  const Vector& y() const { return y_; }
  const Matrix& x() const { return x_; }

  DataView view() const { return DataView{x_, y_}; }
  operator DataView() const { return view(); }

  /// Observations in the half-open index range (j1, j2], i.e. zero-based rows j1 .. j2-1.
  DataView segment(Index j1, Index j2) const {
    if (j1 < 0 || j2 > n() || j1 >= j2)
      throw InvalidArgument("segment (" + std::to_string(j1) + ", " + std::to_string(j2) + "] out of range");
    return DataView{x_.middleRows(j1, j2 - j1), y_.segment(j1, j2 - j1)};
  }

 private:
  Vector y_;
  Matrix x_;
};

class QuantileLevel {
 public:
  explicit QuantileLevel(double tau) : tau_(tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidArgument("quantile level must lie in (0, 1)");
  }
  double value() const noexcept { return tau_; }
  operator double() const noexcept { return tau_; }

 private:
  double tau_;
};

// ---------------------------------------------------------------------------
// Penalties

struct NoPenalty {};

struct Scad {
  double lambda;
  double a = 3.7;
};

struct WeightedL1 {
  Vector weights;
};

using PenaltySpec = std::variant<NoPenalty, Scad, WeightedL1>;

inline void validate_scad(double lambda, double a) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InvalidArgument("SCAD lambda must be > 0");
  if (!(a > 2.0) || !std::isfinite(a)) throw InvalidArgument("SCAD a must be > 2");
}

inline void validate_weights(const Vector& w) {
  for (Index j = 0; j < w.size(); ++j)
    if (!(w[j] >= 0.0) || !std::isfinite(w[j])) throw InvalidArgument("penalty weights must be finite and >= 0");
}

// ---------------------------------------------------------------------------
// Fits

struct SegmentFit {
  Index j1 = 0;  ///< exclusive start of the range (j1, j2]
  Index j2 = 0;
  Vector coefficients;
  std::vector<Index> active_set;
  double objective = 0.0;
  double kkt_residual = 0.0;
  /// Weighted-L1 weights of the final LP solve (empty for unpenalized fits).
  Vector weights;
  /// Set when a flat direction exists (zero covariate column carrying zero weight).
  bool nonunique = false;
  int lp_iterations = 0;
  int lla_iterations = 0;

  Index length() const { return j2 - j1; }
};

struct Segmentation {
  std::vector<Index> breaks;  ///< strictly increasing, 1 <= l_1 < ... < l_K < n

  Index k() const { return static_cast<Index>(breaks.size()); }

  /// Segment boundaries l_0 = 0, l_1, ..., l_K, l_{K+1} = n.
  std::vector<Index> bounds(Index n) const {
    std::vector<Index> b;
    b.reserve(breaks.size() + 2);
    b.push_back(0);
    b.insert(b.end(), breaks.begin(), breaks.end());
    b.push_back(n);
    return b;
  }

  void validate(Index n, Index min_segment) const {
    auto b = bounds(n);
    for (std::size_t r = 1; r < b.size(); ++r) {
      if (b[r] <= b[r - 1]) throw InvalidArgument("breaks must be strictly increasing inside (0, n)");
      if (b[r] - b[r - 1] < min_segment)
        throw SegmentTooShort("segment (" + std::to_string(b[r - 1]) + ", " + std::to_string(b[r]) +
                              "] shorter than minimum " + std::to_string(min_segment));
    }
  }
};

struct ChangePointFit {
  Segmentation segmentation;
  std::vector<SegmentFit> segment_fits;
  double total_objective = 0.0;
};

}  // namespace cpqr

#endif  // CPQR_TYPES_HPP
