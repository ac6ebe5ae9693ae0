#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace drbayes {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Raised when a factorization meets a non-positive pivot.
class SingularMatrixError : public std::runtime_error {
 public:
  SingularMatrixError(const std::string& what, Index pivot)
      : std::runtime_error(what), pivot_(pivot) {}
  Index pivot() const noexcept { return pivot_; }

 private:
  Index pivot_;
};

/// Raised by sample_mvn when the covariance is not positive semi-definite.
class DecompositionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic random stream identified by (seed, stream_id).
///
/// The engine is seeded from a SplitMix64 hash of both identifiers, so two
/// streams with equal identifiers replay the same sequence and streams with
/// different identifiers are decorrelated. Child streams derived with
/// substream() depend only on the parent's identifiers, never on how many
/// values the parent has already produced.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  RngStream substream(std::uint64_t key) const;

  double uniform();       // [0, 1)
  double normal();        // N(0, 1)
  double exponential();   // Exp(1)
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

inline constexpr double kExpitFloor = 1e-12;

/// Logistic function clamped to [1e-12, 1 - 1e-12].
template <typename Scalar>
  requires(!std::is_base_of_v<Eigen::EigenBase<Scalar>, Scalar>)
Scalar expit(Scalar x) {
  using std::exp;
  const Scalar p = x >= Scalar(0) ? Scalar(1) / (Scalar(1) + exp(-x))
                                  : exp(x) / (Scalar(1) + exp(x));
  const Scalar lo(kExpitFloor);
  const Scalar hi = Scalar(1) - lo;
  return p < lo ? lo : (p > hi ? hi : p);
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> expit(
    const Eigen::MatrixBase<Derived>& x) {
  return x.unaryExpr([](typename Derived::Scalar v) { return expit(v); });
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// One draw from the uniform Dirichlet on the n-simplex.
struct DirichletDraw {
  Vector weights;
};

DirichletDraw sample_dirichlet(Index n, RngStream& rng);

/// mean + L z with L from a pivoted LDL^T factor of cov.
Vector sample_mvn(const Vector& mean, const Matrix& cov, RngStream& rng);

/// Lower Cholesky factor of a symmetric positive definite matrix.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
cholesky_lower(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  using std::sqrt;
  const Index p = a.rows();
  if (a.cols() != p) throw std::invalid_argument("cholesky: matrix is not square");
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> l =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(p, p);
  for (Index j = 0; j < p; ++j) {
    Scalar d = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(d > Scalar(0))) {
      throw SingularMatrixError(
          "cholesky: matrix is not positive definite (pivot " + std::to_string(j) + ")", j);
    }
    l(j, j) = sqrt(d);
    for (Index i = j + 1; i < p; ++i) {
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
    }
  }
  return l;
}

/// Solves A x = b for symmetric positive definite A.
template <typename DerivedA, typename DerivedB>
Eigen::Matrix<typename DerivedA::Scalar, Eigen::Dynamic, 1> cholesky_solve(
    const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("cholesky_solve: dimension mismatch");
  const auto l = cholesky_lower(a);
  Eigen::Matrix<typename DerivedA::Scalar, Eigen::Dynamic, 1> x =
      l.template triangularView<Eigen::Lower>().solve(b);
  l.transpose().template triangularView<Eigen::Upper>().solveInPlace(x);
  return x;
}

/// Batch-means standard error of the grand mean. Batches are contiguous and
/// equal-sized; the trailing remainder is dropped, so the result depends on
/// the order of `values`.
double batch_means_error(const Vector& values, Index num_batches);

/// floor(sqrt(R)), the default batch count.
Index default_batch_count(Index replications);

double sample_mean(const Vector& v);
/// Standard deviation with the n - 1 divisor.
double sample_sd(const Vector& v);

}  // namespace drbayes
