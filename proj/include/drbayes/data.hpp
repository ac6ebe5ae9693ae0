#pragma once

#include "drbayes/numerics.hpp"

#include <span>
#include <string>
#include <vector>

namespace drbayes {

/// Raised for malformed observed data; names the offending column or row.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Observed sample: outcome y, binary treatment z, raw covariates x (n x p).
struct Dataset {
  Vector y;
  Vector z;
  Matrix x;
  std::vector<std::string> names;  // one per column of x

  Index size() const noexcept { return y.size(); }
  Index treated() const;

  /// Checks equal lengths, z in {0,1}, both arms non-empty and finite values.
  void validate() const;
};

enum class Transform {
  kIdentity,
  kAbsStandardized,  // |x| / sqrt(1 - 2/pi)
};

struct CovariateRef {
  Index column = 0;
  Transform transform = Transform::kIdentity;

  friend bool operator==(const CovariateRef&, const CovariateRef&) = default;
};

/// Which covariate columns (and transforms) enter the outcome set S and the
/// treatment set B.
struct CovariateSpec {
  std::vector<CovariateRef> s_columns;
  std::vector<CovariateRef> b_columns;

  void validate(Index num_columns) const;
};

double apply_transform(Transform t, double x);

/// n x k matrix of the referenced, transformed covariates.
Matrix covariate_block(const Dataset& data, std::span<const CovariateRef> refs);

std::vector<std::string> covariate_labels(const Dataset& data,
                                          std::span<const CovariateRef> refs);

/// Rows `rows` of `data`, in order (duplicates allowed).
Dataset take_rows(const Dataset& data, const std::vector<Index>& rows);

/// Swaps the treatment labels z -> 1 - z.
Dataset relabel_treatment(const Dataset& data);

}  // namespace drbayes
