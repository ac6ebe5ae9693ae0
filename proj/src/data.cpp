#include "drbayes/data.hpp"

#include <numbers>

namespace drbayes {

Index Dataset::treated() const {
  Index count = 0;
  for (Index i = 0; i < z.size(); ++i) count += z[i] == 1.0 ? 1 : 0;
  return count;
}

void Dataset::validate() const {
  const Index n = y.size();
  if (n == 0) throw DataError("dataset is empty");
  if (z.size() != n || x.rows() != n) {
    throw DataError("dataset columns have unequal lengths");
  }
  if (static_cast<Index>(names.size()) != x.cols()) {
    throw DataError("covariate name count does not match covariate columns");
  }
  for (Index i = 0; i < n; ++i) {
    if (!std::isfinite(y[i])) throw DataError("outcome is missing or non-finite at row " + std::to_string(i));
    if (z[i] != 0.0 && z[i] != 1.0) {
      throw DataError("treatment is not binary at row " + std::to_string(i));
    }
    for (Index j = 0; j < x.cols(); ++j) {
      if (!std::isfinite(x(i, j))) {
        throw DataError("covariate '" + names[j] + "' is missing or non-finite at row " +
                        std::to_string(i));
      }
    }
  }
  const Index n1 = treated();
  if (n1 == 0 || n1 == n) throw DataError("both treatment arms must be non-empty");
}

void CovariateSpec::validate(Index num_columns) const {
  for (const auto* refs : {&s_columns, &b_columns}) {
    for (const auto& r : *refs) {
      if (r.column < 0 || r.column >= num_columns) {
        throw DataError("covariate column index " + std::to_string(r.column) + " out of range");
      }
    }
  }
}

double apply_transform(Transform t, double x) {
  switch (t) {
    case Transform::kIdentity:
      return x;
    case Transform::kAbsStandardized:
      return std::abs(x) / std::sqrt(1.0 - 2.0 / std::numbers::pi);
  }
  return x;
}

Matrix covariate_block(const Dataset& data, std::span<const CovariateRef> refs) {
  Matrix out(data.size(), static_cast<Index>(refs.size()));
  for (Index j = 0; j < out.cols(); ++j) {
    const auto& r = refs[static_cast<std::size_t>(j)];
    if (r.transform == Transform::kIdentity) {
      out.col(j) = data.x.col(r.column);
    } else {
      out.col(j) = data.x.col(r.column).unaryExpr([t = r.transform](double v) {
        return apply_transform(t, v);
      });
    }
  }
  return out;
}

std::vector<std::string> covariate_labels(const Dataset& data,
                                          std::span<const CovariateRef> refs) {
  std::vector<std::string> labels;
  labels.reserve(refs.size());
  for (const auto& r : refs) {
    const std::string& name = data.names[static_cast<std::size_t>(r.column)];
    labels.push_back(r.transform == Transform::kIdentity ? name : "abs:" + name);
  }
  return labels;
}

Dataset take_rows(const Dataset& data, const std::vector<Index>& rows) {
  Dataset out;
  out.names = data.names;
  out.y = data.y(rows);
  out.z = data.z(rows);
  out.x = data.x(rows, Eigen::all);
  return out;
}

Dataset relabel_treatment(const Dataset& data) {
  Dataset out = data;
  out.z = (1.0 - data.z.array()).matrix();
  return out;
}

}  // namespace drbayes
