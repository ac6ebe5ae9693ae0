#pragma once

#include "drbayes/data.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace drbayes {

/// Exit codes: 0 success, 1 identity failure, 2 usage or data error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitIdentityFailure = 1;
inline constexpr int kExitUsage = 2;

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Reads a headered numeric CSV. `outcome` and `treatment` name columns; the
/// covariate refs are "name" or "abs:name". Throws DataError naming the
/// offending column or row.
struct CsvSelection {
  Dataset data;
  CovariateSpec spec;
};
CsvSelection read_dataset_csv(std::istream& in, const std::string& outcome, const std::string& treatment,
                              const std::vector<std::string>& s_cols, const std::vector<std::string>& b_cols);

void write_dataset_csv(std::ostream& out, const Dataset& data);

std::string version_string();

}  // namespace drbayes
