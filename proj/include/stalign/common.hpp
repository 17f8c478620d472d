#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace stalign {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

// Parameter / usage / config problems -> exit code 1 at the CLI.
struct ParamError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Bad or inconsistent data, I/O failures -> exit code 2 at the CLI.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require_finite(const Mat& m, const std::string& what) {
  if (!m.allFinite()) throw DataError(what + ": non-finite entries");
}

// Worker cap from ST_ALIGN_THREADS (default 1 so results are reproducible).
int worker_threads();

}  // namespace stalign
