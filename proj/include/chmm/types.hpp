#pragma once

#include <Eigen/Dense>

namespace chmm {

// Row-major so that one sample (or one feature / hidden unit) is a contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

using Index = Eigen::Index;

}  // namespace chmm
