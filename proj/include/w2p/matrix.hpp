#pragma once

#include <Eigen/Core>

namespace w2p {

// Row-major so that a row is one frame / one token position.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using ColVector = Eigen::Matrix<double, Eigen::Dynamic, 1>;

}  // namespace w2p
