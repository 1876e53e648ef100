#pragma once

#include <Eigen/Core>

namespace mvpr {

// 64-bit dense matrices/vectors everywhere. Token sequences are rows:
// a T x D matrix holds T tokens of width D.
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

}  // namespace mvpr
