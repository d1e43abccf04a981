#pragma once

#include <Eigen/Dense>

namespace gps {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using Matd = Mat<double>;
using Vecd = Vec<double>;

}  // namespace gps
