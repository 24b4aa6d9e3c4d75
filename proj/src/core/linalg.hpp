#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace srpmoe {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;  // column-major; batch dimensions live in columns

inline bool all_finite(const Vec& v) { return v.allFinite(); }
inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace srpmoe
