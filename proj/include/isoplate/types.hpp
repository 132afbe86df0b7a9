#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <array>
#include <vector>

namespace isoplate {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat32 = Eigen::Matrix<double, 3, 2>;

// One row per sample point. Row-major so the buffer doubles as the stacked
// 3N vector (x0, y0, z0, x1, ...) used by the constraint Jacobian.
using Positions = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Coords2 = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;
using Triangle = std::array<int, 3>;
using Edge = std::array<int, 2>;

inline Eigen::Map<Eigen::VectorXd> stacked(Positions& Y) {
  return {Y.data(), Y.size()};
}

inline Eigen::Map<const Eigen::VectorXd> stacked(const Positions& Y) {
  return {Y.data(), Y.size()};
}

inline Positions unstacked(const Eigen::VectorXd& y) {
  return Eigen::Map<const Positions>(y.data(), y.size() / 3, 3);
}

}  // namespace isoplate
