#pragma once

// Moving-least-squares deformation gradients over point neighborhoods.
//
// For neighborhood i with rest offsets X (2 x n, one column per member) and
// weights W = diag(m_j), the averaged deformation gradient is
//   F_i = argmin_F sum_j m_j |F X_j - (Y_j - Y_i)|^2 = Yd W X^T (X W X^T)^-1,
// i.e. F_i = Yd A_i with the precomputed n x 2 operator A_i = W X^T (X W X^T)^-1.

#include "isoplate/errors.hpp"
#include "isoplate/geometry.hpp"
#include "isoplate/types.hpp"

#include <Eigen/Dense>

#include <vector>

namespace isoplate {

using DeformationGradient = Mat32;
using StrainTensor = Mat2;

struct MlsEntry {
  int center = 0;
  std::vector<int> members;
  /// n x 2, row j is the weight vector a_j so that F = sum_j (Y_j - Y_i) a_j^T.
  Eigen::Matrix<double, Eigen::Dynamic, 2> A;
  Mat2 gram_inv;

  /// Coefficient of Y_v in F for every stencil vertex: members first (in member
  /// order), center last with c_center = -sum_j a_j.
  Eigen::Matrix<double, Eigen::Dynamic, 2> stencil_coefficients() const {
    const auto n = static_cast<Eigen::Index>(members.size());
    Eigen::Matrix<double, Eigen::Dynamic, 2> c(n + 1, 2);
    c.topRows(n) = A;
    c.row(n) = -A.colwise().sum();
    return c;
  }

  /// Stencil vertex indices, ordered like stencil_coefficients().
  std::vector<int> stencil_vertices() const {
    std::vector<int> v = members;
    v.push_back(center);
    return v;
  }
};

struct MlsOperator {
  std::vector<MlsEntry> entries;

  std::size_t size() const { return entries.size(); }
  const MlsEntry& operator[](std::size_t i) const { return entries[i]; }
};

inline MlsEntry precompute_mls(const Neighborhood& nbhd, const LumpedMasses& masses) {
  const auto n = static_cast<Eigen::Index>(nbhd.members.size());
  Eigen::Matrix<double, 2, Eigen::Dynamic> X(2, n);
  Eigen::VectorXd w(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    X.col(j) = nbhd.local_coords[static_cast<std::size_t>(j)];
    w(j) = masses.masses(nbhd.members[static_cast<std::size_t>(j)]);
    if (!(w(j) > 0.0)) throw ValidationError("MLS weights must be positive");
  }
  const Mat2 gram = X * w.asDiagonal() * X.transpose();
  Eigen::SelfAdjointEigenSolver<Mat2> eig(gram);
  const double lo = eig.eigenvalues()(0);
  const double hi = eig.eigenvalues()(1);
  const double cond = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (!(cond <= 1e12)) throw SingularGram(nbhd.center, cond);

  MlsEntry e;
  e.center = nbhd.center;
  e.members = nbhd.members;
  e.gram_inv = gram.inverse();
  e.gram_inv = 0.5 * (e.gram_inv + e.gram_inv.transpose()).eval();
  e.A = w.asDiagonal() * X.transpose() * e.gram_inv;
  return e;
}

inline MlsOperator precompute_mls(const std::vector<Neighborhood>& nbhds, const LumpedMasses& masses) {
  MlsOperator op;
  op.entries.reserve(nbhds.size());
  for (const auto& nb : nbhds) op.entries.push_back(precompute_mls(nb, masses));
  return op;
}

inline DeformationGradient deformation_gradient(const Positions& Y, const MlsEntry& op) {
  DeformationGradient F = DeformationGradient::Zero();
  const Vec3 yi = Y.row(op.center);
  for (std::size_t j = 0; j < op.members.size(); ++j) {
    const Vec3 d = Y.row(op.members[j]).transpose() - yi;
    F.noalias() += d * op.A.row(static_cast<Eigen::Index>(j));
  }
  return F;
}

inline StrainTensor strain(const DeformationGradient& F) {
  return F.transpose() * F - Mat2::Identity();
}

}  // namespace isoplate
