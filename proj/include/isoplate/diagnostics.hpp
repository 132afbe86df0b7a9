#pragma once

// Strain and shape metrics used by the experiment harness and the CSV output.

#include "isoplate/constraints.hpp"
#include "isoplate/geometry.hpp"
#include "isoplate/kinematics.hpp"
#include "isoplate/types.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <vector>

namespace isoplate {

struct StrainReport {
  /// (|Y_a - Y_b| - |X_a - X_b|) / |X_a - X_b| per edge.
  std::vector<double> edge_strain;
  std::vector<ConstraintPair> neighborhood;
  double max_abs_edge_strain = 0.0;
  double mean_abs_edge_strain = 0.0;
  double max_abs_g = 0.0;
  double mean_abs_g = 0.0;
};

inline std::vector<double> edge_strains(const Positions& Y, const Positions& rest, const std::vector<Edge>& edges) {
  std::vector<double> out;
  out.reserve(edges.size());
  for (const auto& [a, b] : edges) {
    const double l0 = (rest.row(a) - rest.row(b)).norm();
    out.push_back(((Y.row(a) - Y.row(b)).norm() - l0) / l0);
  }
  return out;
}

inline double max_abs_edge_strain(const Positions& Y, const Positions& rest, const std::vector<Edge>& edges) {
  double m = 0.0;
  for (double e : edge_strains(Y, rest, edges)) m = std::max(m, std::abs(e));
  return m;
}

inline StrainReport strain_report(const Positions& Y, const Positions& rest, const std::vector<Edge>& edges,
                                  const MlsOperator* mls) {
  StrainReport r;
  r.edge_strain = edge_strains(Y, rest, edges);
  for (double e : r.edge_strain) {
    r.max_abs_edge_strain = std::max(r.max_abs_edge_strain, std::abs(e));
    r.mean_abs_edge_strain += std::abs(e);
  }
  if (!r.edge_strain.empty()) r.mean_abs_edge_strain /= static_cast<double>(r.edge_strain.size());
  if (mls) {
    for (const auto& e : mls->entries) {
      const auto p = eval_constraints(deformation_gradient(Y, e));
      r.neighborhood.push_back(p);
      const double m = std::max(std::abs(p.trace), std::abs(p.det));
      r.max_abs_g = std::max(r.max_abs_g, m);
      r.mean_abs_g += std::abs(p.trace) + std::abs(p.det);
    }
    if (!r.neighborhood.empty()) r.mean_abs_g /= 2.0 * static_cast<double>(r.neighborhood.size());
  }
  return r;
}

struct DistanceChangeField {
  /// Relative change of the extrinsic distance to the anchor; 0 at the anchor.
  Eigen::VectorXd values;
  double max = 0.0;
};

inline DistanceChangeField distance_change_field(const Positions& Y, const Positions& rest, int anchor) {
  DistanceChangeField f{Eigen::VectorXd::Zero(Y.rows()), 0.0};
  for (Eigen::Index p = 0; p < Y.rows(); ++p) {
    if (p == anchor) continue;
    const double d0 = (rest.row(p) - rest.row(anchor)).norm();
    const double d = (Y.row(p) - Y.row(anchor)).norm();
    f.values(p) = (d - d0) / d0;
  }
  f.max = f.values.maxCoeff();
  return f;
}

/// Largest distance from the current pin segment over points whose rest
/// position lies on the rest segment between the two pins (the pinned edge).
inline double sag_metric(const Positions& Y, const Positions& rest, int pin_a, int pin_b) {
  const Vec3 ra = rest.row(pin_a), rb = rest.row(pin_b);
  const Vec3 a = Y.row(pin_a), b = Y.row(pin_b);
  const Vec3 rest_dir = rb - ra;
  const double rest_len2 = rest_dir.squaredNorm();
  const Vec3 dir = (b - a).normalized();
  double sag = 0.0;
  for (Eigen::Index p = 0; p < Y.rows(); ++p) {
    const Vec3 r = rest.row(p).transpose() - ra;
    const double t = r.dot(rest_dir) / rest_len2;
    if (t < 0.0 || t > 1.0) continue;
    if ((r - t * rest_dir).norm() > 1e-9 * std::sqrt(rest_len2)) continue;
    const Vec3 d = Y.row(p).transpose() - a;
    sag = std::max(sag, (d - d.dot(dir) * dir).norm());
  }
  return sag;
}

struct RankProbe {
  Eigen::Index rank = 0;
  Eigen::Index nullity = 0;
  bool dense = true;
  /// Largest |row_tr - row_det| entry over all neighborhoods.
  double max_paired_row_difference = 0.0;
};

/// Numeric rank of the isometry Jacobian with threshold 1e-8 sigma_max.
/// Above 500 points only the paired-row comparison is performed; rank then
/// reports the upper bound 2N minus the number of coinciding row pairs.
inline RankProbe jacobian_rank_probe(const Positions& Y, const MlsOperator& mls) {
  const auto [jac, values] = assemble_jacobian(Y, mls);
  RankProbe out;
  const Eigen::Index n = Y.rows();
  const Eigen::MatrixXd dense_rows = Eigen::MatrixXd(jac.J);
  const double scale = dense_rows.size() ? dense_rows.cwiseAbs().maxCoeff() : 0.0;
  Eigen::Index coinciding = 0;
  for (Eigen::Index i = 0; i < dense_rows.rows() / 2; ++i) {
    const double diff = (dense_rows.row(2 * i) - dense_rows.row(2 * i + 1)).lpNorm<Eigen::Infinity>();
    out.max_paired_row_difference = std::max(out.max_paired_row_difference, diff);
    if (diff <= 1e-12 * scale) ++coinciding;
  }
  if (n <= 500) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(dense_rows);
    const auto& s = svd.singularValues();
    const double cut = s.size() ? 1e-8 * s(0) : 0.0;
    out.rank = (s.array() > cut).count();
  } else {
    out.dense = false;
    out.rank = dense_rows.rows() - coinciding;
  }
  out.nullity = 3 * n - out.rank;
  return out;
}

}  // namespace isoplate
