#pragma once

// Isometry constraints on MLS-averaged deformation gradients, plus the linear
// (pins, average-position coupling) and per-edge constraint sets that share
// the same projection machinery.
//
// Per neighborhood i, with C = F_i^T F_i:
//   g_tr  = tr(C) - 2
//   g_det = det(C) - 1
// Both vanish together iff C = I, i.e. the averaged strain is zero. The
// gradients w.r.t. a stencil vertex v with coefficient c_v are
//   dg_tr/dY_v  = 2 F c_v
//   dg_det/dY_v = 2 F adj(C) c_v,   adj([[a,b],[c,d]]) = [[d,-b],[-c,a]].
// At C = I they coincide, so each neighborhood contributes a single
// independent row on flat states.
//
// Constraining the three entries of the strain directly was rejected: it adds
// a third row per neighborhood and the rows become rank-deficient. Using the
// trace and determinant of the strain itself was also rejected: det(strain)
// has a critical point at zero strain, so its gradient vanishes exactly where
// the projection needs it.

#include "isoplate/geometry.hpp"
#include "isoplate/kinematics.hpp"
#include "isoplate/types.hpp"

#include <memory>
#include <utility>
#include <vector>

namespace isoplate {

struct ConstraintPair {
  double trace = 0.0;
  double det = 0.0;
};

inline Mat2 adjugate(const Mat2& m) {
  Mat2 a;
  a << m(1, 1), -m(0, 1), -m(1, 0), m(0, 0);
  return a;
}

inline ConstraintPair eval_constraints(const DeformationGradient& F) {
  const Mat2 C = F.transpose() * F;
  return {C.trace() - 2.0, C.determinant() - 1.0};
}

/// Per-vertex gradient 3-vectors of one scalar constraint over a neighborhood.
struct GradientStencil {
  Vec3 center = Vec3::Zero();
  std::vector<Vec3> members;
};

inline std::pair<GradientStencil, GradientStencil> constraint_gradients(const DeformationGradient& F,
                                                                        const MlsEntry& op) {
  const Mat2 adj = adjugate(F.transpose() * F);
  const Eigen::Matrix<double, 3, 2> Ftr = 2.0 * F;
  const Eigen::Matrix<double, 3, 2> Fdet = 2.0 * F * adj;
  GradientStencil tr, det;
  tr.members.reserve(op.members.size());
  det.members.reserve(op.members.size());
  for (Eigen::Index j = 0; j < op.A.rows(); ++j) {
    const Vec2 a = op.A.row(j).transpose();
    tr.members.push_back(Ftr * a);
    det.members.push_back(Fdet * a);
    tr.center -= tr.members.back();
    det.center -= det.members.back();
  }
  return {tr, det};
}

/// A block of scalar equality constraints g(Y) = 0 over stacked 3N positions.
class ConstraintSet {
 public:
  virtual ~ConstraintSet() = default;

  virtual Eigen::Index rows() const = 0;
  virtual void evaluate(const Positions& Y, Eigen::Ref<Eigen::VectorXd> g) const = 0;
  /// Appends Jacobian entries with rows shifted by row0.
  virtual void jacobian(const Positions& Y, Eigen::Index row0, std::vector<Triplet>& out) const = 0;
  /// Appends sum_k lambda_k * Hessian(g_k). Entries are emitted even when
  /// lambda is zero so the sparsity pattern does not depend on lambda.
  virtual void hessian(const Positions& Y, const Eigen::Ref<const Eigen::VectorXd>& lambda,
                       std::vector<Triplet>& out) const = 0;
  /// True when every row is invariant under a common translation of all points.
  virtual bool translation_invariant() const = 0;
  /// Linear rows carry units of length and are held to their own (tight)
  /// tolerance instead of the dimensionless strain tolerance.
  virtual bool is_linear() const { return false; }
};

class IsometryConstraints final : public ConstraintSet {
 public:
  explicit IsometryConstraints(std::shared_ptr<const MlsOperator> op) : owned_(std::move(op)), op_(*owned_) {}
  /// Non-owning view; `op` must outlive this object.
  explicit IsometryConstraints(const MlsOperator& op) : op_(op) {}

  const MlsOperator& mls() const { return op_; }

  Eigen::Index rows() const override { return 2 * static_cast<Eigen::Index>(op_.size()); }

  void evaluate(const Positions& Y, Eigen::Ref<Eigen::VectorXd> g) const override {
    for (std::size_t i = 0; i < op_.size(); ++i) {
      const auto p = eval_constraints(deformation_gradient(Y, op_[i]));
      g(2 * static_cast<Eigen::Index>(i)) = p.trace;
      g(2 * static_cast<Eigen::Index>(i) + 1) = p.det;
    }
  }

  void jacobian(const Positions& Y, Eigen::Index row0, std::vector<Triplet>& out) const override {
    for (std::size_t i = 0; i < op_.size(); ++i) {
      const auto& e = op_[i];
      const auto [tr, det] = constraint_gradients(deformation_gradient(Y, e), e);
      const Eigen::Index r = row0 + 2 * static_cast<Eigen::Index>(i);
      auto put = [&](int v, const Vec3& gt, const Vec3& gd) {
        for (int a = 0; a < 3; ++a) {
          out.emplace_back(r, 3 * v + a, gt(a));
          out.emplace_back(r + 1, 3 * v + a, gd(a));
        }
      };
      for (std::size_t j = 0; j < e.members.size(); ++j) put(e.members[j], tr.members[j], det.members[j]);
      put(e.center, tr.center, det.center);
    }
  }

  void hessian(const Positions& Y, const Eigen::Ref<const Eigen::VectorXd>& lambda,
               std::vector<Triplet>& out) const override {
    for (std::size_t i = 0; i < op_.size(); ++i) {
      const auto& e = op_[i];
      const double lt = lambda(2 * static_cast<Eigen::Index>(i));
      const double ld = lambda(2 * static_cast<Eigen::Index>(i) + 1);
      const DeformationGradient F = deformation_gradient(Y, e);
      const Mat2 adj = adjugate(F.transpose() * F);
      const Mat3 FFt = F * F.transpose();
      const auto c = e.stencil_coefficients();
      const auto verts = e.stencil_vertices();
      const Eigen::Matrix<double, 3, Eigen::Dynamic> Fc = F * c.transpose();
      const auto n = static_cast<Eigen::Index>(verts.size());
      for (Eigen::Index v = 0; v < n; ++v) {
        for (Eigen::Index u = 0; u < n; ++u) {
          const double cc = c.row(u).dot(c.row(v));
          const double cac = c.row(u) * adj * c.row(v).transpose();
          Mat3 H = (2.0 * lt * cc + 2.0 * ld * cac) * Mat3::Identity();
          H += ld * (4.0 * Fc.col(v) * Fc.col(u).transpose() - 2.0 * Fc.col(u) * Fc.col(v).transpose() -
                     2.0 * cc * FFt);
          for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) out.emplace_back(3 * verts[v] + a, 3 * verts[u] + b, H(a, b));
        }
      }
    }
  }

  bool translation_invariant() const override { return true; }

 private:
  std::shared_ptr<const MlsOperator> owned_;
  const MlsOperator& op_;
};

/// sum_p w_p Y_p[axis] - target = 0, one row per (constraint, axis).
struct LinearRow {
  std::vector<std::pair<int, double>> weights;
  int axis = 0;
  double target = 0.0;
};

class LinearConstraints final : public ConstraintSet {
 public:
  explicit LinearConstraints(std::vector<LinearRow> rows) : rows_(std::move(rows)) {}

  /// Three rows pinning point `index` to `target`.
  static std::vector<LinearRow> pin(int index, const Vec3& target) {
    std::vector<LinearRow> r;
    for (int a = 0; a < 3; ++a) r.push_back({{{index, 1.0}}, a, target(a)});
    return r;
  }

  /// Three rows tying a weighted average of points to `target`.
  static std::vector<LinearRow> average(const std::vector<std::pair<int, double>>& weights,
                                        const Vec3& target) {
    std::vector<LinearRow> r;
    for (int a = 0; a < 3; ++a) r.push_back({weights, a, target(a)});
    return r;
  }

  const std::vector<LinearRow>& linear_rows() const { return rows_; }

  Eigen::Index rows() const override { return static_cast<Eigen::Index>(rows_.size()); }

  void evaluate(const Positions& Y, Eigen::Ref<Eigen::VectorXd> g) const override {
    for (std::size_t k = 0; k < rows_.size(); ++k) {
      double s = -rows_[k].target;
      for (const auto& [p, w] : rows_[k].weights) s += w * Y(p, rows_[k].axis);
      g(static_cast<Eigen::Index>(k)) = s;
    }
  }

  void jacobian(const Positions&, Eigen::Index row0, std::vector<Triplet>& out) const override {
    for (std::size_t k = 0; k < rows_.size(); ++k) {
      for (const auto& [p, w] : rows_[k].weights)
        out.emplace_back(row0 + static_cast<Eigen::Index>(k), 3 * p + rows_[k].axis, w);
    }
  }

  void hessian(const Positions&, const Eigen::Ref<const Eigen::VectorXd>&, std::vector<Triplet>&) const override {}

  bool translation_invariant() const override { return rows_.empty(); }
  bool is_linear() const override { return true; }

 private:
  std::vector<LinearRow> rows_;
};

/// Baseline: |Y_a - Y_b|^2 / L_ab^2 - 1 = 0 per mesh edge.
class EdgeLengthConstraints final : public ConstraintSet {
 public:
  EdgeLengthConstraints(std::vector<Edge> edges, const Positions& rest) : edges_(std::move(edges)) {
    inv_rest_sq_.reserve(edges_.size());
    for (const auto& e : edges_) inv_rest_sq_.push_back(1.0 / (rest.row(e[0]) - rest.row(e[1])).squaredNorm());
  }

  const std::vector<Edge>& edges() const { return edges_; }

  Eigen::Index rows() const override { return static_cast<Eigen::Index>(edges_.size()); }

  void evaluate(const Positions& Y, Eigen::Ref<Eigen::VectorXd> g) const override {
    for (std::size_t k = 0; k < edges_.size(); ++k) {
      g(static_cast<Eigen::Index>(k)) =
          (Y.row(edges_[k][0]) - Y.row(edges_[k][1])).squaredNorm() * inv_rest_sq_[k] - 1.0;
    }
  }

  void jacobian(const Positions& Y, Eigen::Index row0, std::vector<Triplet>& out) const override {
    for (std::size_t k = 0; k < edges_.size(); ++k) {
      const auto [a, b] = edges_[k];
      const Vec3 d = 2.0 * inv_rest_sq_[k] * (Y.row(a) - Y.row(b)).transpose();
      const Eigen::Index r = row0 + static_cast<Eigen::Index>(k);
      for (int c = 0; c < 3; ++c) {
        out.emplace_back(r, 3 * a + c, d(c));
        out.emplace_back(r, 3 * b + c, -d(c));
      }
    }
  }

  void hessian(const Positions&, const Eigen::Ref<const Eigen::VectorXd>& lambda,
               std::vector<Triplet>& out) const override {
    for (std::size_t k = 0; k < edges_.size(); ++k) {
      const auto [a, b] = edges_[k];
      const double s = 2.0 * inv_rest_sq_[k] * lambda(static_cast<Eigen::Index>(k));
      for (int c = 0; c < 3; ++c) {
        out.emplace_back(3 * a + c, 3 * a + c, s);
        out.emplace_back(3 * b + c, 3 * b + c, s);
        out.emplace_back(3 * a + c, 3 * b + c, -s);
        out.emplace_back(3 * b + c, 3 * a + c, -s);
      }
    }
  }

  bool translation_invariant() const override { return true; }

 private:
  std::vector<Edge> edges_;
  std::vector<double> inv_rest_sq_;
};

/// Row-stacked union of constraint sets over N points.
class ConstraintSystem {
 public:
  explicit ConstraintSystem(Eigen::Index points) : points_(points) {}

  void add(std::shared_ptr<const ConstraintSet> set) {
    offsets_.push_back(rows_);
    rows_ += set->rows();
    sets_.push_back(std::move(set));
  }

  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return 3 * points_; }
  Eigen::Index points() const { return points_; }
  const std::vector<std::shared_ptr<const ConstraintSet>>& sets() const { return sets_; }
  Eigen::Index offset(std::size_t k) const { return offsets_[k]; }

  bool translation_invariant() const {
    for (const auto& s : sets_)
      if (!s->translation_invariant()) return false;
    return true;
  }

  /// ||g||_inf over nonlinear (strain-type) rows and over linear rows.
  std::pair<double, double> residuals(const Eigen::VectorXd& g) const {
    double nonlinear = 0.0, linear = 0.0;
    for (std::size_t k = 0; k < sets_.size(); ++k) {
      if (sets_[k]->rows() == 0) continue;
      const double r = g.segment(offsets_[k], sets_[k]->rows()).lpNorm<Eigen::Infinity>();
      (sets_[k]->is_linear() ? linear : nonlinear) = std::max(sets_[k]->is_linear() ? linear : nonlinear, r);
    }
    return {nonlinear, linear};
  }

  Eigen::VectorXd evaluate(const Positions& Y) const {
    Eigen::VectorXd g(rows_);
    for (std::size_t k = 0; k < sets_.size(); ++k) sets_[k]->evaluate(Y, g.segment(offsets_[k], sets_[k]->rows()));
    return g;
  }

  SparseMatrix jacobian(const Positions& Y) const {
    std::vector<Triplet> trip;
    for (std::size_t k = 0; k < sets_.size(); ++k) sets_[k]->jacobian(Y, offsets_[k], trip);
    SparseMatrix J(rows_, cols());
    J.setFromTriplets(trip.begin(), trip.end());
    J.makeCompressed();
    return J;
  }

  /// sum_k lambda_k H_k over all rows.
  SparseMatrix hessian(const Positions& Y, const Eigen::VectorXd& lambda) const {
    std::vector<Triplet> trip;
    for (std::size_t k = 0; k < sets_.size(); ++k)
      sets_[k]->hessian(Y, lambda.segment(offsets_[k], sets_[k]->rows()), trip);
    SparseMatrix H(cols(), cols());
    H.setFromTriplets(trip.begin(), trip.end());
    H.makeCompressed();
    return H;
  }

 private:
  Eigen::Index points_;
  Eigen::Index rows_ = 0;
  std::vector<std::shared_ptr<const ConstraintSet>> sets_;
  std::vector<Eigen::Index> offsets_;
};

struct ConstraintValues {
  /// Interleaved (g_tr(0), g_det(0), g_tr(1), g_det(1), ...).
  Eigen::VectorXd g;
};

struct ConstraintJacobian {
  SparseMatrix J;
};

inline std::pair<ConstraintJacobian, ConstraintValues> assemble_jacobian(const Positions& Y, const MlsOperator& ops) {
  const IsometryConstraints iso(ops);
  ConstraintValues values{Eigen::VectorXd(iso.rows())};
  iso.evaluate(Y, values.g);
  std::vector<Triplet> trip;
  iso.jacobian(Y, 0, trip);
  ConstraintJacobian jac{SparseMatrix(iso.rows(), 3 * Y.rows())};
  jac.J.setFromTriplets(trip.begin(), trip.end());
  jac.J.makeCompressed();
  return {std::move(jac), std::move(values)};
}

struct GeometricStiffness {
  SparseMatrix K;
};

inline GeometricStiffness geometric_stiffness(const Positions& Y, const Eigen::VectorXd& multipliers,
                                              const MlsOperator& ops) {
  const IsometryConstraints iso(ops);
  std::vector<Triplet> trip;
  iso.hessian(Y, multipliers, trip);
  GeometricStiffness out{SparseMatrix(3 * Y.rows(), 3 * Y.rows())};
  out.K.setFromTriplets(trip.begin(), trip.end());
  out.K.makeCompressed();
  return out;
}

}  // namespace isoplate
