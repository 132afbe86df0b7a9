#pragma once

// Time stepping: linearly implicit bending + external forces, projection onto
// the constraint manifold, collision correction and velocity update.

#include "isoplate/constraints.hpp"
#include "isoplate/geometry.hpp"
#include "isoplate/kinematics.hpp"
#include "isoplate/solver.hpp"
#include "isoplate/types.hpp"

#include <Eigen/QR>
#include <Eigen/SparseCholesky>

#include <chrono>
#include <cmath>
#include <memory>
#include <optional>
#include <variant>
#include <vector>

namespace isoplate {

struct MaterialParams {
  /// k in N*m.
  double bending_stiffness = 1e-4;
  /// kg/m^2.
  double area_density = 0.1;
  std::optional<double> youngs_modulus;
  std::optional<double> thickness;
  std::optional<double> poisson_ratio;

  /// k = E t^3 / (12 (1 - nu^2)).
  static double plate_stiffness(double E, double t, double nu) { return E * t * t * t / (12.0 * (1.0 - nu * nu)); }

  static MaterialParams from_moduli(double E, double t, double nu, double area_density) {
    MaterialParams m;
    m.bending_stiffness = plate_stiffness(E, t, nu);
    m.area_density = area_density;
    m.youngs_modulus = E;
    m.thickness = t;
    m.poisson_ratio = nu;
    return m;
  }

  bool has_moduli() const { return youngs_modulus && thickness && poisson_ratio; }

  void validate() const {
    if (!(bending_stiffness > 0.0)) throw ValidationError("material.bending_stiffness must be > 0");
    if (!(area_density > 0.0)) throw ValidationError("material.area_density must be > 0");
    if (has_moduli()) {
      if (!(*youngs_modulus > 0.0)) throw ValidationError("material.youngs_modulus must be > 0");
      if (!(*thickness > 0.0)) throw ValidationError("material.thickness must be > 0");
      if (!(*poisson_ratio > -1.0 && *poisson_ratio < 0.5))
        throw ValidationError("material.poisson_ratio must be in (-1, 0.5)");
      const double k = plate_stiffness(*youngs_modulus, *thickness, *poisson_ratio);
      if (std::abs(k - bending_stiffness) > 1e-12 * k)
        throw ValidationError("material.bending_stiffness inconsistent with E t^3 / (12 (1 - nu^2))");
    }
  }
};

/// Quadratic bending E = (k/2) sum_c (L Y_c)^T A^-1 (L Y_c) over coordinates c,
/// with A the lumped rest areas. The Hessian K = k L^T A^-1 L is constant, so
/// the implicit system M + h^2 K is factored once.
class BendingSystem {
 public:
  BendingSystem(const LaplacianOperator& lap, const Eigen::VectorXd& areas, const Eigen::VectorXd& masses,
                double k, double dt)
      : L_(lap.L), inv_area_(areas.cwiseInverse()), k_(k), dt_(dt) {
    K_ = SparseMatrix(k * L_.transpose() * inv_area_.asDiagonal() * L_);
    K_.makeCompressed();
    SparseMatrix system = detail::plus_diagonal(SparseMatrix(dt * dt * K_), masses);
    chol_.compute(system);
    if (chol_.info() != Eigen::Success) throw SolveFailure("bending system M + h^2 K is not positive definite");
  }

  double energy(const Positions& Y) const {
    const Eigen::MatrixXd LY = L_ * Y;
    return 0.5 * k_ * (LY.transpose() * inv_area_.asDiagonal() * LY).trace();
  }

  Positions force(const Positions& Y) const { return -(K_ * Y); }

  /// Solves (M + h^2 K) X = rhs column-wise.
  Positions solve(const Positions& rhs) const {
    Eigen::MatrixXd x = chol_.solve(Eigen::MatrixXd(rhs));
    return x;
  }
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const { return chol_.solve(rhs); }

  const SparseMatrix& stiffness() const { return K_; }
  double dt() const { return dt_; }

 private:
  SparseMatrix L_;
  Eigen::VectorXd inv_area_;
  SparseMatrix K_;
  double k_;
  double dt_;
  Eigen::SimplicialLLT<SparseMatrix> chol_;
};

/// Linear equality rows (pins, coupling) imposed on the implicit velocity
/// solve, so the predictor already satisfies them: with A = M + h^2 K and
/// constraint rows C, V+ = V_free - A^-1 C^T mu where C (Y + h V+) = d.
class LinearVelocityConstraint {
 public:
  LinearVelocityConstraint(std::vector<LinearRow> rows, const BendingSystem& bending, Eigen::Index n)
      : rows_(std::move(rows)) {
    const auto r = static_cast<Eigen::Index>(rows_.size());
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(n, r);
    for (Eigen::Index k = 0; k < r; ++k)
      for (const auto& [p, w] : rows_[k].weights) W(p, k) += w;
    Z_ = bending.solve(W);
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(r, r);
    for (Eigen::Index k = 0; k < r; ++k)
      for (Eigen::Index l = 0; l < r; ++l)
        if (rows_[k].axis == rows_[l].axis) S(k, l) = W.col(k).dot(Z_.col(l));
    schur_.compute(S);
    if (schur_.info() != Eigen::Success || schur_.rank() < r)
      throw ValidationError("pins/coupling rows are linearly dependent");
  }

  Positions apply(const Positions& v_free, const Positions& Y, double h) const {
    const auto r = static_cast<Eigen::Index>(rows_.size());
    Eigen::VectorXd res(r);
    for (Eigen::Index k = 0; k < r; ++k) {
      double s = -rows_[k].target;
      for (const auto& [p, w] : rows_[k].weights) s += w * (Y(p, rows_[k].axis) + h * v_free(p, rows_[k].axis));
      res(k) = s / h;
    }
    const Eigen::VectorXd mu = schur_.solve(res);
    Positions v = v_free;
    for (Eigen::Index k = 0; k < r; ++k) v.col(rows_[k].axis) -= mu(k) * Z_.col(k);
    return v;
  }

 private:
  std::vector<LinearRow> rows_;
  Eigen::MatrixXd Z_;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> schur_;
};

struct SimState {
  Positions Y;
  Positions V;
  double time = 0.0;
};

/// Solid half-space {x : (x - point) . normal < 0}.
struct PlaneCollider {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitY();
};

struct SphereCollider {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
};

/// Axis-aligned box.
struct BoxCollider {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Ones();
};

using Collider = std::variant<PlaneCollider, SphereCollider, BoxCollider>;

inline void validate_collider(const Collider& c) {
  std::visit(
      [](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, PlaneCollider>) {
          if (!(p.normal.norm() > 0.0)) throw ValidationError("plane collider normal must be nonzero");
        } else if constexpr (std::is_same_v<T, SphereCollider>) {
          if (!(p.radius > 0.0)) throw ValidationError("sphere collider radius must be > 0");
        } else {
          if (!((p.hi - p.lo).minCoeff() > 0.0)) throw ValidationError("box collider must have hi > lo");
        }
      },
      c);
}

struct CollisionResult {
  Positions Y;
  Positions V;
  int contacts = 0;
};

namespace detail {

// Outward normal and surface point for a point strictly inside `c`; nullopt
// when outside.
inline std::optional<std::pair<Vec3, Vec3>> penetration(const Collider& c, const Vec3& x) {
  return std::visit(
      [&](const auto& p) -> std::optional<std::pair<Vec3, Vec3>> {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, PlaneCollider>) {
          const Vec3 n = p.normal.normalized();
          const double d = (x - p.point).dot(n);
          if (d >= 0.0) return std::nullopt;
          return std::pair{n, Vec3(x - d * n)};
        } else if constexpr (std::is_same_v<T, SphereCollider>) {
          const Vec3 r = x - p.center;
          const double d = r.norm();
          if (d >= p.radius) return std::nullopt;
          const Vec3 n = d > 0.0 ? Vec3(r / d) : Vec3::UnitX();
          return std::pair{n, Vec3(p.center + p.radius * n)};
        } else {
          if (!((x.array() > p.lo.array()).all() && (x.array() < p.hi.array()).all())) return std::nullopt;
          // Exit through the nearest face; ties resolved in -x,+x,-y,+y,-z,+z order.
          double best = std::numeric_limits<double>::infinity();
          Vec3 n = Vec3::Zero(), s = x;
          for (int a = 0; a < 3; ++a) {
            for (int side = 0; side < 2; ++side) {
              const double depth = side == 0 ? x(a) - p.lo(a) : p.hi(a) - x(a);
              if (depth < best) {
                best = depth;
                n = Vec3::Zero();
                n(a) = side == 0 ? -1.0 : 1.0;
                s = x;
                s(a) = side == 0 ? p.lo(a) : p.hi(a);
              }
            }
          }
          return std::pair{n, s};
        }
      },
      c);
}

}  // namespace detail

/// Moves points inside any collider to the closest surface point plus
/// `offset` along the outward normal, clamps the normal velocity to be
/// non-negative and scales the tangential velocity by (1 - friction).
inline CollisionResult apply_collisions(const Positions& Y, const Positions& V, const std::vector<Collider>& colliders,
                                        double friction, double offset = 1e-4) {
  CollisionResult out{Y, V, 0};
  for (Eigen::Index i = 0; i < Y.rows(); ++i) {
    bool hit = false;
    for (const auto& c : colliders) {
      const Vec3 x = out.Y.row(i);
      const auto pen = detail::penetration(c, x);
      if (!pen) continue;
      const auto& [n, surface] = *pen;
      out.Y.row(i) = surface + offset * n;
      Vec3 v = out.V.row(i);
      const double vn = v.dot(n);
      const Vec3 vt = v - vn * n;
      v = std::max(vn, 0.0) * n + (1.0 - friction) * vt;
      out.V.row(i) = v;
      hit = true;
    }
    if (hit) ++out.contacts;
  }
  return out;
}

struct Pin {
  int index = 0;
  Vec3 target = Vec3::Zero();
};

struct Coupling {
  std::vector<std::pair<int, double>> weights;
  Vec3 target = Vec3::Zero();
};

struct PointLoad {
  int index = 0;
  Vec3 force = Vec3::Zero();
};

enum class ConstraintModel { Isometry, EdgeLength };

/// Everything needed to build a Scene; independent of any file format.
struct SceneSpec {
  RestSurface surface;
  NeighborhoodStrategy neighborhoods = NeighborhoodStrategy::graph_distance(1);
  MaterialParams material;
  Vec3 gravity = Vec3(0.0, -9.81, 0.0);
  double dt = 1e-3;
  double duration = 1.0;
  ProjectionConfig projection;
  std::vector<Pin> pins;
  std::vector<Coupling> coupling;
  std::vector<PointLoad> loads;
  std::vector<Collider> colliders;
  double friction = 0.0;
  bool reproject_after_collision = false;
  ConstraintModel model = ConstraintModel::Isometry;
};

struct PrecomputeTimings {
  double neighborhoods_s = 0.0;
  double mls_s = 0.0;
  double laplacian_s = 0.0;
  double factorization_s = 0.0;
};

/// A validated scene with all static operators precomputed.
struct Scene {
  SceneSpec spec;
  std::vector<Neighborhood> neighborhoods;
  LumpedMasses masses;
  std::shared_ptr<const MlsOperator> mls;
  LaplacianOperator laplacian;
  std::vector<Edge> edges;
  std::shared_ptr<const BendingSystem> bending;
  /// Null when the scene has no pins or coupling.
  std::shared_ptr<const LinearVelocityConstraint> linear;
  std::shared_ptr<const ConstraintSystem> constraints;
  PrecomputeTimings timings;

  Eigen::Index size() const { return spec.surface.size(); }
  double dt() const { return spec.dt; }
};

inline Scene build_scene(SceneSpec spec) {
  using clock = std::chrono::steady_clock;
  auto seconds = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double>(b - a).count(); };

  spec.surface.density = spec.material.area_density;
  spec.surface.validate();
  spec.material.validate();
  spec.projection.validate();
  if (!(spec.dt > 0.0)) throw ValidationError("sim.dt must be > 0");
  if (!(spec.duration >= 0.0)) throw ValidationError("sim.duration must be >= 0");
  if (!spec.gravity.allFinite()) throw ValidationError("sim.gravity must be finite");
  if (!(spec.friction >= 0.0 && spec.friction <= 1.0)) throw ValidationError("colliders.friction must be in [0, 1]");
  const auto n = static_cast<int>(spec.surface.size());
  for (const auto& p : spec.pins)
    if (p.index < 0 || p.index >= n) throw ValidationError("pins: index " + std::to_string(p.index) + " out of range");
  for (const auto& l : spec.loads)
    if (l.index < 0 || l.index >= n) throw ValidationError("loads: index " + std::to_string(l.index) + " out of range");
  for (const auto& c : spec.coupling) {
    if (c.weights.empty()) throw ValidationError("coupling: empty weight list");
    for (const auto& [p, w] : c.weights)
      if (p < 0 || p >= n || !std::isfinite(w)) throw ValidationError("coupling: invalid weight entry");
  }
  for (const auto& c : spec.colliders) validate_collider(c);

  Scene s;
  s.spec = std::move(spec);
  const RestSurface& surf = s.spec.surface;

  auto t0 = clock::now();
  s.masses = compute_lumped_masses(surf);
  s.edges = mesh_edges(surf.triangles);
  std::vector<LinearRow> linear;
  for (const auto& p : s.spec.pins)
    for (auto& r : LinearConstraints::pin(p.index, p.target)) linear.push_back(std::move(r));
  for (const auto& c : s.spec.coupling)
    for (auto& r : LinearConstraints::average(c.weights, c.target)) linear.push_back(std::move(r));

  auto system = std::make_shared<ConstraintSystem>(surf.size());
  if (s.spec.model == ConstraintModel::Isometry) {
    s.neighborhoods = build_neighborhoods(surf, s.spec.neighborhoods);
    for (auto& nb : s.neighborhoods) nb = local_parameterization(surf, std::move(nb));
    auto t1 = clock::now();
    s.timings.neighborhoods_s = seconds(t0, t1);
    s.mls = std::make_shared<const MlsOperator>(precompute_mls(s.neighborhoods, s.masses));
    s.timings.mls_s = seconds(t1, clock::now());
    system->add(std::make_shared<IsometryConstraints>(s.mls));
  } else {
    system->add(std::make_shared<EdgeLengthConstraints>(s.edges, surf.positions));
  }
  if (!linear.empty()) system->add(std::make_shared<LinearConstraints>(linear));
  s.constraints = std::move(system);

  auto t2 = clock::now();
  s.laplacian = assemble_laplacian(surf);
  auto t3 = clock::now();
  s.timings.laplacian_s = seconds(t2, t3);
  s.bending = std::make_shared<const BendingSystem>(s.laplacian, s.masses.masses / surf.density, s.masses.masses,
                                                    s.spec.material.bending_stiffness, s.spec.dt);
  if (!linear.empty())
    s.linear = std::make_shared<const LinearVelocityConstraint>(std::move(linear), *s.bending, surf.size());
  s.timings.factorization_s = seconds(t3, clock::now());
  return s;
}

inline SimState rest_state(const Scene& scene) {
  return {scene.spec.surface.positions, Positions::Zero(scene.size(), 3), 0.0};
}

struct StepReport {
  int fp_iterations = 0;
  bool used_fallback = false;
  int contacts = 0;
  /// Strain-row ||g||_inf after projection (before collision correction).
  double projected_residual = 0.0;
  /// ||g||_inf over strain-type rows of the final state of the step.
  double max_abs_g = 0.0;
  /// ||g||_inf over pin/coupling rows of the final state.
  double linear_residual = 0.0;
};

struct StepWorkspace {
  ProjectionWorkspace projection;
  Eigen::VectorXd multipliers;
};

inline double kinetic_energy(const SimState& s, const Eigen::VectorXd& masses) {
  return 0.5 * (s.V.rowwise().squaredNorm().transpose().array() * masses.transpose().array()).sum();
}

inline Vec3 linear_momentum(const SimState& s, const Eigen::VectorXd& masses) {
  return (masses.asDiagonal() * s.V).colwise().sum().transpose();
}

/// Advances `state` by one step of size scene.dt() in place.
inline StepReport step(SimState& state, const Scene& scene, StepWorkspace& ws) {
  const double h = scene.dt();
  const Eigen::VectorXd& m = scene.masses.masses;
  const ProjectionConfig& cfg = scene.spec.projection;
  StepReport rep;

  Positions f_ext = m * scene.spec.gravity.transpose();
  for (const auto& l : scene.spec.loads) f_ext.row(l.index) += l.force.transpose();
  const Positions rhs = m.asDiagonal() * state.V + h * (f_ext - scene.bending->stiffness() * state.Y);
  Positions v_new = scene.bending->solve(rhs);
  if (scene.linear) v_new = scene.linear->apply(v_new, state.Y, h);
  const Positions y_pred = state.Y + h * v_new;

  const Eigen::VectorXd* warm = cfg.warm_start ? &ws.multipliers : nullptr;
  ProjectionResult proj = fast_projection(y_pred, *scene.constraints, m, cfg, &ws.projection, warm);
  rep.fp_iterations = proj.report.iterations_used;
  rep.used_fallback = proj.report.used_fallback;
  rep.projected_residual = proj.report.final_residual;
  if (cfg.warm_start) ws.multipliers = proj.report.multipliers;

  Positions y_final = std::move(proj.Y);
  Positions v_final = (y_final - state.Y) / h;
  if (!scene.spec.colliders.empty()) {
    CollisionResult col = apply_collisions(y_final, v_final, scene.spec.colliders, scene.spec.friction);
    rep.contacts = col.contacts;
    if (col.contacts > 0 && scene.spec.reproject_after_collision) {
      ProjectionResult again = fast_projection(col.Y, *scene.constraints, m, cfg, &ws.projection);
      rep.fp_iterations += again.report.iterations_used;
      rep.used_fallback = rep.used_fallback || again.report.used_fallback;
      col.V += (again.Y - col.Y) / h;
      col.Y = std::move(again.Y);
    }
    y_final = std::move(col.Y);
    v_final = std::move(col.V);
  }

  const auto [strain_res, linear_res] = scene.constraints->residuals(scene.constraints->evaluate(y_final));
  rep.max_abs_g = strain_res;
  rep.linear_residual = linear_res;
  state.Y = std::move(y_final);
  state.V = std::move(v_final);
  state.time += h;
  return rep;
}

/// Single-step convenience form; allocates a fresh workspace.
inline SimState step(const SimState& state, const Scene& scene) {
  StepWorkspace ws;
  SimState next = state;
  step(next, scene, ws);
  return next;
}

/// Owns a scene, its evolving state and the solver workspace.
class Simulator {
 public:
  explicit Simulator(std::shared_ptr<const Scene> scene) : scene_(std::move(scene)), state_(rest_state(*scene_)) {}

  StepReport step() { return isoplate::step(state_, *scene_, ws_); }

  const Scene& scene() const { return *scene_; }
  const SimState& state() const { return state_; }
  SimState& state() { return state_; }

  double bending_energy() const { return scene_->bending->energy(state_.Y); }
  double kinetic_energy() const { return isoplate::kinetic_energy(state_, scene_->masses.masses); }
  Vec3 momentum() const { return linear_momentum(state_, scene_->masses.masses); }

 private:
  std::shared_ptr<const Scene> scene_;
  SimState state_;
  StepWorkspace ws_;
};

}  // namespace isoplate
