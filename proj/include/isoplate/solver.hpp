#pragma once

// Projection of a predicted state onto {g(Y) = 0}.
//
// Fast Projections iterate the mass-weighted Gauss-Newton step
//   (J M~^-1 J^T) dl = g,   Y <- Y - M~^-1 J^T dl
// with M~ = M, or M~ = M + sum_k l_k H_k when geometric-stiffness
// regularization is enabled (position-level multipliers, so the h^2 factor
// of the force-level form is already folded into l). When the residual
// stalls, the predictor is instead projected exactly with an augmented
// Lagrangian method.

#include "isoplate/constraints.hpp"
#include "isoplate/errors.hpp"
#include "isoplate/types.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <optional>
#include <vector>

namespace isoplate {

struct ProjectionConfig {
  /// Bound on ||g||_inf over the dimensionless strain-type rows.
  double tolerance = 0.1;
  /// Bound on ||g||_inf over linear rows (pins, coupling), in meters.
  double linear_tolerance = 1e-8;
  int max_fp_iters = 20;
  int stall_iters = 3;
  /// Initial augmented-Lagrangian penalty (kg); unset means mean point mass.
  std::optional<double> al_penalty;
  double al_penalty_growth = 10.0;
  int al_max_outer = 50;
  int al_max_inner = 200;
  bool use_geometric_stiffness = false;
  bool warm_start = false;

  void validate() const {
    if (!(tolerance > 0.0)) throw ValidationError("sim.tolerance must be > 0");
    if (!(linear_tolerance > 0.0)) throw ValidationError("sim.linear_tolerance must be > 0");
    if (max_fp_iters < 1) throw ValidationError("sim.max_fp_iters must be >= 1");
    if (stall_iters < 1) throw ValidationError("sim.stall_iters must be >= 1");
    if (al_penalty && !(*al_penalty > 0.0)) throw ValidationError("sim.al_penalty must be > 0");
    if (!(al_penalty_growth > 1.0)) throw ValidationError("sim.al_penalty_growth must be > 1");
    if (al_max_outer < 1 || al_max_inner < 1) throw ValidationError("augmented Lagrangian iteration limits must be >= 1");
  }
};

struct ProjectionReport {
  int iterations_used = 0;
  /// ||g||_inf over strain-type rows.
  double final_residual = 0.0;
  /// ||g||_inf over linear rows.
  double linear_residual = 0.0;
  bool used_fallback = false;
  Eigen::VectorXd multipliers;
  /// Normalized residual max(||g_strain||/tolerance, ||g_linear||/linear_tolerance)
  /// before the first and after every Fast Projection iteration.
  std::vector<double> residual_history;
  int al_outer_iterations = 0;
  /// ||M (Y - Y_pred) + J^T l||_inf, filled by the augmented-Lagrangian path.
  double kkt_residual = 0.0;
  /// Iterations where M + K_geo was indefinite and plain M was used instead.
  int geometric_stiffness_rejections = 0;
};

struct ProjectionResult {
  Positions Y;
  ProjectionReport report;
};

namespace detail {

inline SparseMatrix plus_diagonal(const SparseMatrix& A, const Eigen::VectorXd& d) {
  SparseMatrix D(A.rows(), A.cols());
  std::vector<Triplet> trip;
  trip.reserve(static_cast<std::size_t>(d.size()));
  for (Eigen::Index i = 0; i < d.size(); ++i) trip.emplace_back(i, i, d(i));
  D.setFromTriplets(trip.begin(), trip.end());
  SparseMatrix out = A + D;
  out.makeCompressed();
  return out;
}

}  // namespace detail

/// Sparse LDL^T with symbolic-analysis reuse across calls with an identical
/// pattern. Matrices whose factorization exhibits a (numerically) zero or
/// negative pivot are treated as semidefinite and refactored with the
/// diagonal shift 1e-10 * trace(A) / n.
class SpdSolver {
 public:
  /// Returns false on breakdown even after shifting.
  bool factorize(const SparseMatrix& A) {
    analyze_if_needed(A);
    shift_ = 0.0;
    ldlt_.factorize(A);
    if (healthy()) return true;

    const double tr = A.diagonal().sum();
    if (!(tr > 0.0) || !std::isfinite(tr)) return false;
    shift_ = 1e-10 * tr / static_cast<double>(A.rows());
    const SparseMatrix shifted = detail::plus_diagonal(A, Eigen::VectorXd::Constant(A.rows(), shift_));
    analyze_if_needed(shifted);
    ldlt_.factorize(shifted);
    return healthy();
  }

  /// Symmetric quasi-definite systems (regularized KKT matrices): only
  /// requires a breakdown-free factorization with nonzero pivots.
  bool factorize_quasi_definite(const SparseMatrix& A) {
    analyze_if_needed(A);
    shift_ = 0.0;
    ldlt_.factorize(A);
    return ldlt_.info() == Eigen::Success && ldlt_.vectorD().allFinite() &&
           ldlt_.vectorD().cwiseAbs().minCoeff() > 0.0;
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return ldlt_.solve(b); }

  double shift() const { return shift_; }

 private:
  bool healthy() const {
    if (ldlt_.info() != Eigen::Success) return false;
    const auto& d = ldlt_.vectorD();
    if (d.size() == 0) return true;
    const double hi = d.cwiseAbs().maxCoeff();
    return d.allFinite() && d.minCoeff() > 1e-13 * hi;
  }

  void analyze_if_needed(const SparseMatrix& A) {
    const bool same = A.rows() == rows_ && A.nonZeros() == static_cast<Eigen::Index>(inner_.size()) &&
                      std::equal(outer_.begin(), outer_.end(), A.outerIndexPtr()) &&
                      std::equal(inner_.begin(), inner_.end(), A.innerIndexPtr());
    if (same) return;
    ldlt_.analyzePattern(A);
    rows_ = A.rows();
    outer_.assign(A.outerIndexPtr(), A.outerIndexPtr() + A.outerSize() + 1);
    inner_.assign(A.innerIndexPtr(), A.innerIndexPtr() + A.nonZeros());
  }

  Eigen::SimplicialLDLT<SparseMatrix> ldlt_;
  Eigen::Index rows_ = -1;
  std::vector<SparseMatrix::StorageIndex> outer_, inner_;
  double shift_ = 0.0;
};

struct SpdSolution {
  Eigen::VectorXd x;
  double residual = 0.0;
  bool shifted = false;
};

/// Solves A x = b for symmetric positive (semi)definite A. Throws SolveFailure
/// on breakdown or when ||A x - b||_inf > 1e-10 ||b||_inf.
inline SpdSolution solve_spd(const SparseMatrix& A, const Eigen::VectorXd& b) {
  if (A.rows() != A.cols() || A.rows() != b.size()) throw SolveFailure("dimension mismatch");
  SpdSolver solver;
  if (!solver.factorize(A)) throw SolveFailure("factorization breakdown");
  SpdSolution out{solver.solve(b), 0.0, solver.shift() > 0.0};
  out.residual = (A * out.x - b).lpNorm<Eigen::Infinity>();
  if (!out.x.allFinite() || out.residual > 1e-10 * b.lpNorm<Eigen::Infinity>())
    throw SolveFailure("residual bound violated", out.residual);
  return out;
}

/// Reusable factorization state for repeated projections with a fixed
/// constraint structure.
struct ProjectionWorkspace {
  SpdSolver schur;
  SpdSolver mass_check;
  SpdSolver kkt;
  SpdSolver newton;
};

namespace detail {

inline double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

struct Residual {
  double strain = 0.0;
  double linear = 0.0;
  double normalized = 0.0;
};

inline Residual measure(const ConstraintSystem& system, const Eigen::VectorXd& g, const ProjectionConfig& cfg) {
  const auto [strain, linear] = system.residuals(g);
  return {strain, linear, std::max(strain / cfg.tolerance, linear / cfg.linear_tolerance)};
}

inline Eigen::VectorXd stacked_masses(const Eigen::VectorXd& masses) {
  Eigen::VectorXd m(3 * masses.size());
  for (Eigen::Index i = 0; i < masses.size(); ++i) m.segment<3>(3 * i).setConstant(masses(i));
  return m;
}

// Solves [[Mt, J^T], [J, -eps I]] [dy; dl] = [0; -g] for the regularized step.
inline bool regularized_step(const SparseMatrix& Mt, const SparseMatrix& J, const Eigen::VectorXd& g,
                             double eps, SpdSolver& kkt, Eigen::VectorXd& dy, Eigen::VectorXd& dl) {
  const Eigen::Index n = Mt.rows();
  const Eigen::Index m = J.rows();
  std::vector<Triplet> trip;
  trip.reserve(static_cast<std::size_t>(Mt.nonZeros() + 2 * J.nonZeros() + m));
  for (Eigen::Index k = 0; k < Mt.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(Mt, k); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
  for (Eigen::Index k = 0; k < J.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(J, k); it; ++it) {
      trip.emplace_back(n + it.row(), it.col(), it.value());
      trip.emplace_back(it.col(), n + it.row(), it.value());
    }
  for (Eigen::Index r = 0; r < m; ++r) trip.emplace_back(n + r, n + r, -eps);
  SparseMatrix K(n + m, n + m);
  K.setFromTriplets(trip.begin(), trip.end());
  K.makeCompressed();

  // Quasi-definite: LDL^T exists for any ordering, with n positive and m
  // negative pivots.
  if (!kkt.factorize_quasi_definite(K)) return false;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + m);
  rhs.tail(m) = -g;
  const Eigen::VectorXd sol = kkt.solve(rhs);
  if (!sol.allFinite()) return false;
  dy = sol.head(n);
  dl = sol.tail(m);
  return true;
}

}  // namespace detail

/// Exact mass-weighted projection: minimizes 1/2 |Y - Y_pred|_M^2 subject to
/// g(Y) = 0. Nonlinear rows get multiplier updates l <- l + rho g around a
/// Newton minimization of the augmented objective; linear rows (pins,
/// coupling) are imposed exactly inside every Newton step.
inline ProjectionResult augmented_lagrangian_projection(const Positions& Y_pred, const ConstraintSystem& system,
                                                        const Eigen::VectorXd& masses, const ProjectionConfig& cfg,
                                                        ProjectionWorkspace* workspace = nullptr) {
  ProjectionWorkspace local;
  ProjectionWorkspace& ws = workspace ? *workspace : local;

  ProjectionResult out{Y_pred, {}};
  ProjectionReport& rep = out.report;
  const Eigen::VectorXd m3 = detail::stacked_masses(masses);
  const Eigen::VectorXd minv3 = m3.cwiseInverse();
  const auto y_pred = stacked(Y_pred);

  Eigen::VectorXd g = system.evaluate(out.Y);
  rep.multipliers = Eigen::VectorXd::Zero(system.rows());
  detail::Residual res = detail::measure(system, g, cfg);
  rep.final_residual = res.strain;
  rep.linear_residual = res.linear;
  if (res.normalized <= 1.0) return out;

  // Row selections: nonlinear mask and the linear rows as their own matrix.
  Eigen::VectorXd nonlinear = Eigen::VectorXd::Ones(system.rows());
  std::vector<Eigen::Index> linear_rows;
  for (std::size_t k = 0; k < system.sets().size(); ++k)
    if (system.sets()[k]->is_linear())
      for (Eigen::Index r = 0; r < system.sets()[k]->rows(); ++r) {
        nonlinear(system.offset(k) + r) = 0.0;
        linear_rows.push_back(system.offset(k) + r);
      }
  const auto ml = static_cast<Eigen::Index>(linear_rows.size());
  SparseMatrix select(ml, system.rows());
  {
    std::vector<Triplet> trip;
    for (Eigen::Index r = 0; r < ml; ++r) trip.emplace_back(r, linear_rows[r], 1.0);
    select.setFromTriplets(trip.begin(), trip.end());
  }
  const SparseMatrix Jl = select * system.jacobian(out.Y);
  auto linear_g = [&](const Eigen::VectorXd& gv) { return Eigen::VectorXd(select * gv); };

  // Start on the linear rows (mass-weighted projection); they stay satisfied
  // because every step below lies in their null space.
  if (ml > 0 && detail::inf_norm(linear_g(g)) > 0.0) {
    const SparseMatrix JMinv = Jl * minv3.asDiagonal();
    if (!ws.schur.factorize(SparseMatrix(JMinv * Jl.transpose())))
      throw SolveFailure("linear constraint rows are degenerate");
    stacked(out.Y) -= JMinv.transpose() * ws.schur.solve(linear_g(g));
    g = system.evaluate(out.Y);
  }

  const double mean_mass = masses.mean();
  double rho = cfg.al_penalty.value_or(mean_mass);
  const double rho_cap = 1e14 * mean_mass;
  const double scale = std::max(m3.cwiseProduct(y_pred).lpNorm<Eigen::Infinity>(), mean_mass * 1e-3);
  const double grad_tol = 1e-14 * scale;
  const double kkt_eps = 1e-12 / mean_mass;
  Eigen::VectorXd& lambda = rep.multipliers;
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(ml);

  auto objective = [&](const Positions& Y, const Eigen::VectorXd& gv) {
    const Eigen::VectorXd d = stacked(Y) - y_pred;
    const Eigen::VectorXd gn = nonlinear.cwiseProduct(gv);
    return 0.5 * d.dot(m3.cwiseProduct(d)) + lambda.dot(gn) + 0.5 * rho * gn.squaredNorm();
  };

  double prev = res.normalized;
  double tau = 0.0;
  for (int outer = 1; outer <= cfg.al_max_outer; ++outer) {
    rep.al_outer_iterations = outer;
    for (int inner = 0; inner < cfg.al_max_inner; ++inner) {
      const SparseMatrix J = system.jacobian(out.Y);
      const SparseMatrix Jn = nonlinear.asDiagonal() * J;
      const Eigen::VectorXd mult = nonlinear.cwiseProduct(lambda + rho * g);
      const Eigen::VectorXd md = m3.cwiseProduct(stacked(out.Y) - y_pred);
      const Eigen::VectorXd grad = md + J.transpose() * mult;
      // Stationarity relative to the mass-weighted displacement, which is
      // what the multipliers have to balance.
      const double gtol = std::max(grad_tol, 1e-9 * detail::inf_norm(md));

      const SparseMatrix JtJ = rho * SparseMatrix(Jn.transpose() * Jn);
      // Newton on the augmented objective; while its Hessian is indefinite,
      // add growing multiples of M, and drop to Gauss-Newton
      // (M + rho J^T J) as a last resort.
      const SparseMatrix full = system.hessian(out.Y, mult) + JtJ;
      SparseMatrix H;
      bool pd = false;
      for (tau = tau >= 1e-3 ? tau / 10.0 : 0.0; tau <= 1e6; tau = std::max(10.0 * tau, 1e-4)) {
        H = detail::plus_diagonal(full, (1.0 + tau) * m3);
        pd = ws.newton.factorize(H) && ws.newton.shift() == 0.0;
        if (pd) break;
      }
      if (!pd) H = detail::plus_diagonal(JtJ, m3);
      Eigen::VectorXd dir;
      if (ml == 0) {
        if (!ws.newton.factorize(H)) break;
        if (detail::inf_norm(grad) <= gtol) break;
        dir = -ws.newton.solve(grad);
      } else {
        Eigen::VectorXd dl;
        const Eigen::Index n = H.rows();
        std::vector<Triplet> trip;
        for (Eigen::Index k = 0; k < H.outerSize(); ++k)
          for (SparseMatrix::InnerIterator it(H, k); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
        for (Eigen::Index k = 0; k < Jl.outerSize(); ++k)
          for (SparseMatrix::InnerIterator it(Jl, k); it; ++it) {
            trip.emplace_back(n + it.row(), it.col(), it.value());
            trip.emplace_back(it.col(), n + it.row(), it.value());
          }
        for (Eigen::Index r = 0; r < ml; ++r) trip.emplace_back(n + r, n + r, -kkt_eps);
        SparseMatrix K(n + ml, n + ml);
        K.setFromTriplets(trip.begin(), trip.end());
        if (!ws.kkt.factorize_quasi_definite(K)) break;
        Eigen::VectorXd rhs(n + ml);
        rhs << -grad, -linear_g(g);
        const Eigen::VectorXd sol = ws.kkt.solve(rhs);
        if (!sol.allFinite()) break;
        dir = sol.head(n);
        mu = sol.tail(ml);
        if (detail::inf_norm(Eigen::VectorXd(grad + Jl.transpose() * mu)) <= gtol) break;
      }
      if (!dir.allFinite()) break;

      const double f0 = objective(out.Y, g);
      const double slope = grad.dot(dir);
      double t = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
        Positions trial = out.Y;
        stacked(trial) += t * dir;
        const Eigen::VectorXd gt = system.evaluate(trial);
        const double ft = objective(trial, gt);
        if (std::isfinite(ft) && ft <= f0 + 1e-4 * t * std::min(slope, 0.0)) {
          accepted = ft < f0 || (stacked(trial) - stacked(out.Y)).lpNorm<Eigen::Infinity>() > 0.0;
          out.Y = std::move(trial);
          g = gt;
          break;
        }
      }
      // No representable decrease left: the subproblem is solved to roundoff.
      if (!accepted) break;
    }

    res = detail::measure(system, g, cfg);
    rep.final_residual = res.strain;
    rep.linear_residual = res.linear;
    lambda += rho * nonlinear.cwiseProduct(g);
    if (res.normalized <= 1.0) {
      for (Eigen::Index r = 0; r < ml; ++r) lambda(linear_rows[r]) = mu(r);
      const SparseMatrix J = system.jacobian(out.Y);
      rep.kkt_residual =
          detail::inf_norm(Eigen::VectorXd(m3.cwiseProduct(stacked(out.Y) - y_pred) + J.transpose() * lambda));
      return out;
    }
    if (res.normalized > 0.25 * prev) rho = std::min(rho * cfg.al_penalty_growth, rho_cap);
    prev = res.normalized;
  }
  throw MaxIterations(rep.al_outer_iterations, std::max(res.strain, res.linear));
}

/// Fast Projections with optional geometric-stiffness regularization; falls
/// back to augmented_lagrangian_projection from Y_pred when the residual
/// fails to decrease for stall_iters consecutive iterations or max_fp_iters
/// is exhausted. `warm` seeds the multipliers used by the regularizer.
inline ProjectionResult fast_projection(const Positions& Y_pred, const ConstraintSystem& system,
                                        const Eigen::VectorXd& masses, const ProjectionConfig& cfg,
                                        ProjectionWorkspace* workspace = nullptr,
                                        const Eigen::VectorXd* warm = nullptr) {
  ProjectionWorkspace local;
  ProjectionWorkspace& ws = workspace ? *workspace : local;

  ProjectionResult out{Y_pred, {}};
  ProjectionReport& rep = out.report;
  const Eigen::VectorXd m3 = detail::stacked_masses(masses);
  const Eigen::VectorXd minv3 = m3.cwiseInverse();

  Eigen::VectorXd g = system.evaluate(out.Y);
  detail::Residual current = detail::measure(system, g, cfg);
  double res = current.normalized;
  rep.residual_history.push_back(res);
  rep.multipliers = (warm && warm->size() == system.rows()) ? *warm : Eigen::VectorXd::Zero(system.rows());
  rep.final_residual = current.strain;
  rep.linear_residual = current.linear;
  if (res <= 1.0) return out;

  Eigen::VectorXd& lambda = rep.multipliers;
  int non_decrease = 0;
  bool converged = false;
  for (int it = 1; it <= cfg.max_fp_iters; ++it) {
    rep.iterations_used = it;
    const SparseMatrix J = system.jacobian(out.Y);
    Eigen::VectorXd dy, dl;
    bool stepped = false;

    if (cfg.use_geometric_stiffness && lambda.cwiseAbs().maxCoeff() > 0.0) {
      const SparseMatrix Mt = detail::plus_diagonal(system.hessian(out.Y, lambda), m3);
      if (ws.mass_check.factorize(Mt) && ws.mass_check.shift() == 0.0) {
        double trace = 0.0;
        for (Eigen::Index k = 0; k < J.outerSize(); ++k)
          for (SparseMatrix::InnerIterator c(J, k); c; ++c) trace += c.value() * c.value() * minv3(c.col());
        const double eps = 1e-10 * trace / static_cast<double>(std::max<Eigen::Index>(J.rows(), 1));
        stepped = detail::regularized_step(Mt, J, g, eps, ws.kkt, dy, dl);
      }
      if (!stepped) ++rep.geometric_stiffness_rejections;
    }

    if (!stepped) {
      const SparseMatrix JMinv = J * minv3.asDiagonal();
      const SparseMatrix S = JMinv * J.transpose();
      if (!ws.schur.factorize(S)) throw SolveFailure("Fast Projection Schur complement");
      dl = ws.schur.solve(g);
      dy = -(JMinv.transpose() * dl);
    }

    stacked(out.Y) += dy;
    lambda += dl;
    g = system.evaluate(out.Y);
    current = detail::measure(system, g, cfg);
    const double next = current.normalized;
    rep.residual_history.push_back(next);
    if (!std::isfinite(next)) {
      res = next;
      break;
    }
    non_decrease = next >= res ? non_decrease + 1 : 0;
    res = next;
    if (res <= 1.0) {
      converged = true;
      break;
    }
    if (non_decrease >= cfg.stall_iters) break;
  }
  rep.final_residual = current.strain;
  rep.linear_residual = current.linear;
  if (converged) return out;

  ProjectionResult exact = augmented_lagrangian_projection(Y_pred, system, masses, cfg, &ws);
  exact.report.iterations_used = rep.iterations_used;
  exact.report.residual_history = std::move(rep.residual_history);
  exact.report.geometric_stiffness_rejections = rep.geometric_stiffness_rejections;
  exact.report.used_fallback = true;
  return exact;
}

}  // namespace isoplate
