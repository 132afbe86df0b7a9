#pragma once

// Benchmark scenes shared by the `bench` CLI verb and the acceptance test:
// the two-corner pinned cloth, the shear flag and the projection stress case.

#include "isoplate/diagnostics.hpp"
#include "isoplate/dynamics.hpp"
#include "isoplate/meshgen.hpp"
#include "isoplate/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <tuple>
#include <vector>

namespace isoplate::bench {

/// Square cloth of side 1 m lying in the plane y = 0, pinned at the two
/// corners of its z = 0 edge, released under gravity (-y).
struct PinnedClothConfig {
  int points = 662;
  double tolerance = 0.01;
  double dt = 1e-3;
  double duration = 5.0;
  ConstraintModel model = ConstraintModel::Isometry;
  double bending_stiffness = 1e-4;
  double area_density = 0.1;
  unsigned seed = 7;

  auto key() const { return std::tuple(points, tolerance, dt, duration, static_cast<int>(model), bending_stiffness); }
};

struct PinnedClothScene {
  SceneSpec spec;
  int pin_a = 0;
  int pin_b = 0;
};

inline PinnedClothScene pinned_cloth(const PinnedClothConfig& c) {
  PinnedClothScene out;
  SceneSpec& s = out.spec;
  s.surface = embed(irregular_square(c.points, 1.0, c.seed), Vec3(0.0, 0.0, -1.0), Vec3::UnitX(), Vec3::UnitZ(),
                    c.area_density);
  s.material.bending_stiffness = c.bending_stiffness;
  s.material.area_density = c.area_density;
  s.dt = c.dt;
  s.duration = c.duration;
  s.projection.tolerance = c.tolerance;
  s.model = c.model;
  const auto& P = s.surface.positions;
  out.pin_a = closest_vertex(P, Vec3(0.0, 0.0, 0.0));
  out.pin_b = closest_vertex(P, Vec3(1.0, 0.0, 0.0));
  s.pins = {{out.pin_a, P.row(out.pin_a)}, {out.pin_b, P.row(out.pin_b)}};
  return out;
}

struct PinnedClothResult {
  double sag = 0.0;
  double pin_separation = 0.0;
  /// Largest post-step strain residual over the run.
  double max_abs_g = 0.0;
  std::vector<int> fp_iterations;
  int fallbacks = 0;
  int steps = 0;
  double seconds = 0.0;

  double relative_sag() const { return sag / pin_separation; }
  int median_iterations() const {
    if (fp_iterations.empty()) return 0;
    std::vector<int> v = fp_iterations;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
    return v[v.size() / 2];
  }
};

inline PinnedClothResult run_pinned_cloth(const PinnedClothConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const PinnedClothScene pc = pinned_cloth(c);
  auto scene = std::make_shared<const Scene>(build_scene(pc.spec));
  Simulator sim(scene);
  PinnedClothResult r;
  r.steps = static_cast<int>(std::llround(c.duration / c.dt));
  r.fp_iterations.reserve(static_cast<std::size_t>(r.steps));
  for (int s = 0; s < r.steps; ++s) {
    const StepReport rep = sim.step();
    r.fp_iterations.push_back(rep.fp_iterations);
    r.fallbacks += rep.used_fallback;
    r.max_abs_g = std::max(r.max_abs_g, rep.max_abs_g);
  }
  const auto& rest = pc.spec.surface.positions;
  r.sag = sag_metric(sim.state().Y, rest, pc.pin_a, pc.pin_b);
  r.pin_separation = (rest.row(pc.pin_a) - rest.row(pc.pin_b)).norm();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Vertical square flag of side 1 m in the plane z = 0, pinned along its
/// x = 0 edge, with a point load on the free bottom corner.
struct ShearFlagConfig {
  int points = 662;
  double tolerance = 1e-3;
  double dt = 1e-3;
  double duration = 2.0;
  double load = 2.0;
  double bending_stiffness = 1e-4;
  double area_density = 0.1;
  unsigned seed = 11;
};

struct ShearFlagResult {
  double max_distance_change = 0.0;
  double max_abs_g = 0.0;
  double kinetic_energy = 0.0;
  int fallbacks = 0;
  double seconds = 0.0;
};

inline SceneSpec shear_flag(const ShearFlagConfig& c, int* anchor = nullptr) {
  SceneSpec s;
  s.surface = embed(irregular_square(c.points, 1.0, c.seed), Vec3(0.0, -1.0, 0.0), Vec3::UnitX(), Vec3::UnitY(),
                    c.area_density);
  s.material.bending_stiffness = c.bending_stiffness;
  s.material.area_density = c.area_density;
  s.dt = c.dt;
  s.duration = c.duration;
  s.projection.tolerance = c.tolerance;
  const auto& P = s.surface.positions;
  for (Eigen::Index i = 0; i < P.rows(); ++i)
    if (P(i, 0) <= 1e-12) s.pins.push_back({static_cast<int>(i), P.row(i)});
  s.loads.push_back({closest_vertex(P, Vec3(1.0, -1.0, 0.0)), Vec3(0.0, -c.load, 0.0)});
  if (anchor) *anchor = closest_vertex(P, Vec3(0.0, 0.0, 0.0));
  return s;
}

inline ShearFlagResult run_shear_flag(const ShearFlagConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  int anchor = 0;
  auto scene = std::make_shared<const Scene>(build_scene(shear_flag(c, &anchor)));
  Simulator sim(scene);
  ShearFlagResult r;
  const int steps = static_cast<int>(std::llround(c.duration / c.dt));
  for (int s = 0; s < steps; ++s) {
    const StepReport rep = sim.step();
    r.fallbacks += rep.used_fallback;
    r.max_abs_g = std::max(r.max_abs_g, rep.max_abs_g);
  }
  r.max_distance_change = distance_change_field(sim.state().Y, scene->spec.surface.positions, anchor).max;
  r.kinetic_energy = sim.kinetic_energy();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Flat free sheet whose predictor is the rest state uniformly stretched by
/// `stretch` in-plane, plus a small seeded out-of-plane perturbation.
struct StretchConfig {
  int points = 200;
  double stretch = 1.5;
  double perturbation = 1e-3;
  double tolerance = 0.01;
  unsigned seed = 3;
};

struct StretchResult {
  ProjectionReport report;
  /// KKT residual relative to |M (Y - Y_pred)|_inf.
  double relative_kkt = 0.0;
  bool stalled = false;
};

inline StretchResult run_stretch(const StretchConfig& c) {
  SceneSpec s;
  s.surface = embed(irregular_square(c.points, 1.0, c.seed), Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), 0.1);
  s.material.area_density = 0.1;
  s.projection.tolerance = c.tolerance;
  const Scene scene = build_scene(s);
  Positions Y = c.stretch * scene.spec.surface.positions;
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Eigen::Index i = 0; i < Y.rows(); ++i) Y(i, 2) += c.perturbation * u(rng);

  const auto& m = scene.masses.masses;
  StretchResult out;
  ProjectionResult pr = fast_projection(Y, *scene.constraints, m, s.projection);
  out.report = pr.report;
  const auto& h = pr.report.residual_history;
  out.stalled = pr.report.used_fallback && !h.empty() && h.back() > 1.0;
  Eigen::VectorXd d = stacked(pr.Y) - stacked(Y);
  for (Eigen::Index i = 0; i < d.size(); ++i) d(i) *= m(i / 3);
  const double scale = std::max(d.lpNorm<Eigen::Infinity>(), 1e-300);
  out.relative_kkt = pr.report.kkt_residual / scale;
  return out;
}

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
};

inline std::string line(const CriterionResult& c) {
  return std::string(c.pass ? "PASS" : "FAIL") + " criterion " + std::to_string(c.id) + " (" + c.name + "): " +
         c.detail;
}

/// Memoizes pinned-cloth runs, which several criteria share.
class Runner {
 public:
  const PinnedClothResult& pinned(const PinnedClothConfig& c) {
    auto it = cache_.find(c.key());
    if (it == cache_.end()) it = cache_.emplace(c.key(), run_pinned_cloth(c)).first;
    return it->second;
  }

 private:
  std::map<decltype(PinnedClothConfig{}.key()), PinnedClothResult> cache_;
};

namespace detail {

inline std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

}  // namespace detail

// Pinned cloth: sag above 5% of the pin separation at tolerance 0.01 with the
// post-step residual held, and the edge-length baseline below 0.2x that sag.
inline CriterionResult no_locking_sag(Runner& r, const PinnedClothConfig& base = {}) {
  PinnedClothConfig edge = base;
  edge.model = ConstraintModel::EdgeLength;
  const auto& mls = r.pinned(base);
  const auto& e = r.pinned(edge);
  CriterionResult c{1, "no-locking sag", false, ""};
  const bool sag_ok = mls.sag > 0.05 * mls.pin_separation;
  const bool g_ok = mls.max_abs_g <= base.tolerance;
  const bool locked = e.sag < 0.2 * mls.sag;
  c.pass = sag_ok && g_ok && locked;
  c.detail = detail::fmt("sag/L = %.4f (need > 0.05), max post-step |g| = %.3g (need <= tol), edge baseline "
                         "sag/mls sag = %.3f (need < 0.2), ",
                         mls.relative_sag(), mls.max_abs_g, mls.sag > 0 ? e.sag / mls.sag : INFINITY) +
             detail::fmt("runtime %.0f s", mls.seconds);
  return c;
}

inline CriterionResult tolerance_monotonicity(Runner& r, const PinnedClothConfig& base = {}) {
  std::vector<double> sags;
  for (double tol : {0.1, 0.01, 0.001}) {
    PinnedClothConfig c = base;
    c.tolerance = tol;
    sags.push_back(r.pinned(c).sag);
  }
  CriterionResult c{2, "tolerance monotonicity", sags[0] > sags[1] && sags[1] > sags[2], ""};
  c.detail = detail::fmt("sag at tol 0.1, 0.01, 0.001 = %.4f, %.4f, %.4f m (need strictly decreasing)", sags[0],
                         sags[1], sags[2]);
  return c;
}

inline CriterionResult resolution_consistency(Runner& r, const PinnedClothConfig& base = {}) {
  PinnedClothConfig fine = base;
  fine.points = 1656;
  const double a = r.pinned(base).sag, b = r.pinned(fine).sag;
  const double rel = std::abs(a - b) / std::max(a, b);
  CriterionResult c{3, "resolution consistency", rel <= 0.10, ""};
  c.detail = detail::fmt("sag 662 = %.4f m, sag 1656 = %.4f m, relative difference %.3f (need <= 0.10)", a, b, rel);
  return c;
}

inline CriterionResult shear_test(const ShearFlagConfig& cfg = {}) {
  const ShearFlagResult s = run_shear_flag(cfg);
  CriterionResult c{4, "shear flag", s.max_distance_change < 0.01, ""};
  c.detail = detail::fmt("max distance change = %.5f (need < 0.01), max |g| = %.3g, final KE = %.3g J",
                         s.max_distance_change, s.max_abs_g, s.kinetic_energy);
  return c;
}

inline CriterionResult fast_projection_efficiency(Runner& r, const PinnedClothConfig& base = {}) {
  PinnedClothConfig c01 = base;
  c01.tolerance = 0.1;
  const auto& res = r.pinned(c01);
  CriterionResult c{5, "fast projection efficiency", res.median_iterations() <= 3, ""};
  c.detail = detail::fmt("median fp_iterations = %.0f (need <= 3), fallbacks = %.0f", res.median_iterations(),
                         res.fallbacks);
  return c;
}

inline CriterionResult fallback_correctness(const StretchConfig& cfg = {}) {
  CriterionResult c{9, "fallback correctness", false, ""};
  try {
    const StretchResult s = run_stretch(cfg);
    const auto& rep = s.report;
    c.pass = rep.used_fallback && rep.final_residual <= cfg.tolerance && s.relative_kkt < 1e-6;
    c.detail = detail::fmt("fallback = %.0f after %.0f FP iterations, |g| = %.3g (need <= tol), relative KKT = %.3g "
                           "(need < 1e-6)",
                           rep.used_fallback, rep.iterations_used, rep.final_residual, s.relative_kkt);
  } catch (const Error& e) {
    c.detail = std::string("projection failed: ") + e.what();
  }
  return c;
}

/// Suites: "pinned" (criteria 1, 2, 3, 5), "shear" (4), "fallback" (9),
/// "all". Each result is passed to `report` as soon as it is known.
inline std::vector<CriterionResult> run_suite(const std::string& suite,
                                              const std::function<void(const CriterionResult&)>& report = {}) {
  static const std::vector<std::string> known = {"all", "pinned", "shear", "fallback"};
  if (std::find(known.begin(), known.end(), suite) == known.end())
    throw ValidationError("unknown bench suite '" + suite + "' (expected all, pinned, shear or fallback)");
  Runner runner;
  std::vector<CriterionResult> out;
  auto add = [&](CriterionResult c) {
    if (report) report(c);
    out.push_back(std::move(c));
  };
  const bool all = suite == "all";
  if (all || suite == "pinned") {
    add(no_locking_sag(runner));
    add(tolerance_monotonicity(runner));
    add(resolution_consistency(runner));
  }
  if (all || suite == "shear") add(shear_test());
  if (all || suite == "pinned") add(fast_projection_efficiency(runner));
  if (all || suite == "fallback") add(fallback_correctness());
  return out;
}

}  // namespace isoplate::bench
