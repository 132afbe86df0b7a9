#include "isoplate/diagnostics.hpp"
#include "isoplate/dynamics.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace isoplate;

namespace {

SceneSpec sheet_spec(int points, unsigned seed = 5) {
  SceneSpec s;
  s.surface = embed(irregular_square(points, 1.0, seed), Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), 0.1);
  s.material.area_density = 0.1;
  s.material.bending_stiffness = 1e-4;
  return s;
}

double total_energy(const Simulator& sim) { return sim.kinetic_energy() + sim.bending_energy(); }

}  // namespace

TEST(Material, PlateStiffnessFromModuli) {
  const auto m = MaterialParams::from_moduli(1e6, 1e-3, 0.3, 0.2);
  EXPECT_NEAR(m.bending_stiffness, 1e6 * 1e-9 / (12.0 * 0.91), 1e-18);
  EXPECT_NO_THROW(m.validate());
}

TEST(Material, InconsistentModuliRejected) {
  auto m = MaterialParams::from_moduli(1e6, 1e-3, 0.3, 0.2);
  m.bending_stiffness *= 2.0;
  EXPECT_THROW(m.validate(), ValidationError);
  MaterialParams bad;
  bad.bending_stiffness = -1.0;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Bending, FlatAndRigidStatesHaveZeroEnergy) {
  const Scene sc = build_scene(sheet_spec(120));
  EXPECT_NEAR(sc.bending->energy(sc.spec.surface.positions), 0.0, 1e-20);
  std::mt19937_64 rng(1);
  const Mat3 R = oracle::random_rotation(rng);
  const Positions Z = (sc.spec.surface.positions * R.transpose()).rowwise() + Eigen::RowVector3d(1, 2, 3);
  EXPECT_NEAR(sc.bending->energy(Z), 0.0, 1e-20);
}

TEST(Bending, ForceIsNegativeEnergyGradient) {
  const Scene sc = build_scene(sheet_spec(80));
  const Positions Y = oracle::roll(sc.spec.surface.positions, 0.7, Vec2(1.0, 0.3));
  const auto fd = oracle::fd_gradient([&](const Positions& P) { return sc.bending->energy(P); }, Y);
  const Positions f = sc.bending->force(Y);
  EXPECT_LT(oracle::rel_error(-Eigen::VectorXd(stacked(f)), fd), 1e-6);
}

TEST(Bending, CylinderEnergyApproachesContinuum) {
  // Interior-only Laplacian, so compare against k/2 * (1/r)^2 * interior area.
  SceneSpec s = sheet_spec(1656);
  const Scene sc = build_scene(s);
  const double r = 1.0;
  const Positions Y = oracle::roll(sc.spec.surface.positions, r, Vec2(1.0, 0.0));
  double interior_area = 0.0;
  const Eigen::VectorXd area = sc.masses.masses / sc.spec.surface.density;
  for (Eigen::Index i = 0; i < area.size(); ++i)
    if (sc.laplacian.interior_mask[i]) interior_area += area(i);
  const double expect = 0.5 * 1e-4 * interior_area / (r * r);
  EXPECT_NEAR(sc.bending->energy(Y) / expect, 1.0, 0.05);
}

TEST(Dynamics, RestStateIsFixedPointWithoutGravity) {
  SceneSpec s = sheet_spec(100);
  s.gravity = Vec3::Zero();
  auto sc = std::make_shared<const Scene>(build_scene(s));
  Simulator sim(sc);
  for (int i = 0; i < 5; ++i) sim.step();
  EXPECT_LE((sim.state().Y - sc->spec.surface.positions).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(sim.state().V.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Dynamics, FreeFallFollowsBallisticTrajectory) {
  SceneSpec s = sheet_spec(100);
  auto sc = std::make_shared<const Scene>(build_scene(s));
  Simulator sim(sc);
  const double h = s.dt;
  const auto& m = sc->masses.masses;
  const double M = m.sum();
  const Vec3 c0 = (m.asDiagonal() * sc->spec.surface.positions).colwise().sum().transpose() / M;
  const int n = 50;
  for (int i = 1; i <= n; ++i) {
    const Vec3 p_before = sim.momentum();
    const StepReport r = sim.step();
    EXPECT_LE(r.max_abs_g, s.projection.tolerance);
    const Vec3 expect = p_before + h * M * s.gravity;
    EXPECT_LE((sim.momentum() - expect).norm(), 1e-9 * std::max(expect.norm(), 1e-12));
  }
  const Vec3 v_expect = n * h * s.gravity;
  const Vec3 c = (m.asDiagonal() * sim.state().Y).colwise().sum().transpose() / M;
  // Implicit Euler: x_n = x_0 + h^2 g n (n + 1) / 2.
  EXPECT_LE((c - c0 - h * h * s.gravity * n * (n + 1) / 2.0).norm(), 1e-12);
  EXPECT_LE((sim.momentum() / M - v_expect).norm(), 1e-12);
}

TEST(Dynamics, MomentumConservedWithoutExternalForces) {
  SceneSpec s = sheet_spec(100);
  s.gravity = Vec3::Zero();
  auto sc = std::make_shared<const Scene>(build_scene(s));
  Simulator sim(sc);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (Eigen::Index i = 0; i < sim.state().V.size(); ++i) sim.state().V(i) = u(rng);
  for (int i = 0; i < 20; ++i) {
    const Vec3 p0 = sim.momentum();
    sim.step();
    EXPECT_LE((sim.momentum() - p0).norm(), 1e-9 * p0.norm());
  }
}

TEST(Dynamics, EnergyNonIncreasingWithPinsAndNoGravity) {
  SceneSpec s = sheet_spec(100);
  s.gravity = Vec3::Zero();
  s.projection.tolerance = 1e-3;
  const auto& P = s.surface.positions;
  const int a = closest_vertex(P, Vec3(0, 0, 0)), b = closest_vertex(P, Vec3(1, 0, 0));
  s.pins = {{a, P.row(a)}, {b, P.row(b)}};
  auto sc = std::make_shared<const Scene>(build_scene(s));
  Simulator sim(sc);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (Eigen::Index i = 0; i < sim.state().V.rows(); ++i) sim.state().V(i, 2) = u(rng);
  sim.state().V.row(a).setZero();
  sim.state().V.row(b).setZero();
  double e = total_energy(sim);
  for (int i = 0; i < 200; ++i) {
    sim.step();
    const double e1 = total_energy(sim);
    EXPECT_LE(e1, e * (1.0 + 1e-6));
    e = e1;
  }
}

TEST(Dynamics, PinsHeldExactlyByPredictor) {
  SceneSpec s = sheet_spec(150);
  const auto& P = s.surface.positions;
  const int a = closest_vertex(P, Vec3(0, 1, 0)), b = closest_vertex(P, Vec3(1, 1, 0));
  s.pins = {{a, P.row(a)}, {b, P.row(b)}};
  auto sc = std::make_shared<const Scene>(build_scene(s));
  Simulator sim(sc);
  for (int i = 0; i < 100; ++i) {
    const StepReport r = sim.step();
    EXPECT_LE(r.linear_residual, 1e-8);
  }
  EXPECT_LE((sim.state().Y.row(a) - P.row(a)).norm(), 1e-8);
}

TEST(Dynamics, ConstraintMaintainedOnPinnedCloth) {
  SceneSpec s = sheet_spec(200);
  s.surface = embed(irregular_square(200, 1.0, 5), Vec3(0, 0, -1), Vec3::UnitX(), Vec3::UnitZ(), 0.1);
  s.projection.tolerance = 0.01;
  const auto& P = s.surface.positions;
  const int a = closest_vertex(P, Vec3(0, 0, 0)), b = closest_vertex(P, Vec3(1, 0, 0));
  s.pins = {{a, P.row(a)}, {b, P.row(b)}};
  auto sc = std::make_shared<const Scene>(build_scene(s));
  Simulator sim(sc);
  int within = 0;
  for (int i = 0; i < 1000; ++i) within += sim.step().max_abs_g <= s.projection.tolerance;
  EXPECT_GE(within, 990);
}

TEST(Dynamics, StepConvenienceMatchesSimulator) {
  SceneSpec s = sheet_spec(60);
  auto sc = std::make_shared<const Scene>(build_scene(s));
  Simulator sim(sc);
  sim.step();
  const SimState next = step(rest_state(*sc), *sc);
  EXPECT_LE((next.Y - sim.state().Y).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Dynamics, InvalidSceneRejected) {
  SceneSpec s = sheet_spec(60);
  s.dt = -1.0;
  try {
    build_scene(s);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_STREQ(e.what(), "sim.dt must be > 0");
  }
  s = sheet_spec(60);
  s.pins = {{1000, Vec3::Zero()}};
  EXPECT_THROW(build_scene(s), ValidationError);
}

TEST(Dynamics, EdgeModelBuildsEdgeRows) {
  SceneSpec s = sheet_spec(60);
  s.model = ConstraintModel::EdgeLength;
  const Scene sc = build_scene(s);
  EXPECT_EQ(sc.constraints->rows(), static_cast<Eigen::Index>(sc.edges.size()));
  EXPECT_EQ(sc.mls, nullptr);
}

// Collisions

TEST(Collisions, PlanePushesOutAndClampsNormalVelocity) {
  Positions Y(2, 3), V(2, 3);
  Y << 0.0, -0.1, 0.0, 0.0, 0.5, 0.0;
  V << 1.0, -2.0, 0.0, 0.0, -1.0, 0.0;
  const auto r = apply_collisions(Y, V, {PlaneCollider{Vec3::Zero(), Vec3::UnitY()}}, 0.25);
  EXPECT_EQ(r.contacts, 1);
  EXPECT_NEAR(r.Y(0, 1), 1e-4, 1e-15);
  EXPECT_NEAR(r.V(0, 1), 0.0, 1e-15);
  EXPECT_NEAR(r.V(0, 0), 0.75, 1e-15);
  EXPECT_EQ(r.Y.row(1), Y.row(1));
}

TEST(Collisions, SphereAndBox) {
  Positions Y(2, 3), V = Positions::Zero(2, 3);
  Y << 0.0, 0.5, 0.0, 0.9, 0.5, 0.5;
  const auto s = apply_collisions(Y.topRows(1), V.topRows(1), {SphereCollider{Vec3::Zero(), 1.0}}, 0.0);
  EXPECT_NEAR(s.Y.row(0).norm(), 1.0 + 1e-4, 1e-12);
  const auto b = apply_collisions(Y.bottomRows(1), V.bottomRows(1), {BoxCollider{Vec3::Zero(), Vec3::Ones()}}, 0.0);
  EXPECT_NEAR(b.Y(0, 0), 1.0 + 1e-4, 1e-12);
}

TEST(Collisions, InvalidCollidersRejected) {
  EXPECT_THROW(validate_collider(SphereCollider{Vec3::Zero(), -1.0}), ValidationError);
  EXPECT_THROW(validate_collider(BoxCollider{Vec3::Ones(), Vec3::Zero()}), ValidationError);
  EXPECT_THROW(validate_collider(PlaneCollider{Vec3::Zero(), Vec3::Zero()}), ValidationError);
}

TEST(Collisions, ClothRestsOnFloor) {
  SceneSpec s = sheet_spec(100);
  s.surface = embed(irregular_square(100, 1.0, 5), Vec3(0, 0.05, 0), Vec3::UnitX(), Vec3::UnitZ(), 0.1);
  s.colliders = {PlaneCollider{Vec3::Zero(), Vec3::UnitY()}};
  auto sc = std::make_shared<const Scene>(build_scene(s));
  Simulator sim(sc);
  for (int i = 0; i < 300; ++i) sim.step();
  EXPECT_GE(sim.state().Y.col(1).minCoeff(), 0.0);
  EXPECT_LE(sim.state().Y.col(1).maxCoeff(), 1e-3);
}

// Diagnostics

TEST(Diagnostics, DistanceChangeZeroForRigidMotion) {
  const auto sheet = oracle::flat_sheet(80);
  const auto& P = sheet.surface.positions;
  EXPECT_EQ(distance_change_field(P, P, 0).max, 0.0);
  std::mt19937_64 rng(1);
  const Mat3 R = oracle::random_rotation(rng);
  const Positions Z = (P * R.transpose()).rowwise() + Eigen::RowVector3d(4, 5, 6);
  const auto f = distance_change_field(Z, P, 3);
  EXPECT_LE(f.values.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(f.values(3), 0.0);
}

TEST(Diagnostics, SagMetricByConstruction) {
  RestSurface s = embed(regular_grid(5, 3, 1.0, 0.5), Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), 1.0);
  Positions Y = s.positions;
  EXPECT_EQ(sag_metric(Y, s.positions, 0, 4), 0.0);
  Y(2, 1) -= 0.05;
  EXPECT_NEAR(sag_metric(Y, s.positions, 0, 4), 0.05, 1e-15);
  Y(7, 1) -= 0.3;  // off the pinned edge: ignored
  EXPECT_NEAR(sag_metric(Y, s.positions, 0, 4), 0.05, 1e-15);
}

TEST(Diagnostics, StrainReportZeroAtRestAndConsistent) {
  const auto sheet = oracle::flat_sheet(80);
  const auto edges = mesh_edges(sheet.surface.triangles);
  const auto& P = sheet.surface.positions;
  const auto r0 = strain_report(P, P, edges, &sheet.mls);
  EXPECT_EQ(r0.max_abs_edge_strain, 0.0);
  EXPECT_LE(r0.max_abs_g, 1e-12);
  std::mt19937_64 rng(2);
  const Positions Y = oracle::random_state(P, rng, 0.01);
  const auto r = strain_report(Y, P, edges, &sheet.mls);
  double m = 0.0;
  for (double e : r.edge_strain) m = std::max(m, std::abs(e));
  EXPECT_EQ(m, r.max_abs_edge_strain);
  EXPECT_LE(r.mean_abs_edge_strain, r.max_abs_edge_strain);
  EXPECT_EQ(r.neighborhood.size(), sheet.mls.size());
}

TEST(Diagnostics, RankSingleNeighborhoodIsOne) {
  std::mt19937_64 rng(3);
  const auto p = oracle::random_patch(rng, 5);
  const auto probe = jacobian_rank_probe(p.surface.positions, MlsOperator{{p.entry}});
  EXPECT_EQ(probe.rank, 1);
}

TEST(Diagnostics, MetricsAreBitStable) {
  const auto sheet = oracle::flat_sheet(80);
  std::mt19937_64 rng(4);
  const Positions Y = oracle::random_state(sheet.surface.positions, rng, 0.01);
  const auto edges = mesh_edges(sheet.surface.triangles);
  const auto a = strain_report(Y, sheet.surface.positions, edges, &sheet.mls);
  const auto b = strain_report(Y, sheet.surface.positions, edges, &sheet.mls);
  EXPECT_EQ(a.edge_strain, b.edge_strain);
  EXPECT_EQ(a.max_abs_g, b.max_abs_g);
}
