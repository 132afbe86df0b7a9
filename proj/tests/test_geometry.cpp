#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>

#include <set>

using namespace isoplate;

namespace {

RestSurface unit_square_grid(int n, double density = 1.0) {
  return embed(regular_grid(n, n, 1.0, 1.0), Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), density);
}

}  // namespace

TEST(RestSurface, RejectsOutOfRangeTriangleIndex) {
  RestSurface s = unit_square_grid(3);
  s.triangles.push_back({0, 1, 99});
  EXPECT_THROW(s.validate(), ValidationError);
}

TEST(RestSurface, RejectsDegenerateTriangle) {
  RestSurface s = unit_square_grid(3);
  s.triangles.push_back({0, 1, 2});  // collinear along the bottom row
  EXPECT_THROW(s.validate(), ValidationError);
}

TEST(RestSurface, TotalAreaOfGrid) { EXPECT_NEAR(unit_square_grid(5).total_area(), 1.0, 1e-14); }

TEST(LumpedMasses, SumToDensityTimesArea) {
  const RestSurface s = embed(irregular_square(150, 2.0, 3), Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), 0.3);
  const LumpedMasses m = compute_lumped_masses(s);
  EXPECT_NEAR(m.masses.sum(), 0.3 * 4.0, 1e-12);
  EXPECT_GT(m.masses.minCoeff(), 0.0);
}

TEST(LumpedMasses, RegularGridInteriorIsOneThirdOfIncidentArea) {
  const RestSurface s = unit_square_grid(5, 2.0);
  const LumpedMasses m = compute_lumped_masses(s);
  // Triangles of a 4x4-cell unit grid have area 1/32.
  for (int v : {6, 7, 12}) {
    const auto touching = std::count_if(s.triangles.begin(), s.triangles.end(), [&](const Triangle& t) {
      return t[0] == v || t[1] == v || t[2] == v;
    });
    EXPECT_NEAR(m.masses(v), 2.0 * static_cast<double>(touching) * (1.0 / 32.0) / 3.0, 1e-14);
  }
}

TEST(Mesh, BoundaryOfGrid) {
  const RestSurface s = unit_square_grid(4);
  const auto b = boundary_vertices(s.triangles, s.size());
  int count = 0;
  for (bool x : b) count += x;
  EXPECT_EQ(count, 12);
  EXPECT_FALSE(b[5]);
}

TEST(Mesh, EulerCharacteristicOfDisk) {
  const RestSurface s = embed(irregular_square(300, 1.0, 9), Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), 1.0);
  const auto e = mesh_edges(s.triangles).size();
  EXPECT_EQ(static_cast<long>(s.size()) - static_cast<long>(e) + static_cast<long>(s.triangles.size()), 1);
}

TEST(Meshgen, IrregularSquareHasExactCountAndCoversSquare) {
  for (int n : {50, 662, 1656}) {
    const FlatMesh m = irregular_square(n, 1.0, 7);
    EXPECT_EQ(m.size(), n);
    double area = 0.0;
    for (const auto& t : m.triangles) {
      const Vec2 a = m.points.row(t[0]), b = m.points.row(t[1]), c = m.points.row(t[2]);
      area += 0.5 * ((b - a).x() * (c - a).y() - (b - a).y() * (c - a).x());
    }
    EXPECT_NEAR(area, 1.0, 1e-9);
  }
}

TEST(Meshgen, DeterministicForSeed) {
  const FlatMesh a = irregular_square(200, 1.0, 4), b = irregular_square(200, 1.0, 4);
  EXPECT_EQ(a.points, b.points);
  EXPECT_EQ(a.triangles, b.triangles);
}

TEST(Meshgen, DelaunayEmptyCircumcircle) {
  const FlatMesh m = irregular_square(120, 1.0, 2);
  for (const auto& t : m.triangles) {
    const Vec2 a = m.points.row(t[0]), b = m.points.row(t[1]), c = m.points.row(t[2]);
    const auto cc = detail::circumcircle(a, b, c);
    for (Eigen::Index p = 0; p < m.size(); ++p) {
      if (p == t[0] || p == t[1] || p == t[2]) continue;
      EXPECT_GE((Vec2(m.points.row(p)) - cc.center).squaredNorm(), cc.radius2 * (1.0 - 1e-9));
    }
  }
}

TEST(Neighborhoods, KnnReturnsKNearestByBruteForce) {
  const RestSurface s = embed(irregular_square(80, 1.0, 1), Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), 1.0);
  const auto nb = build_neighborhoods(s, NeighborhoodStrategy::knn(5));
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    ASSERT_EQ(nb[i].members.size(), 5u);
    double worst_in = 0.0;
    for (int j : nb[i].members) worst_in = std::max(worst_in, (s.positions.row(j) - s.positions.row(i)).norm());
    int closer = 0;
    for (Eigen::Index j = 0; j < s.size(); ++j)
      if (j != i && (s.positions.row(j) - s.positions.row(i)).norm() < worst_in) ++closer;
    EXPECT_LE(closer, 4);
  }
}

TEST(Neighborhoods, RadiusMembersAreExactlyThePointsWithinRadius) {
  const RestSurface s = embed(irregular_square(60, 1.0, 1), Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), 1.0);
  const auto nb = build_neighborhoods(s, NeighborhoodStrategy::radius(0.3));
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    std::set<int> expect;
    for (Eigen::Index j = 0; j < s.size(); ++j)
      if (j != i && (s.positions.row(j) - s.positions.row(i)).norm() <= 0.3) expect.insert(static_cast<int>(j));
    EXPECT_EQ(std::set<int>(nb[i].members.begin(), nb[i].members.end()), expect);
  }
}

TEST(Neighborhoods, GraphDistanceOneIsOneRing) {
  const RestSurface s = unit_square_grid(4);
  const auto nb = build_neighborhoods(s, NeighborhoodStrategy::graph_distance(1));
  std::set<int> ring;
  for (const auto& [a, b] : mesh_edges(s.triangles)) {
    if (a == 5) ring.insert(b);
    if (b == 5) ring.insert(a);
  }
  EXPECT_EQ(std::set<int>(nb[5].members.begin(), nb[5].members.end()), ring);
}

TEST(Neighborhoods, TooSmallRadiusThrows) {
  const RestSurface s = unit_square_grid(4);
  EXPECT_THROW(build_neighborhoods(s, NeighborhoodStrategy::radius(0.01)), NeighborhoodTooSmall);
}

TEST(Neighborhoods, GraphDistanceNeedsTriangles) {
  RestSurface s = unit_square_grid(3);
  s.triangles.clear();
  EXPECT_THROW(build_neighborhoods(s, NeighborhoodStrategy::graph_distance(1)), MissingTriangulation);
}

TEST(LocalParameterization, PreservesDistancesOfFlatPatch) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = oracle::random_patch(rng, 7);
    for (std::size_t j = 0; j < p.nb.members.size(); ++j) {
      const double d3 = (p.surface.positions.row(p.nb.members[j]) - p.surface.positions.row(0)).norm();
      EXPECT_NEAR(p.nb.local_coords[j].norm(), d3, 1e-12);
    }
  }
}

TEST(LocalParameterization, CollinearNeighborhoodIsDegenerate) {
  RestSurface s;
  s.positions.resize(4, 3);
  s.positions << 0, 0, 0, 1, 0, 0, 2, 0, 0, 3, 0, 0;
  Neighborhood nb;
  nb.center = 0;
  nb.members = {1, 2, 3};
  EXPECT_THROW(local_parameterization(s, nb), DegenerateNeighborhood);
}

TEST(LocalParameterization, UsesRestUvWhenGiven) {
  RestSurface s = unit_square_grid(3);
  Coords2 uv(9, 2);
  for (int i = 0; i < 9; ++i) uv.row(i) << 2.0 * s.positions(i, 0), 2.0 * s.positions(i, 1);
  s.rest_uv = uv;
  Neighborhood nb;
  nb.center = 4;
  nb.members = {1, 3, 5, 7};
  nb = local_parameterization(s, nb);
  EXPECT_NEAR(nb.local_coords[0].norm(), 1.0, 1e-14);
}

TEST(Laplacian, RowsSumToZeroAndBoundaryRowsVanish) {
  const RestSurface s = embed(irregular_square(200, 1.0, 8), Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), 1.0);
  const auto lap = assemble_laplacian(s);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(s.size());
  EXPECT_LT((lap.L * ones).cwiseAbs().maxCoeff(), 1e-12);
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (!lap.interior_mask[i]) EXPECT_EQ(lap.L.row(i).norm(), 0.0);
}

TEST(Laplacian, AnnihilatesLinearFieldsOnFlatMesh) {
  const RestSurface s = embed(irregular_square(200, 1.0, 8), Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), 1.0);
  const auto lap = assemble_laplacian(s);
  const Eigen::VectorXd f = 3.0 * s.positions.col(0) - 2.0 * s.positions.col(1);
  EXPECT_LT((lap.L * f).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Laplacian, SymmetricOnInteriorBlock) {
  const RestSurface s = unit_square_grid(6);
  const auto lap = assemble_laplacian(s);
  const Eigen::MatrixXd L = lap.L;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    for (Eigen::Index j = 0; j < s.size(); ++j)
      if (lap.interior_mask[i] && lap.interior_mask[j]) EXPECT_NEAR(L(i, j), L(j, i), 1e-14);
}

TEST(Mls, ClosedFormMatchesDenseWeightedLeastSquares) {
  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = oracle::random_patch(rng, 3 + trial % 6);
    const Positions Y = oracle::random_state(p.surface.positions, rng, 0.3);
    const Mat32 F = deformation_gradient(Y, p.entry);
    const Mat32 ref = oracle::dense_weighted_fit(Y, p.nb, p.masses.masses);
    worst = std::max(worst, (F - ref).cwiseAbs().maxCoeff());
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(Mls, RestStateGivesOrthonormalColumns) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = oracle::random_patch(rng, 5);
    const Mat32 F = deformation_gradient(p.surface.positions, p.entry);
    EXPECT_LT((F.transpose() * F - Mat2::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT(strain(F).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Mls, ReproducesAffineMaps) {
  std::mt19937_64 rng(5);
  const auto p = oracle::random_patch(rng, 6);
  Mat32 G;
  G << 1.2, 0.1, -0.3, 0.9, 0.4, 0.2;
  Positions Y(p.surface.positions.rows(), 3);
  const auto& fr = p.nb.frame;
  for (Eigen::Index i = 0; i < Y.rows(); ++i) {
    const Vec3 d = p.surface.positions.row(i).transpose() - fr.origin;
    Y.row(i) = (G * Vec2(d.dot(fr.tangent_u), d.dot(fr.tangent_v))).transpose();
  }
  EXPECT_LT((deformation_gradient(Y, p.entry) - G).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Mls, TwoMembersIsExact) {
  RestSurface s;
  s.positions.resize(3, 3);
  s.positions << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  Neighborhood nb;
  nb.center = 0;
  nb.members = {1, 2};
  nb = local_parameterization(s, nb);
  LumpedMasses m{Eigen::Vector3d(1.0, 2.0, 3.0)};
  const MlsEntry e = precompute_mls(nb, m);
  EXPECT_EQ(e.A.rows(), 2);
  const Mat32 F = deformation_gradient(s.positions, e);
  EXPECT_LT((F.transpose() * F - Mat2::Identity()).norm(), 1e-14);
}

TEST(Mls, SingularGramThrows) {
  RestSurface s;
  s.positions.resize(3, 3);
  s.positions << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  Neighborhood nb;
  nb.center = 0;
  nb.members = {1, 2};
  nb.local_coords = {Vec2(1.0, 0.0), Vec2(2.0, 0.0)};
  LumpedMasses m{Eigen::Vector3d(1.0, 1.0, 1.0)};
  EXPECT_THROW(precompute_mls(nb, m), SingularGram);
}

TEST(Mls, StencilCoefficientsSumToZero) {
  std::mt19937_64 rng(6);
  const auto p = oracle::random_patch(rng, 8);
  EXPECT_LT(p.entry.stencil_coefficients().colwise().sum().cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(p.entry.stencil_vertices().back(), p.entry.center);
}
