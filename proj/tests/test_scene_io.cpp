#include "isoplate/scene_io.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace isoplate;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = R"(
[mesh]
generator = grid
nx = 4
ny = 4
)";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("isoplate_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string full_scene() {
  return R"(# a scene exercising every section
[mesh]
generator = irregular_square
points = 120
width = 1.5
seed = 9
origin = 0 0 -1.5
axis_u = 1 0 0
axis_v = 0 0 1

[material]
youngs_modulus = 1e6
thickness = 0.001
poisson_ratio = 0.3
area_density = 0.2

[neighborhoods]
strategy = knn
parameter = 8

[sim]
dt = 0.002
duration = 0.01
gravity = 0 -9.81 0
tolerance = 0.001
max_fp_iters = 12
geometric_stiffness = true

[pins]
nearest = 0 0 0
index = 3 4
box = 1.4 -1 -0.1 1.6 1 0.1

[coupling]
average = 10 11 12 @ 1.5 0 -1.35

[colliders]
friction = 0.2
plane = 0 -2 0 0 1 0
sphere = 0.75 -1 -0.75 0.25

[loads]
point = 7 0 -1 0

[output]
directory = frames
frame_stride = 2
)";
}

}  // namespace

TEST(SceneParse, MinimalSceneUsesDefaults) {
  const SceneFile sf = parse_scene(kMinimal);
  EXPECT_EQ(sf.dt, 1e-3);
  EXPECT_EQ(sf.projection.tolerance, 0.1);
  EXPECT_EQ(sf.mesh.kind, MeshSource::Kind::Grid);
  EXPECT_EQ(sf.model, ConstraintModel::Isometry);
}

TEST(SceneParse, ToleranceField) {
  const SceneFile sf = parse_scene(std::string(kMinimal) + "[sim]\ntolerance = 0.001\n");
  EXPECT_EQ(sf.projection.tolerance, 0.001);
}

TEST(SceneParse, NegativeDtNamesTheField) {
  const SceneFile sf = parse_scene(std::string(kMinimal) + "[sim]\ndt = -0.01\n");
  try {
    build_scene(to_spec(sf));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_STREQ(e.what(), "sim.dt must be > 0");
  }
}

TEST(SceneParse, UnknownKeyReportsLine) {
  try {
    parse_scene("[mesh]\ngenerator = grid\n[sim]\ntimestep = 0.1\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line, 4);
    EXPECT_NE(std::string(e.what()).find("sim.timestep"), std::string::npos);
  }
}

TEST(SceneParse, StrictErrors) {
  EXPECT_THROW(parse_scene("[mesh]\ngenerator = grid\n[bogus]\n"), ParseError);
  EXPECT_THROW(parse_scene("[mesh]\ngenerator = grid\n[sim]\ndt = 1\ndt = 2\n"), ParseError);
  EXPECT_THROW(parse_scene("[mesh]\ngenerator = grid\n[sim]\ndt = fast\n"), ParseError);
  EXPECT_THROW(parse_scene("[mesh]\ngenerator = grid\n[sim]\ngravity = 0 1\n"), ParseError);
  EXPECT_THROW(parse_scene("[mesh]\ngenerator = grid\n[sim]\ngeometric_stiffness = yes\n"), ParseError);
  EXPECT_THROW(parse_scene("dt = 1\n"), ParseError);
  EXPECT_THROW(parse_scene("[sim]\ndt = 1\n"), ParseError);
  EXPECT_THROW(parse_scene("[mesh]\n"), ValidationError);
  EXPECT_THROW(parse_scene("[mesh]\ngenerator = grid\n[material]\nthickness = 0.1\n"), ValidationError);
}

TEST(SceneParse, FullSceneFields) {
  const SceneFile sf = parse_scene(full_scene());
  EXPECT_EQ(sf.mesh.points, 120);
  EXPECT_NEAR(sf.material.bending_stiffness, MaterialParams::plate_stiffness(1e6, 1e-3, 0.3), 1e-20);
  EXPECT_EQ(sf.neighborhoods.kind, NeighborhoodStrategy::Kind::Knn);
  EXPECT_TRUE(sf.projection.use_geometric_stiffness);
  EXPECT_EQ(sf.pins.size(), 3u);
  ASSERT_EQ(sf.coupling.size(), 1u);
  EXPECT_NEAR(sf.coupling[0].weights[1].second, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(sf.colliders.size(), 2u);
  EXPECT_EQ(sf.loads.size(), 1u);
  EXPECT_EQ(sf.output.frame_stride, 2);
}

TEST(SceneParse, RoundTripIsCanonical) {
  for (const std::string text : {std::string(kMinimal), full_scene()}) {
    const std::string once = serialize(parse_scene(text));
    EXPECT_EQ(once, normalize(text));
    EXPECT_EQ(serialize(parse_scene(once)), once);
  }
}

TEST(SceneLoad, BuildsFullScene) {
  const fs::path dir = scratch("full");
  write_text(dir / "scene.ini", full_scene());
  const LoadedScene ls = load_scene(dir / "scene.ini");
  EXPECT_EQ(ls.scene->size(), 120);
  EXPECT_GE(ls.scene->spec.pins.size(), 4u);
  EXPECT_NE(ls.scene->linear, nullptr);
  const auto sum = run(*ls.scene, ls.file.output, dir / "out");
  EXPECT_EQ(sum.steps, 5);
  EXPECT_EQ(sum.frames_written, 3);
}

TEST(SceneLoad, MissingMeshFileIsValidationError) {
  const fs::path dir = scratch("missing");
  write_text(dir / "scene.ini", "[mesh]\npath = nowhere.obj\n");
  EXPECT_THROW(load_scene(dir / "scene.ini"), ValidationError);
}

TEST(Obj, ParsesFacesAndTextureCoordinates) {
  const RestSurface s = parse_obj(
      "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvt 2 0\nvt 2 2\nvt 0 2\nvn 0 0 1\n"
      "f 1/1/1 2/2/1 3/3/1\nf 1/1 3/3 4/4\n");
  EXPECT_EQ(s.size(), 4);
  ASSERT_EQ(s.triangles.size(), 2u);
  EXPECT_EQ(s.triangles[1], (Triangle{0, 2, 3}));
  ASSERT_TRUE(s.rest_uv.has_value());
  EXPECT_EQ((*s.rest_uv)(2, 0), 2.0);
}

TEST(Obj, NegativeIndicesAndNoUv) {
  const RestSurface s = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n");
  EXPECT_EQ(s.triangles[0], (Triangle{0, 1, 2}));
  EXPECT_FALSE(s.rest_uv.has_value());
}

TEST(Obj, RejectsPolygonsAndBadIndices) {
  EXPECT_THROW(parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"), ParseError);
  EXPECT_THROW(parse_obj("v 0 0 0\nv 1 0 0\nf 1 2 3\n"), ParseError);
  EXPECT_THROW(parse_obj("v 0 zero 0\n"), ParseError);
}

TEST(Obj, FrameZeroReproducesRestPositions) {
  const fs::path dir = scratch("frame0");
  write_text(dir / "scene.ini", R"([mesh]
generator = irregular_square
points = 80
seed = 2
origin = 0.1 0.2 0.3
axis_u = 0.6 0.8 0
axis_v = 0 0 1
[sim]
duration = 0
[output]
frame_stride = 1
)");
  const LoadedScene ls = load_scene(dir / "scene.ini");
  run(*ls.scene, ls.file.output, dir / "out");
  const RestSurface back = read_obj(dir / "out" / frame_name(0));
  EXPECT_LE((back.positions - ls.scene->spec.surface.positions).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(back.triangles, ls.scene->spec.surface.triangles);
}

TEST(Run, FrameScheduleAndDeterministicCsv) {
  const fs::path dir = scratch("run");
  write_text(dir / "scene.ini", R"([mesh]
generator = irregular_square
points = 100
[sim]
dt = 0.001
duration = 0.01
tolerance = 0.01
[pins]
nearest = 0 1 0
nearest = 1 1 0
[output]
frame_stride = 5
)");
  const LoadedScene ls = load_scene(dir / "scene.ini");
  const auto a = run(*ls.scene, ls.file.output, dir / "a");
  const auto b = run(*ls.scene, ls.file.output, dir / "b");
  EXPECT_EQ(a.frames_written, 3);
  for (int s : {0, 5, 10}) EXPECT_TRUE(fs::exists(dir / "a" / frame_name(s)));
  EXPECT_FALSE(fs::exists(dir / "a" / frame_name(1)));
  const std::string csv = read_text(dir / "a" / "diagnostics.csv");
  EXPECT_EQ(csv, read_text(dir / "b" / "diagnostics.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), diagnostics_header);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 12);
  // Settled rows respect the tolerance.
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> cols;
    std::istringstream ls2(line);
    for (std::string c; std::getline(ls2, c, ',');) cols.push_back(c);
    ASSERT_EQ(cols.size(), 9u);
    EXPECT_LE(std::stod(cols[4]), 0.01);
  }
}

TEST(Run, EdgeBaselineUsesEdgeRows) {
  const fs::path dir = scratch("baseline");
  write_text(dir / "scene.ini", "[mesh]\ngenerator = irregular_square\npoints = 60\n");
  const LoadedScene ls = load_scene(dir / "scene.ini", true);
  EXPECT_EQ(ls.scene->spec.model, ConstraintModel::EdgeLength);
  EXPECT_LE(ls.scene->constraints->evaluate(ls.scene->spec.surface.positions).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Run, FrameNames) {
  EXPECT_EQ(frame_name(0), "frame_000000.obj");
  EXPECT_EQ(frame_name(1234), "frame_001234.obj");
}
