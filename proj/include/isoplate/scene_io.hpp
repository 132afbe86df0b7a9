#pragma once

// Scene files, OBJ meshes, frame and diagnostics output.
//
// Scene files are INI-like: `[section]` headers, `key = value` lines, `#`
// comments. Parsing is strict. Unknown sections or keys, malformed values and
// repeated scalar keys are errors. List-valued keys (pins, colliders,
// coupling, loads) may repeat; each occurrence adds one entry.

#include "isoplate/diagnostics.hpp"
#include "isoplate/dynamics.hpp"
#include "isoplate/errors.hpp"
#include "isoplate/meshgen.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace isoplate {

struct MeshSource {
  enum class Kind { File, IrregularSquare, Grid };
  Kind kind = Kind::File;
  /// OBJ path; relative paths resolve against the scene file's directory.
  std::string path;
  int points = 662;
  int nx = 26;
  int ny = 26;
  double width = 1.0;
  double height = 1.0;
  unsigned seed = 1;
  Vec3 origin = Vec3::Zero();
  Vec3 axis_u = Vec3::UnitX();
  Vec3 axis_v = Vec3::UnitY();
};

struct PinSelector {
  enum class Kind { Index, Nearest, Box, Target };
  Kind kind = Kind::Index;
  std::vector<int> indices;
  /// Nearest: query point. Target: explicit target for indices[0].
  Vec3 point = Vec3::Zero();
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();
};

struct OutputConfig {
  std::string directory = "out";
  int frame_stride = 100;
  bool frames = true;
  bool diagnostics = true;
};

/// Parsed scene file. Pins keep their selectors; they are resolved against
/// the mesh by to_spec.
struct SceneFile {
  MeshSource mesh;
  MaterialParams material;
  NeighborhoodStrategy neighborhoods = NeighborhoodStrategy::graph_distance(1);
  double dt = 1e-3;
  double duration = 1.0;
  Vec3 gravity = Vec3(0.0, -9.81, 0.0);
  ProjectionConfig projection;
  ConstraintModel model = ConstraintModel::Isometry;
  double friction = 0.0;
  bool reproject_after_collision = false;
  std::vector<PinSelector> pins;
  std::vector<Coupling> coupling;
  std::vector<Collider> colliders;
  std::vector<PointLoad> loads;
  OutputConfig output;
  std::filesystem::path base_dir;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

inline std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string fmt(const Vec3& v) { return fmt(v.x()) + " " + fmt(v.y()) + " " + fmt(v.z()); }

// Value parser bound to one line, so every error carries its line number.
struct Field {
  int line;
  std::string key;
  std::string value;

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(line, key + ": " + what); }

  double number(std::string_view tok) const {
    double v = 0.0;
    const auto* end = tok.data() + tok.size();
    const auto r = std::from_chars(tok.data(), end, v);
    if (r.ec != std::errc() || r.ptr != end) fail("expected a number, got '" + std::string(tok) + "'");
    return v;
  }
  long integer(std::string_view tok) const {
    long v = 0;
    const auto* end = tok.data() + tok.size();
    const auto r = std::from_chars(tok.data(), end, v);
    if (r.ec != std::errc() || r.ptr != end) fail("expected an integer, got '" + std::string(tok) + "'");
    return v;
  }
  std::vector<double> numbers(std::size_t count) const {
    const auto toks = split_ws(value);
    if (toks.size() != count) fail("expected " + std::to_string(count) + " numbers");
    std::vector<double> out;
    for (const auto& t : toks) out.push_back(number(t));
    return out;
  }
  double scalar() const { return numbers(1)[0]; }
  int int_scalar() const {
    const auto toks = split_ws(value);
    if (toks.size() != 1) fail("expected one integer");
    return static_cast<int>(integer(toks[0]));
  }
  Vec3 vec3() const {
    const auto v = numbers(3);
    return {v[0], v[1], v[2]};
  }
  bool boolean() const {
    if (value == "true") return true;
    if (value == "false") return false;
    fail("expected true or false");
  }
  std::vector<int> index_list() const {
    const auto toks = split_ws(value);
    if (toks.empty()) fail("expected at least one index");
    std::vector<int> out;
    for (const auto& t : toks) out.push_back(static_cast<int>(integer(t)));
    return out;
  }
};

}  // namespace detail

/// Parses scene text. `base_dir` is recorded for resolving the mesh path.
inline SceneFile parse_scene(std::string_view text, const std::filesystem::path& base_dir = {}) {
  using detail::Field;
  SceneFile sf;
  sf.base_dir = base_dir;

  static const std::set<std::string> list_keys = {"pins.index",      "pins.nearest",     "pins.box",
                                                  "pins.target",     "coupling.average", "coupling.weighted",
                                                  "colliders.plane", "colliders.sphere", "colliders.box",
                                                  "loads.point"};
  std::map<std::string, std::function<void(const Field&)>> handlers;
  auto& m = sf.mesh;

  handlers["mesh.path"] = [&](const Field& f) {
    if (f.value.empty()) f.fail("empty path");
    m.path = f.value;
  };
  handlers["mesh.format"] = [&](const Field& f) {
    if (f.value != "obj") f.fail("only 'obj' is supported");
  };
  handlers["mesh.generator"] = [&](const Field& f) {
    if (f.value == "irregular_square") m.kind = MeshSource::Kind::IrregularSquare;
    else if (f.value == "grid") m.kind = MeshSource::Kind::Grid;
    else f.fail("expected irregular_square or grid");
  };
  handlers["mesh.points"] = [&](const Field& f) { m.points = f.int_scalar(); };
  handlers["mesh.nx"] = [&](const Field& f) { m.nx = f.int_scalar(); };
  handlers["mesh.ny"] = [&](const Field& f) { m.ny = f.int_scalar(); };
  handlers["mesh.width"] = [&](const Field& f) { m.width = f.scalar(); };
  handlers["mesh.height"] = [&](const Field& f) { m.height = f.scalar(); };
  handlers["mesh.seed"] = [&](const Field& f) {
    const int s = f.int_scalar();
    if (s < 0) f.fail("must be >= 0");
    m.seed = static_cast<unsigned>(s);
  };
  handlers["mesh.origin"] = [&](const Field& f) { m.origin = f.vec3(); };
  handlers["mesh.axis_u"] = [&](const Field& f) { m.axis_u = f.vec3(); };
  handlers["mesh.axis_v"] = [&](const Field& f) { m.axis_v = f.vec3(); };

  handlers["material.bending_stiffness"] = [&](const Field& f) { sf.material.bending_stiffness = f.scalar(); };
  handlers["material.area_density"] = [&](const Field& f) { sf.material.area_density = f.scalar(); };
  handlers["material.youngs_modulus"] = [&](const Field& f) { sf.material.youngs_modulus = f.scalar(); };
  handlers["material.thickness"] = [&](const Field& f) { sf.material.thickness = f.scalar(); };
  handlers["material.poisson_ratio"] = [&](const Field& f) { sf.material.poisson_ratio = f.scalar(); };

  handlers["neighborhoods.strategy"] = [&](const Field& f) {
    using K = NeighborhoodStrategy::Kind;
    if (f.value == "graph") sf.neighborhoods.kind = K::GraphDistance;
    else if (f.value == "radius") sf.neighborhoods.kind = K::Radius;
    else if (f.value == "knn") sf.neighborhoods.kind = K::Knn;
    else f.fail("expected graph, radius or knn");
  };
  handlers["neighborhoods.parameter"] = [&](const Field& f) { sf.neighborhoods.parameter = f.scalar(); };

  handlers["sim.dt"] = [&](const Field& f) { sf.dt = f.scalar(); };
  handlers["sim.duration"] = [&](const Field& f) { sf.duration = f.scalar(); };
  handlers["sim.gravity"] = [&](const Field& f) { sf.gravity = f.vec3(); };
  handlers["sim.tolerance"] = [&](const Field& f) { sf.projection.tolerance = f.scalar(); };
  handlers["sim.linear_tolerance"] = [&](const Field& f) { sf.projection.linear_tolerance = f.scalar(); };
  handlers["sim.max_fp_iters"] = [&](const Field& f) { sf.projection.max_fp_iters = f.int_scalar(); };
  handlers["sim.stall_iters"] = [&](const Field& f) { sf.projection.stall_iters = f.int_scalar(); };
  handlers["sim.geometric_stiffness"] = [&](const Field& f) { sf.projection.use_geometric_stiffness = f.boolean(); };
  handlers["sim.warm_start"] = [&](const Field& f) { sf.projection.warm_start = f.boolean(); };
  handlers["sim.constraints"] = [&](const Field& f) {
    if (f.value == "isometry") sf.model = ConstraintModel::Isometry;
    else if (f.value == "edge") sf.model = ConstraintModel::EdgeLength;
    else f.fail("expected isometry or edge");
  };

  handlers["pins.index"] = [&](const Field& f) {
    PinSelector p;
    p.indices = f.index_list();
    sf.pins.push_back(std::move(p));
  };
  handlers["pins.nearest"] = [&](const Field& f) {
    PinSelector p;
    p.kind = PinSelector::Kind::Nearest;
    p.point = f.vec3();
    sf.pins.push_back(std::move(p));
  };
  handlers["pins.box"] = [&](const Field& f) {
    const auto v = f.numbers(6);
    PinSelector p;
    p.kind = PinSelector::Kind::Box;
    p.lo = Vec3(v[0], v[1], v[2]);
    p.hi = Vec3(v[3], v[4], v[5]);
    sf.pins.push_back(std::move(p));
  };
  handlers["pins.target"] = [&](const Field& f) {
    const auto toks = detail::split_ws(f.value);
    if (toks.size() != 4) f.fail("expected: index x y z");
    PinSelector p;
    p.kind = PinSelector::Kind::Target;
    p.indices = {static_cast<int>(f.integer(toks[0]))};
    p.point = Vec3(f.number(toks[1]), f.number(toks[2]), f.number(toks[3]));
    sf.pins.push_back(std::move(p));
  };

  // "<indices> @ x y z" (uniform weights) or "<i:w ...> @ x y z".
  auto coupling = [&](const Field& f, bool weighted) {
    const auto at = f.value.find('@');
    if (at == std::string::npos) f.fail("expected '<points> @ x y z'");
    Field target = f;
    target.value = detail::trim(std::string_view(f.value).substr(at + 1));
    Coupling c;
    c.target = target.vec3();
    const auto toks = detail::split_ws(std::string_view(f.value).substr(0, at));
    if (toks.empty()) f.fail("expected at least one point");
    for (const auto& t : toks) {
      if (weighted) {
        const auto colon = t.find(':');
        if (colon == std::string::npos) f.fail("expected index:weight, got '" + t + "'");
        c.weights.emplace_back(static_cast<int>(f.integer(std::string_view(t).substr(0, colon))),
                               f.number(std::string_view(t).substr(colon + 1)));
      } else {
        c.weights.emplace_back(static_cast<int>(f.integer(t)), 1.0 / static_cast<double>(toks.size()));
      }
    }
    sf.coupling.push_back(std::move(c));
  };
  handlers["coupling.average"] = [&](const Field& f) { coupling(f, false); };
  handlers["coupling.weighted"] = [&](const Field& f) { coupling(f, true); };

  handlers["colliders.plane"] = [&](const Field& f) {
    const auto v = f.numbers(6);
    sf.colliders.emplace_back(PlaneCollider{Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5])});
  };
  handlers["colliders.sphere"] = [&](const Field& f) {
    const auto v = f.numbers(4);
    sf.colliders.emplace_back(SphereCollider{Vec3(v[0], v[1], v[2]), v[3]});
  };
  handlers["colliders.box"] = [&](const Field& f) {
    const auto v = f.numbers(6);
    sf.colliders.emplace_back(BoxCollider{Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5])});
  };
  handlers["colliders.friction"] = [&](const Field& f) { sf.friction = f.scalar(); };
  handlers["colliders.reproject"] = [&](const Field& f) { sf.reproject_after_collision = f.boolean(); };

  handlers["loads.point"] = [&](const Field& f) {
    const auto toks = detail::split_ws(f.value);
    if (toks.size() != 4) f.fail("expected: index fx fy fz");
    sf.loads.push_back({static_cast<int>(f.integer(toks[0])),
                        Vec3(f.number(toks[1]), f.number(toks[2]), f.number(toks[3]))});
  };

  handlers["output.directory"] = [&](const Field& f) {
    if (f.value.empty()) f.fail("empty directory");
    sf.output.directory = f.value;
  };
  handlers["output.frame_stride"] = [&](const Field& f) { sf.output.frame_stride = f.int_scalar(); };
  handlers["output.frames"] = [&](const Field& f) { sf.output.frames = f.boolean(); };
  handlers["output.diagnostics"] = [&](const Field& f) { sf.output.diagnostics = f.boolean(); };

  static const std::set<std::string> sections = {"mesh", "material", "neighborhoods", "sim", "pins",
                                                 "coupling", "colliders", "loads", "output"};
  std::string section;
  std::set<std::string> seen_keys, seen_sections;
  std::istringstream in{std::string(text)};
  int line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = detail::trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(line_no, "malformed section header");
      section = detail::trim(std::string_view(line).substr(1, line.size() - 2));
      if (!sections.count(section)) throw ParseError(line_no, "unknown section [" + section + "]");
      if (!seen_sections.insert(section).second) throw ParseError(line_no, "duplicate section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected key = value");
    if (section.empty()) throw ParseError(line_no, "key outside of any section");
    const std::string key = section + "." + detail::trim(std::string_view(line).substr(0, eq));
    const auto it = handlers.find(key);
    if (it == handlers.end()) throw ParseError(line_no, "unknown key " + key);
    if (!list_keys.count(key) && !seen_keys.insert(key).second) throw ParseError(line_no, "duplicate key " + key);
    it->second(Field{line_no, key, detail::trim(std::string_view(line).substr(eq + 1))});
  }

  if (!seen_sections.count("mesh")) throw ParseError(line_no, "missing [mesh] section");
  if (m.kind == MeshSource::Kind::File && m.path.empty()) throw ValidationError("mesh.path is required");
  if (m.kind != MeshSource::Kind::File && !m.path.empty())
    throw ValidationError("mesh.path and mesh.generator are mutually exclusive");
  if (sf.material.youngs_modulus || sf.material.thickness || sf.material.poisson_ratio) {
    if (!sf.material.has_moduli())
      throw ValidationError("material: youngs_modulus, thickness and poisson_ratio must be given together");
    if (!seen_keys.count("material.bending_stiffness"))
      sf.material.bending_stiffness = MaterialParams::plate_stiffness(*sf.material.youngs_modulus,
                                                                      *sf.material.thickness,
                                                                      *sf.material.poisson_ratio);
  }
  return sf;
}

/// Canonical text: every section and key in fixed order, defaults filled in,
/// shortest round-trip number formatting.
inline std::string serialize(const SceneFile& sf) {
  using detail::fmt;
  std::ostringstream o;
  const auto& m = sf.mesh;
  o << "[mesh]\n";
  switch (m.kind) {
    case MeshSource::Kind::File:
      o << "path = " << m.path << "\nformat = obj\n";
      break;
    case MeshSource::Kind::IrregularSquare:
      o << "generator = irregular_square\npoints = " << m.points << "\nwidth = " << fmt(m.width)
        << "\nseed = " << m.seed << "\n";
      break;
    case MeshSource::Kind::Grid:
      o << "generator = grid\nnx = " << m.nx << "\nny = " << m.ny << "\nwidth = " << fmt(m.width)
        << "\nheight = " << fmt(m.height) << "\n";
      break;
  }
  if (m.kind != MeshSource::Kind::File)
    o << "origin = " << fmt(m.origin) << "\naxis_u = " << fmt(m.axis_u) << "\naxis_v = " << fmt(m.axis_v) << "\n";

  o << "\n[material]\nbending_stiffness = " << fmt(sf.material.bending_stiffness)
    << "\narea_density = " << fmt(sf.material.area_density) << "\n";
  if (sf.material.has_moduli())
    o << "youngs_modulus = " << fmt(*sf.material.youngs_modulus) << "\nthickness = " << fmt(*sf.material.thickness)
      << "\npoisson_ratio = " << fmt(*sf.material.poisson_ratio) << "\n";

  o << "\n[neighborhoods]\nstrategy = ";
  switch (sf.neighborhoods.kind) {
    case NeighborhoodStrategy::Kind::GraphDistance: o << "graph"; break;
    case NeighborhoodStrategy::Kind::Radius: o << "radius"; break;
    case NeighborhoodStrategy::Kind::Knn: o << "knn"; break;
  }
  o << "\nparameter = " << fmt(sf.neighborhoods.parameter) << "\n";

  const auto& p = sf.projection;
  o << "\n[sim]\ndt = " << fmt(sf.dt) << "\nduration = " << fmt(sf.duration) << "\ngravity = " << fmt(sf.gravity)
    << "\ntolerance = " << fmt(p.tolerance) << "\nlinear_tolerance = " << fmt(p.linear_tolerance)
    << "\nmax_fp_iters = " << p.max_fp_iters << "\nstall_iters = " << p.stall_iters
    << "\ngeometric_stiffness = " << (p.use_geometric_stiffness ? "true" : "false")
    << "\nwarm_start = " << (p.warm_start ? "true" : "false")
    << "\nconstraints = " << (sf.model == ConstraintModel::Isometry ? "isometry" : "edge") << "\n";

  o << "\n[pins]\n";
  for (const auto& pin : sf.pins) {
    switch (pin.kind) {
      case PinSelector::Kind::Index:
        o << "index =";
        for (int i : pin.indices) o << " " << i;
        o << "\n";
        break;
      case PinSelector::Kind::Nearest: o << "nearest = " << fmt(pin.point) << "\n"; break;
      case PinSelector::Kind::Box: o << "box = " << fmt(pin.lo) << " " << fmt(pin.hi) << "\n"; break;
      case PinSelector::Kind::Target: o << "target = " << pin.indices[0] << " " << fmt(pin.point) << "\n"; break;
    }
  }

  o << "\n[coupling]\n";
  for (const auto& c : sf.coupling) {
    o << "weighted =";
    for (const auto& [i, w] : c.weights) o << " " << i << ":" << fmt(w);
    o << " @ " << fmt(c.target) << "\n";
  }

  o << "\n[colliders]\nfriction = " << fmt(sf.friction)
    << "\nreproject = " << (sf.reproject_after_collision ? "true" : "false") << "\n";
  for (const auto& c : sf.colliders) {
    std::visit(
        [&](const auto& col) {
          using T = std::decay_t<decltype(col)>;
          if constexpr (std::is_same_v<T, PlaneCollider>) o << "plane = " << fmt(col.point) << " " << fmt(col.normal);
          else if constexpr (std::is_same_v<T, SphereCollider>) o << "sphere = " << fmt(col.center) << " " << fmt(col.radius);
          else o << "box = " << fmt(col.lo) << " " << fmt(col.hi);
        },
        c);
    o << "\n";
  }

  o << "\n[loads]\n";
  for (const auto& l : sf.loads) o << "point = " << l.index << " " << fmt(l.force) << "\n";

  o << "\n[output]\ndirectory = " << sf.output.directory << "\nframe_stride = " << sf.output.frame_stride
    << "\nframes = " << (sf.output.frames ? "true" : "false")
    << "\ndiagnostics = " << (sf.output.diagnostics ? "true" : "false") << "\n";
  return o.str();
}

inline std::string normalize(std::string_view text) { return serialize(parse_scene(text)); }

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline SceneFile read_scene_file(const std::filesystem::path& path) {
  return parse_scene(read_text(path), path.parent_path());
}

/// Reads `v`, `vt` and triangular `f` records. Face entries may use the
/// v, v/vt, v//vn or v/vt/vn forms; when every vertex has exactly one vt index
/// the texture coordinates become the surface's rest_uv.
inline RestSurface parse_obj(std::string_view text) {
  RestSurface s;
  std::vector<Vec3> v;
  std::vector<Vec2> vt;
  std::vector<int> uv_of;
  bool uv_consistent = true;
  std::istringstream in{std::string(text)};
  int line_no = 0;
  auto num = [&](const std::string& tok) {
    double x = 0.0;
    const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), x);
    if (r.ec != std::errc() || r.ptr != tok.data() + tok.size()) throw ParseError(line_no, "bad number '" + tok + "'");
    return x;
  };
  auto index = [&](std::string_view tok, std::size_t count) {
    long i = 0;
    const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), i);
    if (r.ec != std::errc() || r.ptr != tok.data() + tok.size()) throw ParseError(line_no, "bad index");
    if (i < 0) i += static_cast<long>(count) + 1;
    if (i < 1 || i > static_cast<long>(count)) throw ParseError(line_no, "index out of range");
    return static_cast<int>(i - 1);
  };
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const auto toks = detail::split_ws(raw.substr(0, raw.find('#')));
    if (toks.empty()) continue;
    const std::string& tag = toks[0];
    if (tag == "v") {
      if (toks.size() < 4) throw ParseError(line_no, "v needs 3 coordinates");
      v.emplace_back(num(toks[1]), num(toks[2]), num(toks[3]));
      uv_of.push_back(-1);
    } else if (tag == "vt") {
      if (toks.size() < 3) throw ParseError(line_no, "vt needs 2 coordinates");
      vt.emplace_back(num(toks[1]), num(toks[2]));
    } else if (tag == "f") {
      if (toks.size() != 4) throw ParseError(line_no, "only triangular faces are supported");
      Triangle t{};
      for (int k = 0; k < 3; ++k) {
        const std::string_view tok = toks[k + 1];
        const auto slash = tok.find('/');
        t[k] = index(tok.substr(0, slash), v.size());
        int uv = -1;
        if (slash != std::string_view::npos) {
          const auto rest = tok.substr(slash + 1);
          const auto slash2 = rest.find('/');
          const auto uv_tok = rest.substr(0, slash2);
          if (!uv_tok.empty()) uv = index(uv_tok, vt.size());
        }
        if (uv < 0) uv_consistent = false;
        else if (uv_of[t[k]] < 0) uv_of[t[k]] = uv;
        else if (uv_of[t[k]] != uv) uv_consistent = false;
      }
      s.triangles.push_back(t);
    }
    // Other records (vn, g, o, s, usemtl, mtllib) carry nothing we use.
  }
  if (v.empty()) throw ParseError(line_no, "no vertices");
  s.positions.resize(static_cast<Eigen::Index>(v.size()), 3);
  for (std::size_t i = 0; i < v.size(); ++i) s.positions.row(static_cast<Eigen::Index>(i)) = v[i].transpose();
  if (!vt.empty() && uv_consistent && std::none_of(uv_of.begin(), uv_of.end(), [](int i) { return i < 0; })) {
    Coords2 uv(static_cast<Eigen::Index>(v.size()), 2);
    for (std::size_t i = 0; i < v.size(); ++i) uv.row(static_cast<Eigen::Index>(i)) = vt[uv_of[i]].transpose();
    s.rest_uv = std::move(uv);
  }
  return s;
}

inline RestSurface read_obj(const std::filesystem::path& path) {
  try {
    return parse_obj(read_text(path));
  } catch (const ParseError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline std::string format_obj(const Positions& Y, const std::vector<Triangle>& triangles) {
  std::string out;
  out.reserve(static_cast<std::size_t>(Y.rows()) * 64 + triangles.size() * 24);
  for (Eigen::Index i = 0; i < Y.rows(); ++i)
    out += "v " + detail::fmt(Y(i, 0)) + " " + detail::fmt(Y(i, 1)) + " " + detail::fmt(Y(i, 2)) + "\n";
  for (const auto& t : triangles)
    out += "f " + std::to_string(t[0] + 1) + " " + std::to_string(t[1] + 1) + " " + std::to_string(t[2] + 1) + "\n";
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

inline void write_obj(const std::filesystem::path& path, const Positions& Y, const std::vector<Triangle>& triangles) {
  write_text(path, format_obj(Y, triangles));
}

inline std::string frame_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06d.obj", step);
  return buf;
}

inline RestSurface load_mesh(const SceneFile& sf) {
  const auto& m = sf.mesh;
  switch (m.kind) {
    case MeshSource::Kind::File: {
      std::filesystem::path p(m.path);
      if (p.is_relative()) p = sf.base_dir / p;
      if (!std::filesystem::exists(p)) throw ValidationError("mesh.path: file not found: " + p.string());
      return read_obj(p);
    }
    case MeshSource::Kind::IrregularSquare:
      if (m.points < 9) throw ValidationError("mesh.points must be >= 9");
      if (!(m.width > 0.0)) throw ValidationError("mesh.width must be > 0");
      return embed(irregular_square(m.points, m.width, m.seed), m.origin, m.axis_u, m.axis_v, 1.0);
    case MeshSource::Kind::Grid:
      if (!(m.width > 0.0 && m.height > 0.0)) throw ValidationError("mesh.width and mesh.height must be > 0");
      return embed(regular_grid(m.nx, m.ny, m.width, m.height), m.origin, m.axis_u, m.axis_v, 1.0);
  }
  throw ValidationError("mesh: unknown source");
}

/// Resolves selectors to pins targeting the rest positions (or explicit
/// targets). Duplicate indices are pinned once; the first selector wins.
inline std::vector<Pin> resolve_pins(const std::vector<PinSelector>& selectors, const Positions& rest) {
  std::vector<Pin> out;
  std::set<int> used;
  const auto n = static_cast<int>(rest.rows());
  auto add = [&](int i, const Vec3& target) {
    if (i < 0 || i >= n) throw ValidationError("pins: index " + std::to_string(i) + " out of range");
    if (used.insert(i).second) out.push_back({i, target});
  };
  for (const auto& s : selectors) {
    switch (s.kind) {
      case PinSelector::Kind::Index:
        for (int i : s.indices) add(i, i >= 0 && i < n ? Vec3(rest.row(i)) : Vec3::Zero());
        break;
      case PinSelector::Kind::Nearest: {
        const int i = closest_vertex(rest, s.point);
        add(i, rest.row(i));
        break;
      }
      case PinSelector::Kind::Box: {
        bool any = false;
        for (int i = 0; i < n; ++i) {
          const Vec3 x = rest.row(i);
          if ((x.array() >= s.lo.array()).all() && (x.array() <= s.hi.array()).all()) {
            add(i, x);
            any = true;
          }
        }
        if (!any) throw ValidationError("pins.box selects no points");
        break;
      }
      case PinSelector::Kind::Target: add(s.indices[0], s.point); break;
    }
  }
  return out;
}

inline SceneSpec to_spec(const SceneFile& sf) {
  SceneSpec spec;
  spec.surface = load_mesh(sf);
  spec.surface.density = sf.material.area_density;
  spec.neighborhoods = sf.neighborhoods;
  spec.material = sf.material;
  spec.gravity = sf.gravity;
  spec.dt = sf.dt;
  spec.duration = sf.duration;
  spec.projection = sf.projection;
  spec.pins = resolve_pins(sf.pins, spec.surface.positions);
  spec.coupling = sf.coupling;
  spec.loads = sf.loads;
  spec.colliders = sf.colliders;
  spec.friction = sf.friction;
  spec.reproject_after_collision = sf.reproject_after_collision;
  spec.model = sf.model;
  if (sf.output.frame_stride < 1) throw ValidationError("output.frame_stride must be >= 1");
  if (sf.neighborhoods.kind != NeighborhoodStrategy::Kind::Radius &&
      (sf.neighborhoods.parameter < 1.0 || sf.neighborhoods.parameter != std::floor(sf.neighborhoods.parameter)))
    throw ValidationError("neighborhoods.parameter must be a positive integer for graph and knn");
  if (sf.neighborhoods.kind == NeighborhoodStrategy::Kind::Radius && !(sf.neighborhoods.parameter > 0.0))
    throw ValidationError("neighborhoods.parameter must be > 0");
  return spec;
}

struct LoadedScene {
  SceneFile file;
  std::shared_ptr<const Scene> scene;
  double load_seconds = 0.0;
};

/// Parses, validates and precomputes. The edge-constraint baseline is
/// selected with `edge_baseline`.
inline LoadedScene load_scene(const std::filesystem::path& path, bool edge_baseline = false) {
  const auto t0 = std::chrono::steady_clock::now();
  LoadedScene out;
  out.file = read_scene_file(path);
  if (edge_baseline) out.file.model = ConstraintModel::EdgeLength;
  out.scene = std::make_shared<const Scene>(build_scene(to_spec(out.file)));
  out.load_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline constexpr const char* diagnostics_header =
    "step,time,fp_iterations,used_fallback,max_abs_g,bending_energy,kinetic_energy,max_edge_strain,momentum";

struct StepRecord {
  int step = 0;
  double time = 0.0;
  StepReport report;
  double bending_energy = 0.0;
  double kinetic_energy = 0.0;
  double max_edge_strain = 0.0;
  /// Euclidean norm of the total linear momentum (kg m/s).
  double momentum = 0.0;
};

inline std::string format_record(const StepRecord& r) {
  using detail::fmt;
  return std::to_string(r.step) + "," + fmt(r.time) + "," + std::to_string(r.report.fp_iterations) + "," +
         (r.report.used_fallback ? "1" : "0") + "," + fmt(r.report.max_abs_g) + "," + fmt(r.bending_energy) + "," +
         fmt(r.kinetic_energy) + "," + fmt(r.max_edge_strain) + "," + fmt(r.momentum);
}

inline StepRecord record(const Simulator& sim, int step, const StepReport& rep) {
  const Scene& sc = sim.scene();
  StepRecord r;
  r.step = step;
  r.time = sim.state().time;
  r.report = rep;
  r.bending_energy = sim.bending_energy();
  r.kinetic_energy = sim.kinetic_energy();
  r.max_edge_strain = max_abs_edge_strain(sim.state().Y, sc.spec.surface.positions, sc.edges);
  r.momentum = sim.momentum().norm();
  return r;
}

struct RunSummary {
  int steps = 0;
  int frames_written = 0;
  int fallbacks = 0;
  double max_abs_g = 0.0;
  double seconds = 0.0;
  SimState final_state;
};

inline int step_count(const Scene& scene) {
  return static_cast<int>(std::llround(scene.spec.duration / scene.spec.dt));
}

/// Runs the scene to its duration. Frames are written at every step index
/// divisible by the stride (step 0 is the rest state); the CSV has one row per
/// step starting at step 0. `on_step` is called after every step.
inline RunSummary run(const Scene& scene, const OutputConfig& output, const std::filesystem::path& out_dir,
                      const std::function<void(const StepRecord&)>& on_step = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  std::filesystem::create_directories(out_dir);
  std::shared_ptr<const Scene> view(std::shared_ptr<const Scene>{}, &scene);
  Simulator sim(view);
  RunSummary sum;
  std::ofstream csv;
  if (output.diagnostics) {
    csv.open(out_dir / "diagnostics.csv", std::ios::binary);
    if (!csv) throw ValidationError("cannot write " + (out_dir / "diagnostics.csv").string());
    csv << diagnostics_header << "\n";
  }
  auto emit = [&](int s, const StepReport& rep) {
    const StepRecord r = record(sim, s, rep);
    if (output.diagnostics) csv << format_record(r) << "\n";
    if (output.frames && s % output.frame_stride == 0) {
      write_obj(out_dir / frame_name(s), sim.state().Y, scene.spec.surface.triangles);
      ++sum.frames_written;
    }
    if (on_step) on_step(r);
  };

  StepReport initial;
  initial.max_abs_g = scene.constraints->residuals(scene.constraints->evaluate(sim.state().Y)).first;
  emit(0, initial);
  const int n = step_count(scene);
  for (int s = 1; s <= n; ++s) {
    const StepReport rep = sim.step();
    sum.fallbacks += rep.used_fallback;
    sum.max_abs_g = std::max(sum.max_abs_g, rep.max_abs_g);
    emit(s, rep);
  }
  sum.steps = n;
  sum.final_state = sim.state();
  sum.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return sum;
}

}  // namespace isoplate
