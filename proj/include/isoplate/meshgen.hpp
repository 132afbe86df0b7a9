#pragma once

// Flat sheet generators: regular grids and irregular Delaunay-triangulated
// blue-noise samplings of a rectangle, plus helpers to embed them in 3D.

#include "isoplate/errors.hpp"
#include "isoplate/geometry.hpp"
#include "isoplate/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <vector>

namespace isoplate {

struct FlatMesh {
  Coords2 points;
  std::vector<Triangle> triangles;

  Eigen::Index size() const { return points.rows(); }
};

/// nx * ny vertices on [0, width] x [0, height], row-major from (0, 0).
/// Quads are split along alternating diagonals.
inline FlatMesh regular_grid(int nx, int ny, double width, double height) {
  if (nx < 2 || ny < 2) throw ValidationError("grid needs at least 2 x 2 vertices");
  FlatMesh m;
  m.points.resize(nx * ny, 2);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      m.points.row(j * nx + i) << width * i / (nx - 1), height * j / (ny - 1);
  for (int j = 0; j + 1 < ny; ++j) {
    for (int i = 0; i + 1 < nx; ++i) {
      const int a = j * nx + i, b = a + 1, c = a + nx, d = c + 1;
      if ((i + j) % 2 == 0) {
        m.triangles.push_back({a, b, d});
        m.triangles.push_back({a, d, c});
      } else {
        m.triangles.push_back({a, b, c});
        m.triangles.push_back({b, d, c});
      }
    }
  }
  return m;
}

namespace detail {

struct Circumcircle {
  Vec2 center;
  double radius2;
};

inline Circumcircle circumcircle(const Vec2& a, const Vec2& b, const Vec2& c) {
  const double d = 2.0 * (a.x() * (b.y() - c.y()) + b.x() * (c.y() - a.y()) + c.x() * (a.y() - b.y()));
  const double a2 = a.squaredNorm(), b2 = b.squaredNorm(), c2 = c.squaredNorm();
  const Vec2 center((a2 * (b.y() - c.y()) + b2 * (c.y() - a.y()) + c2 * (a.y() - b.y())) / d,
                    (a2 * (c.x() - b.x()) + b2 * (a.x() - c.x()) + c2 * (b.x() - a.x())) / d);
  return {center, (a - center).squaredNorm()};
}

inline double orient2d(const Vec2& a, const Vec2& b, const Vec2& c) {
  return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

}  // namespace detail

/// Bowyer-Watson Delaunay triangulation (counter-clockwise triangles).
/// Quadratic time; intended for sheets of a few thousand points.
inline std::vector<Triangle> delaunay(const Coords2& pts) {
  const auto n = static_cast<int>(pts.rows());
  if (n < 3) throw ValidationError("delaunay needs at least 3 points");
  const Vec2 lo = pts.colwise().minCoeff().transpose();
  const Vec2 hi = pts.colwise().maxCoeff().transpose();
  const double span = std::max((hi - lo).maxCoeff(), 1e-12);
  const Vec2 mid = 0.5 * (lo + hi);

  std::vector<Vec2> v;
  v.reserve(static_cast<std::size_t>(n) + 3);
  for (int i = 0; i < n; ++i) v.emplace_back(pts.row(i).transpose());
  v.emplace_back(mid + Vec2(-20.0 * span, -10.0 * span));
  v.emplace_back(mid + Vec2(20.0 * span, -10.0 * span));
  v.emplace_back(mid + Vec2(0.0, 20.0 * span));

  struct Tri {
    Triangle t;
    detail::Circumcircle cc;
  };
  std::vector<Tri> tris{{{n, n + 1, n + 2}, detail::circumcircle(v[n], v[n + 1], v[n + 2])}};

  for (int p = 0; p < n; ++p) {
    std::map<Edge, int> boundary;
    std::vector<Tri> keep;
    keep.reserve(tris.size() + 2);
    for (const auto& tr : tris) {
      if ((v[p] - tr.cc.center).squaredNorm() < tr.cc.radius2) {
        for (int k = 0; k < 3; ++k) {
          Edge e{tr.t[k], tr.t[(k + 1) % 3]};
          Edge key{std::min(e[0], e[1]), std::max(e[0], e[1])};
          auto it = boundary.find(key);
          if (it == boundary.end()) boundary.emplace(key, e[0] == key[0] ? 1 : -1);
          else boundary.erase(it);
        }
      } else {
        keep.push_back(tr);
      }
    }
    for (const auto& [key, dir] : boundary) {
      Triangle t = dir > 0 ? Triangle{key[0], key[1], p} : Triangle{key[1], key[0], p};
      if (detail::orient2d(v[t[0]], v[t[1]], v[t[2]]) < 0.0) std::swap(t[0], t[1]);
      keep.push_back({t, detail::circumcircle(v[t[0]], v[t[1]], v[t[2]])});
    }
    tris = std::move(keep);
  }

  std::vector<Triangle> out;
  for (const auto& tr : tris) {
    if (tr.t[0] >= n || tr.t[1] >= n || tr.t[2] >= n) continue;
    if (detail::orient2d(v[tr.t[0]], v[tr.t[1]], v[tr.t[2]]) <= 1e-14 * span * span) continue;
    out.push_back(tr.t);
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Irregular triangulation of [0, side]^2 with exactly `total` vertices:
/// evenly spaced boundary vertices (corners included) and blue-noise interior
/// samples (Mitchell best-candidate), Delaunay triangulated. Deterministic for
/// a given seed.
inline FlatMesh irregular_square(int total, double side, unsigned seed) {
  const int per_side = std::max(2, static_cast<int>(std::lround(std::sqrt(static_cast<double>(total)))) - 1);
  const int boundary = 4 * per_side;
  const int interior = total - boundary;
  if (interior < 1) throw ValidationError("irregular_square: too few points");
  const double spacing = side / per_side;

  std::vector<Vec2> pts;
  pts.reserve(static_cast<std::size_t>(total));
  for (int k = 0; k < per_side; ++k) pts.emplace_back(side * k / per_side, 0.0);
  for (int k = 0; k < per_side; ++k) pts.emplace_back(side, side * k / per_side);
  for (int k = 0; k < per_side; ++k) pts.emplace_back(side - side * k / per_side, side);
  for (int k = 0; k < per_side; ++k) pts.emplace_back(0.0, side - side * k / per_side);

  std::mt19937_64 rng(seed);
  const double margin = 0.5 * spacing;
  std::uniform_real_distribution<double> coord(margin, side - margin);
  const int candidates = 16;
  for (int s = 0; s < interior; ++s) {
    Vec2 best = Vec2::Zero();
    double best_d = -1.0;
    for (int c = 0; c < candidates; ++c) {
      const Vec2 q(coord(rng), coord(rng));
      double d = std::numeric_limits<double>::infinity();
      for (const auto& p : pts) d = std::min(d, (p - q).squaredNorm());
      if (d > best_d) {
        best_d = d;
        best = q;
      }
    }
    pts.push_back(best);
  }

  FlatMesh m;
  m.points.resize(total, 2);
  for (int i = 0; i < total; ++i) m.points.row(i) = pts[static_cast<std::size_t>(i)].transpose();
  m.triangles = delaunay(m.points);

  double area = 0.0;
  for (const auto& t : m.triangles)
    area += 0.5 * detail::orient2d(pts[t[0]], pts[t[1]], pts[t[2]]);
  if (std::abs(area - side * side) > 1e-9 * side * side)
    throw ValidationError("irregular_square: triangulation does not cover the square");
  return m;
}

/// Maps flat (u, v) to origin + u * axis_u + v * axis_v.
inline RestSurface embed(const FlatMesh& mesh, const Vec3& origin, const Vec3& axis_u, const Vec3& axis_v,
                         double density) {
  RestSurface s;
  s.positions.resize(mesh.size(), 3);
  for (Eigen::Index i = 0; i < mesh.size(); ++i)
    s.positions.row(i) = (origin + mesh.points(i, 0) * axis_u + mesh.points(i, 1) * axis_v).transpose();
  s.triangles = mesh.triangles;
  s.density = density;
  return s;
}

/// Index of the vertex closest to `target` (lowest index on ties).
inline int closest_vertex(const Positions& P, const Vec3& target) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    const double d = (P.row(i).transpose() - target).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace isoplate
