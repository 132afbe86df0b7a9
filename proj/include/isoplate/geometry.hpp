#pragma once

// Meshless discretization of a flat rest plate: sample-point neighborhoods,
// their flat local parameterizations, lumped masses and the cotangent
// Laplacian used by the quadratic bending model.

#include "isoplate/errors.hpp"
#include "isoplate/types.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <string>
#include <vector>

namespace isoplate {

struct RestSurface {
  Positions positions;
  std::vector<Triangle> triangles;
  /// Area density in kg/m^2 (volumetric density times thickness).
  double density = 1.0;
  /// Optional explicit flat coordinates (sewing patterns). When present they
  /// replace plane fitting in local_parameterization.
  std::optional<Coords2> rest_uv;

  Eigen::Index size() const { return positions.rows(); }
  bool has_triangles() const { return !triangles.empty(); }

  void validate() const {
    if (!positions.allFinite()) throw ValidationError("rest positions must be finite");
    if (!(density > 0.0) || !std::isfinite(density))
      throw ValidationError("material.area_density must be > 0");
    if (rest_uv && rest_uv->rows() != size())
      throw ValidationError("rest_uv must have one row per point");
    const int n = static_cast<int>(size());
    for (std::size_t t = 0; t < triangles.size(); ++t) {
      for (int v : triangles[t]) {
        if (v < 0 || v >= n)
          throw ValidationError("triangle " + std::to_string(t) + " has out-of-range index");
      }
      if (triangle_area(triangles[t]) <= 1e-12)
        throw ValidationError("triangle " + std::to_string(t) + " is degenerate");
    }
  }

  double triangle_area(const Triangle& t) const {
    const Vec3 a = positions.row(t[0]);
    const Vec3 b = positions.row(t[1]);
    const Vec3 c = positions.row(t[2]);
    return 0.5 * (b - a).cross(c - a).norm();
  }

  double total_area() const {
    double area = 0.0;
    for (const auto& t : triangles) area += triangle_area(t);
    return area;
  }
};

/// Unique undirected edges of a triangulation, sorted lexicographically.
inline std::vector<Edge> mesh_edges(const std::vector<Triangle>& triangles) {
  std::vector<Edge> edges;
  edges.reserve(3 * triangles.size());
  for (const auto& t : triangles) {
    for (int k = 0; k < 3; ++k) {
      int a = t[k], b = t[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      edges.push_back({a, b});
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

/// Per-vertex flag: true when the vertex lies on an edge with a single
/// incident triangle.
inline std::vector<bool> boundary_vertices(const std::vector<Triangle>& triangles,
                                           Eigen::Index n) {
  std::map<Edge, int> count;
  for (const auto& t : triangles) {
    for (int k = 0; k < 3; ++k) {
      int a = t[k], b = t[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      ++count[{a, b}];
    }
  }
  std::vector<bool> boundary(static_cast<std::size_t>(n), false);
  for (const auto& [e, c] : count) {
    if (c == 1) boundary[e[0]] = boundary[e[1]] = true;
  }
  return boundary;
}

struct Frame {
  Vec3 origin = Vec3::Zero();
  Vec3 tangent_u = Vec3::UnitX();
  Vec3 tangent_v = Vec3::UnitY();
};

struct Neighborhood {
  int center = 0;
  std::vector<int> members;
  std::vector<Vec2> local_coords;
  Frame frame;

  std::size_t size() const { return members.size(); }
};

struct NeighborhoodStrategy {
  enum class Kind { Radius, Knn, GraphDistance };
  Kind kind = Kind::GraphDistance;
  double parameter = 1.0;

  static NeighborhoodStrategy radius(double r) { return {Kind::Radius, r}; }
  static NeighborhoodStrategy knn(int k) { return {Kind::Knn, static_cast<double>(k)}; }
  static NeighborhoodStrategy graph_distance(int d) {
    return {Kind::GraphDistance, static_cast<double>(d)};
  }
};

namespace detail {

inline std::vector<std::vector<int>> vertex_adjacency(const std::vector<Triangle>& triangles,
                                                      Eigen::Index n) {
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (const auto& e : mesh_edges(triangles)) {
    adj[e[0]].push_back(e[1]);
    adj[e[1]].push_back(e[0]);
  }
  for (auto& a : adj) std::sort(a.begin(), a.end());
  return adj;
}

}  // namespace detail

/// Membership only; local coordinates are filled by local_parameterization.
/// Radius and graph-distance members are listed by ascending index, knn
/// members by ascending (distance, index).
inline std::vector<Neighborhood> build_neighborhoods(const RestSurface& surface,
                                                     const NeighborhoodStrategy& strategy) {
  if (!(strategy.parameter > 0.0)) throw ValidationError("neighborhoods.parameter must be > 0");
  const Eigen::Index n = surface.size();
  const Positions& P = surface.positions;
  std::vector<Neighborhood> out(static_cast<std::size_t>(n));

  switch (strategy.kind) {
    case NeighborhoodStrategy::Kind::Radius: {
      const double r2 = strategy.parameter * strategy.parameter;
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
          if (j != i && (P.row(j) - P.row(i)).squaredNorm() <= r2)
            out[i].members.push_back(static_cast<int>(j));
        }
      }
      break;
    }
    case NeighborhoodStrategy::Kind::Knn: {
      const auto k = static_cast<std::size_t>(std::llround(strategy.parameter));
      std::vector<std::pair<double, int>> cand;
      for (Eigen::Index i = 0; i < n; ++i) {
        cand.clear();
        for (Eigen::Index j = 0; j < n; ++j) {
          if (j != i) cand.emplace_back((P.row(j) - P.row(i)).squaredNorm(), static_cast<int>(j));
        }
        const std::size_t take = std::min(k, cand.size());
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());
        for (std::size_t m = 0; m < take; ++m) out[i].members.push_back(cand[m].second);
      }
      break;
    }
    case NeighborhoodStrategy::Kind::GraphDistance: {
      if (!surface.has_triangles()) throw MissingTriangulation();
      const int depth = static_cast<int>(std::llround(strategy.parameter));
      const auto adj = detail::vertex_adjacency(surface.triangles, n);
      std::vector<int> dist(static_cast<std::size_t>(n), -1);
      for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<int> touched{static_cast<int>(i)};
        std::queue<int> q;
        q.push(static_cast<int>(i));
        dist[i] = 0;
        while (!q.empty()) {
          const int u = q.front();
          q.pop();
          if (dist[u] == depth) continue;
          for (int v : adj[u]) {
            if (dist[v] < 0) {
              dist[v] = dist[u] + 1;
              touched.push_back(v);
              q.push(v);
            }
          }
        }
        for (int v : touched) {
          if (v != i) out[i].members.push_back(v);
          dist[v] = -1;
        }
        std::sort(out[i].members.begin(), out[i].members.end());
      }
      break;
    }
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    out[i].center = static_cast<int>(i);
    if (out[i].members.size() < 2) throw NeighborhoodTooSmall(static_cast<int>(i));
  }
  return out;
}

/// Fits a plane to the rest positions of the neighborhood (center included)
/// and projects member offsets onto it. The frame is oriented so that the
/// in-plane axes follow the principal directions with a deterministic sign.
inline Neighborhood local_parameterization(const RestSurface& surface, Neighborhood nbhd) {
  const Positions& P = surface.positions;
  const Vec3 center = P.row(nbhd.center);

  Vec3 mean = center;
  for (int j : nbhd.members) mean += P.row(j).transpose();
  mean /= static_cast<double>(nbhd.members.size() + 1);
  Mat3 cov = (center - mean) * (center - mean).transpose();
  for (int j : nbhd.members) {
    const Vec3 d = P.row(j).transpose() - mean;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  Vec3 u = eig.eigenvectors().col(2);
  Vec3 v = eig.eigenvectors().col(1);
  auto orient = [](Vec3 a) {
    Eigen::Index k;
    a.cwiseAbs().maxCoeff(&k);
    return a(k) < 0.0 ? Vec3(-a) : a;
  };
  u = orient(u);
  v = orient(v - v.dot(u) * u).normalized();

  nbhd.frame = {center, u, v};
  nbhd.local_coords.clear();
  nbhd.local_coords.reserve(nbhd.members.size());
  for (int j : nbhd.members) {
    if (surface.rest_uv) {
      nbhd.local_coords.emplace_back((surface.rest_uv->row(j) - surface.rest_uv->row(nbhd.center)).transpose());
    } else {
      const Vec3 d = P.row(j).transpose() - center;
      nbhd.local_coords.emplace_back(d.dot(u), d.dot(v));
    }
  }

  Mat2 cov2 = Mat2::Zero();
  for (const Vec2& x : nbhd.local_coords) cov2 += x * x.transpose();
  Eigen::SelfAdjointEigenSolver<Mat2> eig2(cov2);
  const double lo = eig2.eigenvalues()(0);
  const double hi = eig2.eigenvalues()(1);
  if (!(hi > 0.0) || !(lo > 0.0) || hi / lo > 1e12) throw DegenerateNeighborhood(nbhd.center);
  return nbhd;
}

struct LumpedMasses {
  Eigen::VectorXd masses;

  double total() const { return masses.sum(); }
};

/// m_i = density * (1/3) * sum of incident triangle areas.
inline LumpedMasses compute_lumped_masses(const RestSurface& surface) {
  if (!surface.has_triangles()) throw MissingTriangulation();
  LumpedMasses out{Eigen::VectorXd::Zero(surface.size())};
  for (const auto& t : surface.triangles) {
    const double share = surface.density * surface.triangle_area(t) / 3.0;
    for (int v : t) out.masses(v) += share;
  }
  for (Eigen::Index i = 0; i < out.masses.size(); ++i) {
    if (!(out.masses(i) > 0.0))
      throw ValidationError("point " + std::to_string(i) + " has no incident triangle (zero mass)");
  }
  return out;
}

struct LaplacianOperator {
  /// (L Y)_i = sum_j w_ij (Y_j - Y_i) with cotangent weights w_ij; boundary rows are zero.
  SparseMatrix L;
  std::vector<bool> interior_mask;
};

inline LaplacianOperator assemble_laplacian(const RestSurface& surface) {
  if (!surface.has_triangles()) throw MissingTriangulation();
  const Eigen::Index n = surface.size();
  const auto boundary = boundary_vertices(surface.triangles, n);
  const Positions& P = surface.positions;

  std::vector<Triplet> trip;
  trip.reserve(12 * surface.triangles.size());
  for (const auto& t : surface.triangles) {
    for (int k = 0; k < 3; ++k) {
      const int a = t[k], b = t[(k + 1) % 3], c = t[(k + 2) % 3];
      const Vec3 u = P.row(a) - P.row(c);
      const Vec3 v = P.row(b) - P.row(c);
      const double w = 0.5 * u.dot(v) / u.cross(v).norm();
      if (!boundary[a]) {
        trip.emplace_back(a, b, w);
        trip.emplace_back(a, a, -w);
      }
      if (!boundary[b]) {
        trip.emplace_back(b, a, w);
        trip.emplace_back(b, b, -w);
      }
    }
  }
  LaplacianOperator out;
  out.L.resize(n, n);
  out.L.setFromTriplets(trip.begin(), trip.end());
  out.L.makeCompressed();
  out.interior_mask.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out.interior_mask[i] = !boundary[i];
  return out;
}

}  // namespace isoplate
