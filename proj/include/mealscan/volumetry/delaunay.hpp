#pragma once

#include <array>
#include <vector>

#include "mealscan/volumetry/geometry.hpp"

namespace mealscan::volumetry {

// Sign-exact predicates: a floating-point filter with a rational fallback when the filter is inconclusive.
/// > 0 when a, b, c turn counterclockwise.
int orient2d(const Vec2& a, const Vec2& b, const Vec2& c);
/// > 0 when d lies strictly inside the circumcircle of the counterclockwise triangle a, b, c.
int incircle(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d);

using Triangle = std::array<int, 3>;

/// Bowyer-Watson Delaunay triangulation, inserting points in index order. Triangles are
/// counterclockwise index triples into `points`. Duplicate points are ignored; a point on the
/// circumcircle of an existing triangle does not invalidate it, so cocircular ties keep the
/// diagonal created first. Throws when fewer than 3 distinct points or all collinear.
std::vector<Triangle> delaunay_triangulate(const std::vector<Vec2>& points);

struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<Triangle> triangles;
};

}  // namespace mealscan::volumetry
