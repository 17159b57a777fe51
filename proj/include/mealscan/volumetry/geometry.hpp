#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mealscan/core/types.hpp"

namespace mealscan::volumetry {

using Vec3 = std::array<double, 3>;
using Vec2 = std::array<double, 2>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) { return (1.0 / norm(a)) * a; }

struct PointCloud {
    std::vector<Vec3> points;
    std::vector<std::size_t> pixels;  // row-major index of the source pixel
    int width = 0, height = 0;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

/// Pinhole back-projection of valid-depth pixels, optionally restricted to nonzero mask pixels.
/// Throws empty_result when nothing survives.
PointCloud depth_to_cloud(const RgbdFrame& frame, const Mask* mask = nullptr);
Vec3 back_project(double u, double v, double z, const CameraIntrinsics& k);
/// Image coordinates of a camera-frame point.
Vec2 project(const Vec3& p, const CameraIntrinsics& k);
/// Unit-free ray direction through pixel coordinates (u, v), with z component 1.
inline Vec3 pixel_ray(double u, double v, const CameraIntrinsics& k) { return {(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0}; }

/// n . x + d = 0 with |n| = 1. Tray planes are oriented toward the camera, so n . x + d is the
/// height above the tray for points on the camera side.
struct Plane {
    Vec3 normal{0, 0, -1};
    double offset = 0;

    double signed_distance(const Vec3& p) const { return dot(normal, p) + offset; }
    Vec3 project(const Vec3& p) const { return p - signed_distance(p) * normal; }
    /// Parameter t at which the ray t * dir meets the plane shifted by `height` along the normal.
    double ray_parameter(const Vec3& dir, double height = 0.0) const { return (height - offset) / dot(normal, dir); }
    /// Orthonormal in-plane basis (e1, e2) with e1 x e2 = normal.
    std::array<Vec3, 2> basis() const;
    Vec2 to_2d(const Vec3& p) const;
    void validate() const;
};

/// Total-least-squares plane through the points, oriented toward the origin (camera).
Plane fit_plane_least_squares(const std::vector<Vec3>& points);

struct RansacParams {
    int iterations = 500;
    double inlier_threshold = 0.002;
    /// Consensus must reach max(min_inliers, ceil(min_inlier_fraction * N)).
    double min_inlier_fraction = 0.3;
    std::size_t min_inliers = 0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct PlaneFit {
    Plane plane;
    std::size_t inliers = 0;
    double rms_residual = 0;  // over the final inliers
};

/// Best-consensus plane from random 3-point samples, refined by least squares on its inliers.
PlaneFit fit_tray_plane(const std::vector<Vec3>& points, const RansacParams& params);

}  // namespace mealscan::volumetry
