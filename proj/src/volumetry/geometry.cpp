#include "mealscan/volumetry/geometry.hpp"

#include <algorithm>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "mealscan/core/random.hpp"

namespace mealscan::volumetry {

Vec3 back_project(double u, double v, double z, const CameraIntrinsics& k) {
    return {(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z};
}

Vec2 project(const Vec3& p, const CameraIntrinsics& k) {
    return {k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy};
}

PointCloud depth_to_cloud(const RgbdFrame& frame, const Mask* mask) {
    frame.intrinsics.validate(frame.width(), frame.height());
    if (mask && !mask->same_shape(frame.width(), frame.height()))
        throw Error(ErrorKind::validation, "mask and frame differ in size");
    PointCloud cloud;
    cloud.width = frame.width();
    cloud.height = frame.height();
    for (int y = 0; y < frame.height(); ++y)
        for (int x = 0; x < frame.width(); ++x) {
            if (mask && !(*mask)(x, y)) continue;
            const double z = frame.depth(x, y);
            if (!(z > 0) || !std::isfinite(z)) continue;
            cloud.points.push_back(back_project(x, y, z, frame.intrinsics));
            cloud.pixels.push_back(std::size_t(y) * frame.width() + x);
        }
    if (cloud.empty()) throw Error(ErrorKind::empty_result, "no valid depth under the mask");
    return cloud;
}

std::array<Vec3, 2> Plane::basis() const {
    const Vec3 axis = std::abs(normal[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    const Vec3 e2 = normalized(cross(normal, axis));
    const Vec3 e1 = cross(e2, normal);
    return {e1, e2};
}

Vec2 Plane::to_2d(const Vec3& p) const {
    const auto [e1, e2] = basis();
    return {dot(p, e1), dot(p, e2)};
}

void Plane::validate() const {
    if (std::abs(norm(normal) - 1.0) > 1e-9) throw Error(ErrorKind::validation, "plane normal is not unit length");
    if (!std::isfinite(offset)) throw Error(ErrorKind::validation, "plane offset is not finite");
}

Plane fit_plane_least_squares(const std::vector<Vec3>& points) {
    if (points.size() < 3) throw Error(ErrorKind::validation, "plane fit needs at least 3 points");
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (const auto& p : points) centroid += Eigen::Vector3d(p[0], p[1], p[2]);
    centroid /= double(points.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& p : points) {
        const Eigen::Vector3d q = Eigen::Vector3d(p[0], p[1], p[2]) - centroid;
        cov += q * q.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    const auto& vals = eig.eigenvalues();
    if (!(vals[1] > 1e-12 * std::max(vals[2], 1e-300)))
        throw Error(ErrorKind::validation, "plane fit points are collinear");
    Eigen::Vector3d n = eig.eigenvectors().col(0).normalized();
    Plane plane;
    plane.normal = {n[0], n[1], n[2]};
    plane.offset = -n.dot(centroid);
    if (plane.offset < 0) {
        plane.normal = -1.0 * plane.normal;
        plane.offset = -plane.offset;
    }
    return plane;
}

void RansacParams::validate() const {
    if (iterations <= 0) throw Error(ErrorKind::validation, "ransac iterations must be positive");
    if (!(inlier_threshold > 0)) throw Error(ErrorKind::validation, "ransac threshold must be positive");
    if (!(min_inlier_fraction >= 0 && min_inlier_fraction <= 1))
        throw Error(ErrorKind::validation, "ransac inlier fraction must lie in [0, 1]");
}

namespace {

std::size_t count_inliers(const std::vector<Vec3>& points, const Plane& plane, double threshold,
                          std::vector<Vec3>* keep = nullptr) {
    std::size_t n = 0;
    for (const auto& p : points)
        if (std::abs(plane.signed_distance(p)) < threshold) {
            ++n;
            if (keep) keep->push_back(p);
        }
    return n;
}

}  // namespace

PlaneFit fit_tray_plane(const std::vector<Vec3>& points, const RansacParams& params) {
    params.validate();
    if (points.size() < 3) throw Error(ErrorKind::validation, "tray plane fit needs at least 3 points");
    const std::size_t needed =
        std::max<std::size_t>({params.min_inliers, 3,
                               std::size_t(std::ceil(params.min_inlier_fraction * double(points.size())))});
    Rng rng(params.seed);
    std::size_t best = 0;
    Plane best_plane;
    bool any = false;
    for (int it = 0; it < params.iterations; ++it) {
        const auto i = rng.below(points.size()), j = rng.below(points.size()), k = rng.below(points.size());
        if (i == j || j == k || i == k) continue;
        const Vec3 nrm = cross(points[j] - points[i], points[k] - points[i]);
        const double len = norm(nrm);
        const double scale = norm(points[j] - points[i]) * norm(points[k] - points[i]);
        if (!(len > 1e-12 * scale) || len == 0) continue;
        Plane candidate;
        candidate.normal = (1.0 / len) * nrm;
        candidate.offset = -dot(candidate.normal, points[i]);
        const std::size_t n = count_inliers(points, candidate, params.inlier_threshold);
        if (!any || n > best) {
            best = n;
            best_plane = candidate;
            any = true;
        }
    }
    if (!any) throw Error(ErrorKind::validation, "ransac found no non-degenerate sample (collinear points?)");
    if (best < needed)
        throw Error(ErrorKind::validation,
                    fmt::format("ransac consensus too small: {} inliers of {} points, need {}", best, points.size(), needed));

    std::vector<Vec3> inliers;
    count_inliers(points, best_plane, params.inlier_threshold, &inliers);
    PlaneFit fit;
    fit.plane = fit_plane_least_squares(inliers);
    inliers.clear();
    fit.inliers = count_inliers(points, fit.plane, params.inlier_threshold, &inliers);
    if (fit.inliers >= 3) fit.plane = fit_plane_least_squares(inliers);
    double ss = 0;
    for (const auto& p : inliers) ss += fit.plane.signed_distance(p) * fit.plane.signed_distance(p);
    fit.rms_residual = inliers.empty() ? 0 : std::sqrt(ss / double(inliers.size()));
    return fit;
}

}  // namespace mealscan::volumetry
