#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mealscan/volumetry/delaunay.hpp"
#include "mealscan/volumetry/geometry.hpp"

namespace mealscan::volumetry {

struct PlatePose {
    Vec3 center{0, 0, 0};       // on the tray plane
    Vec3 orientation{0, 0, -1};  // tray normal
};

/// Height of the surface food rests on, measured above the tray along its normal.
struct BaseSurface {
    Plane tray;
    std::optional<PlateModel> model;  // none: food sits on the tray itself
    PlatePose pose;

    static BaseSurface flat(const Plane& tray);
    /// Radial distance of p's tray projection from the plate center.
    double radial_distance(const Vec3& p) const;
    /// rim_height + profile(r); profile is 0 from the rim outward.
    double height(const Vec3& p) const;
};

/// Plate center from the plate-mask silhouette: pixel rays are intersected with the rim plane
/// (parallel to the tray at rim height), weighted by pixel footprint area, averaged, and dropped
/// onto the tray. Orientation is the tray normal.
PlatePose estimate_plate_pose(const Mask& plate_mask, const CameraIntrinsics& intrinsics, const PlateModel& model,
                              const Plane& tray);
BaseSurface plate_base_surface(const Mask& plate_mask, const CameraIntrinsics& intrinsics, const PlateModel& model,
                               const Plane& tray);
/// Fraction of cloud points lying beyond the plate rim.
double beyond_rim_fraction(const BaseSurface& base, const PointCloud& cloud);

struct VolumeEstimate {
    double volume_ml = 0;
    std::size_t mask_pixels = 0;
    std::size_t valid_points = 0;
    std::size_t components = 0;
    double invalid_fraction = 0;
    double beyond_rim_fraction = 0;
    TriMesh mesh;  // food surface, all components
};

/// Sum over the Delaunay triangles of `flat` of projected area x mean vertex height, in m^3.
double height_field_volume(const std::vector<Vec2>& flat, const std::vector<double>& heights,
                           std::vector<Triangle>* triangles = nullptr);

/// Triangulates each 8-connected component of the mask in tray-plane coordinates and sums
/// prism volumes: projected area x mean height over the base (heights floored at 0).
VolumeEstimate item_volume(const RgbdFrame& frame, const Mask& food_mask, const BaseSurface& base, const Plane& tray);

struct ItemVolumes {
    int food_category = 0;
    int plate_category = 0;
    double before_ml = 0;
    double after_ml = 0;
};

struct ConsumedVolume {
    double consumed_ml = 0;
    double ratio = 0;
    bool heuristic = false;  // ratio borrowed from the salad items
};

/// ratio = clamp(1 - after / before, 0, 1). Items in packaged containers show no depth change, so
/// they take the pooled salad ratio (0 with a warning when there is no salad).
std::vector<ConsumedVolume> consumed_volumes(const std::vector<ItemVolumes>& items, std::vector<std::string>& warnings);

nlohmann::json to_json(const Plane& plane);
nlohmann::json to_json(const PlatePose& pose);
/// OBJ-style text: "v x y z" lines then 1-based "f i j k" lines.
void write_mesh(const std::filesystem::path& path, const TriMesh& mesh);

}  // namespace mealscan::volumetry
