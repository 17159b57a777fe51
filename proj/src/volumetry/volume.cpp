#include "mealscan/volumetry/volume.hpp"

#include <algorithm>
#include <sstream>

#include <fmt/format.h>

#include "mealscan/core/components.hpp"
#include "mealscan/core/io.hpp"

namespace mealscan::volumetry {

BaseSurface BaseSurface::flat(const Plane& tray) {
    BaseSurface b;
    b.tray = tray;
    b.pose.orientation = tray.normal;
    return b;
}

double BaseSurface::radial_distance(const Vec3& p) const { return norm(tray.project(p) - pose.center); }

double BaseSurface::height(const Vec3& p) const {
    if (!model) return 0.0;
    return model->rim_height() + model->height_at(radial_distance(p));
}

PlatePose estimate_plate_pose(const Mask& plate_mask, const CameraIntrinsics& k, const PlateModel& model,
                              const Plane& tray) {
    model.validate();
    tray.validate();
    const double rim = model.rim_height();
    auto hit = [&](double u, double v) {
        const Vec3 dir = pixel_ray(u, v, k);
        return tray.ray_parameter(dir, rim) * dir;
    };
    Vec3 sum{0, 0, 0};
    double weight = 0;
    for (int y = 0; y < plate_mask.height; ++y)
        for (int x = 0; x < plate_mask.width; ++x) {
            if (!plate_mask(x, y)) continue;
            const Vec3 a = hit(x - 0.5, y - 0.5), b = hit(x + 0.5, y - 0.5);
            const Vec3 c = hit(x + 0.5, y + 0.5), d = hit(x - 0.5, y + 0.5);
            const double area = 0.5 * norm(cross(c - a, d - b));
            sum = sum + area * hit(x, y);
            weight += area;
        }
    if (!(weight > 0)) throw Error(ErrorKind::validation, "empty plate mask");
    PlatePose pose;
    pose.center = tray.project((1.0 / weight) * sum);
    pose.orientation = tray.normal;
    return pose;
}

BaseSurface plate_base_surface(const Mask& plate_mask, const CameraIntrinsics& intrinsics, const PlateModel& model,
                               const Plane& tray) {
    BaseSurface b;
    b.tray = tray;
    b.model = model;
    b.pose = estimate_plate_pose(plate_mask, intrinsics, model, tray);
    return b;
}

double beyond_rim_fraction(const BaseSurface& base, const PointCloud& cloud) {
    if (!base.model || cloud.empty()) return 0.0;
    std::size_t beyond = 0;
    for (const auto& p : cloud.points) beyond += base.radial_distance(p) >= base.model->rim_radius;
    return double(beyond) / double(cloud.size());
}

double height_field_volume(const std::vector<Vec2>& flat, const std::vector<double>& heights,
                           std::vector<Triangle>* triangles) {
    if (flat.size() != heights.size()) throw Error(ErrorKind::validation, "height field size mismatch");
    auto tris = delaunay_triangulate(flat);
    double volume = 0;
    for (const auto& t : tris) {
        const Vec2 &a = flat[t[0]], &b = flat[t[1]], &c = flat[t[2]];
        const double area = 0.5 * std::abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]));
        volume += area * (heights[t[0]] + heights[t[1]] + heights[t[2]]) / 3.0;
    }
    if (triangles) *triangles = std::move(tris);
    return volume;
}

VolumeEstimate item_volume(const RgbdFrame& frame, const Mask& food_mask, const BaseSurface& base, const Plane& tray) {
    tray.validate();
    if (!food_mask.same_shape(frame.width(), frame.height()))
        throw Error(ErrorKind::validation, "food mask and frame differ in size");
    VolumeEstimate est;
    const auto comps = connected_components(food_mask);
    for (const auto& members : comps.pixels) est.mask_pixels += members.size();
    if (est.mask_pixels == 0) throw Error(ErrorKind::empty_result, "empty food mask");

    double volume = 0;
    std::size_t total_valid = 0;
    std::size_t beyond = 0;
    for (const auto& members : comps.pixels) {
        std::vector<Vec3> pts;
        std::vector<Vec2> flat;
        std::vector<double> heights;
        for (auto idx : members) {
            const int x = int(idx % std::size_t(frame.width())), y = int(idx / std::size_t(frame.width()));
            const double z = frame.depth(x, y);
            if (!(z > 0) || !std::isfinite(z)) continue;
            const Vec3 p = back_project(x, y, z, frame.intrinsics);
            pts.push_back(p);
            flat.push_back(tray.to_2d(p));
            heights.push_back(std::max(0.0, tray.signed_distance(p) - base.height(p)));
            if (base.model && base.radial_distance(p) >= base.model->rim_radius) ++beyond;
        }
        total_valid += pts.size();
        if (pts.size() < 3) continue;
        std::vector<Triangle> tris;
        try {
            volume += height_field_volume(flat, heights, &tris);
        } catch (const Error&) {
            continue;  // collinear strip: no area
        }
        ++est.components;
        const int offset = int(est.mesh.vertices.size());
        for (const auto& t : tris) est.mesh.triangles.push_back({t[0] + offset, t[1] + offset, t[2] + offset});
        est.mesh.vertices.insert(est.mesh.vertices.end(), pts.begin(), pts.end());
    }
    if (total_valid < 3) throw Error(ErrorKind::empty_result, "insufficient valid depth under the food mask");
    est.valid_points = total_valid;
    est.invalid_fraction = 1.0 - double(total_valid) / double(est.mask_pixels);
    est.beyond_rim_fraction = double(beyond) / double(total_valid);
    est.volume_ml = volume * 1e6;
    return est;
}

std::vector<ConsumedVolume> consumed_volumes(const std::vector<ItemVolumes>& items, std::vector<std::string>& warnings) {
    std::vector<ConsumedVolume> out(items.size());
    double salad_before = 0, salad_consumed = 0;
    bool has_salad = false;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& it = items[i];
        if (!(it.before_ml > 0))
            throw Error(ErrorKind::validation,
                        fmt::format("empty served item {} ({})", i + 1, food_category_name(it.food_category)));
        out[i].ratio = std::clamp(1.0 - it.after_ml / it.before_ml, 0.0, 1.0);
        out[i].consumed_ml = out[i].ratio * it.before_ml;
        if (it.food_category == food::salad && it.plate_category != plate::packaged) {
            has_salad = true;
            salad_before += it.before_ml;
            salad_consumed += out[i].consumed_ml;
        }
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i].plate_category != plate::packaged) continue;
        out[i].heuristic = true;
        if (has_salad) {
            out[i].ratio = std::clamp(salad_consumed / salad_before, 0.0, 1.0);
        } else {
            out[i].ratio = 0.0;
            warnings.push_back(fmt::format("item {} ({}) is in a packaged container and no salad was served; "
                                           "consumption assumed 0",
                                           i + 1, food_category_name(items[i].food_category)));
        }
        out[i].consumed_ml = out[i].ratio * items[i].before_ml;
    }
    return out;
}

nlohmann::json to_json(const Plane& plane) { return {{"normal", plane.normal}, {"offset", plane.offset}}; }

nlohmann::json to_json(const PlatePose& pose) { return {{"center", pose.center}, {"orientation", pose.orientation}}; }

void write_mesh(const std::filesystem::path& path, const TriMesh& mesh) {
    std::ostringstream os;
    os.precision(17);
    for (const auto& v : mesh.vertices) os << "v " << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
    for (const auto& t : mesh.triangles) os << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
    write_text_atomic(path, os.str());
}

}  // namespace mealscan::volumetry
