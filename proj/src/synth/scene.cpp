#include "mealscan/synth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>

#include "mealscan/core/random.hpp"

namespace mealscan::synth {

using volumetry::Plane;

double FoodShape::volume() const {
    if (empty()) return 0.0;
    switch (kind) {
        case ShapeKind::cap: return std::numbers::pi * height * height * (3 * radius - height) / 3;
        case ShapeKind::box: return length * width * height;
        case ShapeKind::cone: return std::numbers::pi * radius * radius * height / 3;
    }
    return 0.0;
}

double FoodShape::height_at(const Vec2& local) const {
    if (empty()) return 0.0;
    const double dx = local[0] - offset[0], dy = local[1] - offset[1];
    switch (kind) {
        case ShapeKind::cap: {
            const double rr = dx * dx + dy * dy;
            if (rr >= radius * radius) return 0.0;
            return std::max(0.0, std::sqrt(radius * radius - rr) - (radius - height));
        }
        case ShapeKind::box: {
            const double c = std::cos(angle), s = std::sin(angle);
            const double u = c * dx + s * dy, v = -s * dx + c * dy;
            return (std::abs(u) <= length / 2 && std::abs(v) <= width / 2) ? height : 0.0;
        }
        case ShapeKind::cone: {
            const double r = std::hypot(dx, dy);
            return r < radius ? height * (1 - r / radius) : 0.0;
        }
    }
    return 0.0;
}

double FoodShape::footprint_radius() const {
    if (empty()) return 0.0;
    switch (kind) {
        case ShapeKind::cap: return std::sqrt(height * (2 * radius - height));
        case ShapeKind::box: return std::hypot(length, width) / 2;
        case ShapeKind::cone: return radius;
    }
    return 0.0;
}

Plane SceneSpec::tray_plane() const {
    // (0, 0, -1) rotated about y, then about x.
    const double cy = std::cos(tilt_y), sy = std::sin(tilt_y), cx = std::cos(tilt_x), sx = std::sin(tilt_x);
    const Vec3 ny{-sy, 0, -cy};
    const Vec3 n{ny[0], cx * ny[1] - sx * ny[2], sx * ny[1] + cx * ny[2]};
    Plane p;
    p.normal = n;
    p.offset = -volumetry::dot(n, tray_origin());
    return p;
}

Vec3 SceneSpec::tray_origin() const { return {0, 0, tray_distance}; }

Vec3 SceneSpec::plate_center(std::size_t i) const {
    const auto [e1, e2] = tray_plane().basis();
    const auto& c = plates.at(i).center;
    return tray_origin() + c[0] * e1 + c[1] * e2;
}

std::size_t SceneSpec::item_count() const {
    std::size_t n = 0;
    for (const auto& p : plates) n += p.foods.size();
    return n;
}

namespace {

double max_food_height(const PlatePlacement& p) {
    double h = 0;
    for (const auto& f : p.foods) h = std::max(h, f.empty() ? 0.0 : f.height);
    return h;
}

}  // namespace

void SceneSpec::validate() const {
    intrinsics.validate(width, height);
    if (!(tray_distance > 0)) throw Error(ErrorKind::validation, "tray distance must be positive");
    if (!(noise_sigma >= 0) || !(dropout >= 0 && dropout < 1))
        throw Error(ErrorKind::validation, "noise sigma must be >= 0 and dropout in [0, 1)");
    const Plane tray = tray_plane();
    const auto [e1, e2] = tray.basis();
    for (std::size_t i = 0; i < plates.size(); ++i) {
        const auto& p = plates[i];
        p.model.validate();
        for (const auto& f : p.foods) {
            if (f.food_category < 1 || f.food_category > kFoodCategories)
                throw Error(ErrorKind::validation, fmt::format("plate {}: food category {} out of range", i, f.food_category));
            if (!(f.height >= 0) || !(f.radius > 0) || (f.kind == ShapeKind::box && !(f.length > 0 && f.width > 0)))
                throw Error(ErrorKind::validation, fmt::format("plate {}: bad shape parameters", i));
            if (f.kind == ShapeKind::cap && f.height > f.radius)
                throw Error(ErrorKind::validation, fmt::format("plate {}: cap taller than its sphere radius", i));
            if (std::hypot(f.offset[0], f.offset[1]) + f.footprint_radius() > p.model.rim_radius)
                throw Error(ErrorKind::validation, fmt::format("plate {}: shape does not fit within the rim", i));
        }
        for (std::size_t a = 0; a < p.foods.size(); ++a)
            for (std::size_t b = a + 1; b < p.foods.size(); ++b) {
                const auto &fa = p.foods[a], &fb = p.foods[b];
                if (std::hypot(fa.offset[0] - fb.offset[0], fa.offset[1] - fb.offset[1]) <
                    fa.footprint_radius() + fb.footprint_radius())
                    throw Error(ErrorKind::validation, fmt::format("plate {}: food shapes overlap", i));
            }
        for (std::size_t j = 0; j < i; ++j) {
            const double gap = std::hypot(p.center[0] - plates[j].center[0], p.center[1] - plates[j].center[1]);
            if (gap < p.model.rim_radius + plates[j].model.rim_radius)
                throw Error(ErrorKind::validation, fmt::format("plates {} and {} overlap", j, i));
        }
        // Silhouette samples: the rim circle at tray level and at the top of the food.
        const Vec3 c = plate_center(i);
        const double top = p.model.rim_height() + max_food_height(p);
        for (int k = 0; k < 32; ++k) {
            const double phi = 2 * std::numbers::pi * k / 32;
            for (double h : {0.0, top}) {
                const Vec3 q = c + (p.model.rim_radius * std::cos(phi)) * e1 + (p.model.rim_radius * std::sin(phi)) * e2 +
                               h * tray.normal;
                if (!(q[2] > 0)) throw Error(ErrorKind::validation, fmt::format("plate {} is behind the camera", i));
                const auto uv = volumetry::project(q, intrinsics);
                if (uv[0] < 0 || uv[1] < 0 || uv[0] > width - 1 || uv[1] > height - 1)
                    throw Error(ErrorKind::validation, fmt::format("plate {} lies outside the camera frustum", i));
            }
        }
    }
}

Rgb food_color(int category) {
    static constexpr Rgb colors[kFoodClasses] = {{0, 0, 0},     {214, 140, 40}, {150, 70, 40},  {200, 30, 30},
                                                 {40, 150, 50}, {230, 210, 90}, {120, 220, 90}, {240, 150, 200}};
    return colors[std::clamp(category, 0, kFoodClasses - 1)];
}

Rgb plate_color(int category) {
    static constexpr Rgb colors[kPlateClasses] = {
        {0, 0, 0}, {245, 245, 245}, {200, 220, 245}, {245, 230, 200}, {220, 200, 240}, {170, 170, 180}};
    return colors[std::clamp(category, 0, kPlateClasses - 1)];
}

Rgb tray_color() { return {60, 90, 130}; }

namespace {

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    int food = 0, plate = 0;
    Rgb color{};
};

class Renderer {
public:
    explicit Renderer(const SceneSpec& spec) : spec_(spec), tray_(spec.tray_plane()) {
        const auto b = tray_.basis();
        e1_ = b[0];
        e2_ = b[1];
        for (std::size_t i = 0; i < spec.plates.size(); ++i) {
            Local l;
            l.center = spec.plate_center(i);
            l.rim_h = spec.plates[i].model.rim_height();
            l.top = l.rim_h + max_food_height(spec.plates[i]) + 1e-3;
            locals_.push_back(l);
        }
    }

    Hit trace(const Vec3& dir) const {
        Hit best;
        const double nd = volumetry::dot(tray_.normal, dir);
        if (nd >= 0) return best;
        best.t = tray_.ray_parameter(dir);
        best.color = tray_color();
        for (std::size_t i = 0; i < locals_.size(); ++i) trace_plate(i, dir, nd, best);
        return best;
    }

private:
    struct Local {
        Vec3 center;
        double rim_h = 0, top = 0;
    };

    double surface(const PlatePlacement& p, const Local& l, const Vec2& q, int* food) const {
        const double r = std::hypot(q[0], q[1]);
        if (p.model.lidded) {
            if (food) *food = p.foods.empty() ? 0 : p.foods.front().food_category;
            return l.rim_h;
        }
        double h = 0;
        int label = 0;
        for (const auto& f : p.foods) {
            const double fh = f.height_at(q);
            if (fh > h) {
                h = fh;
                label = f.food_category;
            }
        }
        if (food) *food = label;
        return l.rim_h + p.model.height_at(r) + h;
    }

    void trace_plate(std::size_t i, const Vec3& dir, double nd, Hit& best) const {
        const auto& p = spec_.plates[i];
        const auto& l = locals_[i];
        // Plate-local 2D coordinates are affine in t: q(t) = t * a - b.
        const double a1 = volumetry::dot(dir, e1_), a2 = volumetry::dot(dir, e2_);
        const double b1 = volumetry::dot(l.center, e1_), b2 = volumetry::dot(l.center, e2_);
        const double A = a1 * a1 + a2 * a2, B = a1 * b1 + a2 * b2, C = b1 * b1 + b2 * b2;
        const double R = p.model.rim_radius;
        double c0, c1;
        if (A < 1e-18) {
            if (C > R * R) return;
            c0 = -std::numeric_limits<double>::infinity();
            c1 = std::numeric_limits<double>::infinity();
        } else {
            const double disc = B * B - A * (C - R * R);
            if (disc <= 0) return;
            const double s = std::sqrt(disc);
            c0 = (B - s) / A;
            c1 = (B + s) / A;
        }
        auto height = [&](double t) { return t * nd + tray_.offset; };
        const double t_top = (l.top - tray_.offset) / nd;
        const double t_floor = -tray_.offset / nd;
        const double t0 = std::max(c0, t_top), t1 = std::min(c1, t_floor);
        if (!(t0 < t1) || t0 > best.t) return;
        // Entering through the side wall below the rim: the plate's outside is not modelled.
        if (height(t0) < l.rim_h - 1e-12) return;

        auto local = [&](double t) { return Vec2{t * a1 - b1, t * a2 - b2}; };
        auto gap = [&](double t) { return height(t) - surface(p, l, local(t), nullptr); };

        double ta = t0, tb = t0;
        if (gap(t0) > 0) {
            const double step = 5e-4 / volumetry::norm(dir);
            bool found = false;
            for (double t = t0; t < t1;) {
                const double next = std::min(t + step, t1);
                if (gap(next) <= 0) {
                    ta = t;
                    tb = next;
                    found = true;
                    break;
                }
                t = next;
            }
            if (!found) {
                // the floor under the plate is part of its surface
                if (t1 < t_floor) return;
                ta = tb = t_floor;
            }
            for (int it = 0; it < 200 && tb - ta > 1e-13; ++it) {
                const double mid = 0.5 * (ta + tb);
                if (gap(mid) > 0)
                    ta = mid;
                else
                    tb = mid;
            }
        }
        if (tb > best.t) return;  // the plate wins ties with the tray floor
        int food = 0;
        surface(p, l, local(tb), &food);
        best.t = tb;
        best.plate = p.model.category;
        best.food = food;
        best.color = food ? food_color(food) : plate_color(p.model.category);
    }

    const SceneSpec& spec_;
    Plane tray_;
    Vec3 e1_, e2_;
    std::vector<Local> locals_;
};

}  // namespace

std::pair<RgbdFrame, SceneTruth> render_scene(const SceneSpec& spec) {
    spec.validate();
    const int w = spec.width, h = spec.height;
    RgbdFrame frame;
    frame.color = ColorImage(w, h);
    frame.depth = Image<double>(w, h, 0.0);
    frame.intrinsics = spec.intrinsics;
    SceneTruth truth;
    truth.food = LabelMap{LabelDomain::food, Image<std::uint8_t>(w, h, 0)};
    truth.plate = LabelMap{LabelDomain::plate, Image<std::uint8_t>(w, h, 0)};
    truth.tray = spec.tray_plane();

    const Renderer renderer(spec);
#pragma omp parallel for schedule(dynamic, 4)
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const Hit hit = renderer.trace(volumetry::pixel_ray(x, y, spec.intrinsics));
            if (!std::isfinite(hit.t) || hit.t <= 0) continue;
            frame.depth(x, y) = hit.t;  // ray z component is 1
            auto* px = frame.color.pixel(x, y);
            for (int c = 0; c < 3; ++c) px[c] = hit.color[c];
            truth.food.labels(x, y) = std::uint8_t(hit.food);
            truth.plate.labels(x, y) = std::uint8_t(hit.plate);
        }

    for (std::size_t i = 0; i < spec.plates.size(); ++i) {
        truth.poses.push_back({spec.plate_center(i), truth.tray.normal});
        for (const auto& f : spec.plates[i].foods) truth.item_volume_ml.push_back(f.volume() * 1e6);
    }

    if (spec.noise_sigma > 0 || spec.dropout > 0) {
        Rng rng(spec.seed);
        for (double& z : frame.depth.data) {
            if (!(z > 0)) continue;
            if (spec.noise_sigma > 0) z = std::max(1e-4, z + rng.normal(0.0, spec.noise_sigma));
            if (spec.dropout > 0 && rng.bernoulli(spec.dropout)) z = 0;
        }
    }
    return {std::move(frame), std::move(truth)};
}

namespace {

double cap_volume(double R, double h) { return std::numbers::pi * h * h * (3 * R - h) / 3; }

}  // namespace

SceneSpec make_eaten_scene(const SceneSpec& spec, const std::vector<double>& eaten_fraction) {
    if (eaten_fraction.size() != spec.item_count())
        throw Error(ErrorKind::validation,
                    fmt::format("{} eaten fractions for {} items", eaten_fraction.size(), spec.item_count()));
    SceneSpec out = spec;
    std::size_t k = 0;
    for (auto& p : out.plates)
        for (auto& f : p.foods) {
            const double frac = eaten_fraction[k++];
            if (!(frac >= 0 && frac <= 1)) throw Error(ErrorKind::validation, "eaten fraction outside [0, 1]");
            if (frac == 0) continue;
            if (frac == 1) {
                f.height = 0;
                continue;
            }
            const double keep = 1 - frac;
            switch (f.kind) {
                case ShapeKind::box: f.height *= keep; break;
                case ShapeKind::cone: {
                    const double s = std::cbrt(keep);
                    f.height *= s;
                    f.radius *= s;
                    break;
                }
                case ShapeKind::cap: {
                    // cap volume is increasing in h on [0, R]; bisect to the last representable step
                    const double target = keep * cap_volume(f.radius, f.height);
                    double lo = 0, hi = f.height;
                    for (int it = 0; it < 200; ++it) {
                        const double mid = 0.5 * (lo + hi);
                        if (mid <= lo || mid >= hi) break;
                        (cap_volume(f.radius, mid) < target ? lo : hi) = mid;
                    }
                    f.height = 0.5 * (lo + hi);
                    break;
                }
            }
        }
    return out;
}

}  // namespace mealscan::synth
