#include "mealscan/core/types.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numbers>

namespace mealscan {

namespace {

constexpr std::array<std::string_view, kFoodClasses> kFoodNames{
    "background", "soup", "main course", "sauce", "vegetable", "side dish", "salad", "dessert"};
constexpr std::array<std::string_view, kPlateClasses> kPlateNames{
    "background", "main plate", "salad bowl", "soup bowl", "dessert bowl", "packaged container"};

}  // namespace

std::string_view food_category_name(int category) {
    if (category < 0 || category >= kFoodClasses) throw Error(ErrorKind::validation, fmt::format("food category {} out of range", category));
    return kFoodNames[category];
}

std::string_view plate_category_name(int category) {
    if (category < 0 || category >= kPlateClasses) throw Error(ErrorKind::validation, fmt::format("plate category {} out of range", category));
    return kPlateNames[category];
}

int food_category_from_name(std::string_view name) {
    for (int k = 1; k < kFoodClasses; ++k)
        if (kFoodNames[k] == name) return k;
    throw Error(ErrorKind::validation, fmt::format("unknown food category '{}'", name));
}

int plate_category_from_name(std::string_view name) {
    for (int k = 1; k < kPlateClasses; ++k)
        if (kPlateNames[k] == name) return k;
    throw Error(ErrorKind::validation, fmt::format("unknown plate category '{}'", name));
}

void CameraIntrinsics::validate(int width, int height) const {
    if (!(fx > 0) || !(fy > 0)) throw Error(ErrorKind::validation, "focal lengths must be positive");
    if (!(depth_scale > 0)) throw Error(ErrorKind::validation, "depth_scale must be positive");
    if (cx < 0 || cy < 0 || cx > width || cy > height)
        throw Error(ErrorKind::validation, fmt::format("principal point ({}, {}) outside {}x{} image", cx, cy, width, height));
}

void RgbdFrame::validate() const {
    if (!depth.same_shape(color.width, color.height))
        throw Error(ErrorKind::validation, fmt::format("color {}x{} and depth {}x{} differ in size", color.width,
                                                       color.height, depth.width, depth.height));
    intrinsics.validate(color.width, color.height);
    for (double z : depth.data)
        if (!std::isfinite(z) || z < 0) throw Error(ErrorKind::validation, "depth contains negative or non-finite values");
}

void LabelMap::validate() const {
    const int limit = class_count();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels.data[i] >= limit)
            throw Error(ErrorKind::validation,
                        fmt::format("{} label {} at pixel ({}, {}) outside 0..{}",
                                    domain == LabelDomain::food ? "food" : "plate", labels.data[i],
                                    i % labels.width, i / labels.width, limit - 1));
    }
}

double ClassProbabilities::normalization_error() const {
    double worst = 0;
    for (std::size_t p = 0; p < pixels(); ++p) {
        double sum = 0;
        for (double v : at(p)) {
            if (v < 0 || !std::isfinite(v)) return -1;
            sum += v;
        }
        worst = std::max(worst, std::abs(sum - 1.0));
    }
    return worst;
}

LabelMap ClassProbabilities::argmax(LabelDomain domain) const {
    LabelMap out{domain, Image<std::uint8_t>(width, height)};
    for (std::size_t p = 0; p < pixels(); ++p) {
        auto v = at(p);
        out.labels.data[p] = static_cast<std::uint8_t>(std::max_element(v.begin(), v.end()) - v.begin());
    }
    return out;
}

double& NutrientVector::operator[](std::size_t i) {
    switch (i) {
        case 0: return calories;
        case 1: return cho;
        case 2: return fat;
        case 3: return protein;
        case 4: return salt;
        case 5: return fiber;
        case 6: return sodium;
    }
    throw std::out_of_range("nutrient index");
}

double NutrientVector::operator[](std::size_t i) const { return const_cast<NutrientVector&>(*this)[i]; }

NutrientVector NutrientVector::scaled(double factor) const {
    NutrientVector out;
    for (std::size_t i = 0; i < kCount; ++i) out[i] = (*this)[i] * factor;
    return out;
}

NutrientVector& NutrientVector::operator+=(const NutrientVector& other) {
    for (std::size_t i = 0; i < kCount; ++i) (*this)[i] += other[i];
    return *this;
}

void PlateModel::validate() const {
    if (category < 1 || category > kPlateCategories)
        throw Error(ErrorKind::validation, fmt::format("plate model category {} out of range", category));
    if (profile.size() < 2) throw Error(ErrorKind::validation, "plate profile needs at least 2 samples");
    for (std::size_t i = 0; i < profile.size(); ++i) {
        if (profile[i][1] > 0) throw Error(ErrorKind::validation, "plate profile heights must be <= 0");
        if (i > 0 && !(profile[i][0] > profile[i - 1][0]))
            throw Error(ErrorKind::validation, "plate profile radii must be strictly increasing");
    }
    if (!(rim_radius > 0)) throw Error(ErrorKind::validation, "rim_radius must be positive");
}

double PlateModel::height_at(double r) const {
    if (r >= rim_radius) return 0.0;
    if (r <= profile.front()[0]) return profile.front()[1];
    if (r >= profile.back()[0]) {
        const auto& last = profile.back();
        if (last[0] >= rim_radius) return last[1];
        return last[1] * (rim_radius - r) / (rim_radius - last[0]);  // implicit rim sample (rim_radius, 0)
    }
    auto it = std::upper_bound(profile.begin(), profile.end(), r,
                               [](double value, const std::array<double, 2>& s) { return value < s[0]; });
    const auto& hi = *it;
    const auto& lo = *(it - 1);
    const double t = (r - lo[0]) / (hi[0] - lo[0]);
    return lo[1] + t * (hi[1] - lo[1]);
}

double PlateModel::rim_height() const {
    double deepest = 0;
    for (const auto& s : profile) deepest = std::min(deepest, s[1]);
    return -deepest;
}

double PlateModel::interior_volume() const {
    // Exact integral of 2*pi*r*(-z(r)) over each linear segment, plus the flat centre disc.
    double volume = std::numbers::pi * profile.front()[0] * profile.front()[0] * -profile.front()[1];
    auto segment = [](double r0, double z0, double r1, double z1) {
        // integral_{r0}^{r1} 2 pi r (-(z0 + (r-r0) s)) dr with s = (z1-z0)/(r1-r0)
        const double s = (z1 - z0) / (r1 - r0);
        const double a = z0 - s * r0;
        const double r0_2 = r0 * r0, r1_2 = r1 * r1;
        return -2.0 * std::numbers::pi * (a * (r1_2 - r0_2) / 2.0 + s * (r1_2 * r1 - r0_2 * r0) / 3.0);
    };
    for (std::size_t i = 1; i < profile.size(); ++i)
        volume += segment(profile[i - 1][0], profile[i - 1][1], profile[i][0], profile[i][1]);
    if (profile.back()[0] < rim_radius) volume += segment(profile.back()[0], profile.back()[1], rim_radius, 0.0);
    return volume;
}

}  // namespace mealscan
