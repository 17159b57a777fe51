#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mealscan {

/// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind { io, validation, training, empty_result };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline constexpr int kFoodClasses = 8;   // background + 7 hyper categories
inline constexpr int kPlateClasses = 6;  // background + 5 plate types
inline constexpr int kFoodCategories = kFoodClasses - 1;
inline constexpr int kPlateCategories = kPlateClasses - 1;

namespace food {
inline constexpr int soup = 1, main_course = 2, sauce = 3, vegetable = 4, side_dish = 5, salad = 6,
                     dessert = 7;
}
namespace plate {
inline constexpr int main_plate = 1, salad_bowl = 2, soup_bowl = 3, dessert_bowl = 4, packaged = 5;
}

std::string_view food_category_name(int category);
std::string_view plate_category_name(int category);
/// Inverse of the name functions; throws validation Error for unknown names.
int food_category_from_name(std::string_view name);
int plate_category_from_name(std::string_view name);

struct CameraIntrinsics {
    double fx = 525.0;
    double fy = 525.0;
    double cx = 319.5;
    double cy = 239.5;
    double depth_scale = 0.001;  // meters per stored depth unit

    /// Throws validation Error unless focal lengths and depth scale are positive and the
    /// principal point lies inside a width x height image.
    void validate(int width, int height) const;
};

/// Row-major single-plane image.
template <typename T>
struct Image {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Image() = default;
    Image(int w, int h, T fill = T{}) : width(w), height(h), data(std::size_t(w) * h, fill) {}

    T& operator()(int x, int y) { return data[std::size_t(y) * width + x]; }
    const T& operator()(int x, int y) const { return data[std::size_t(y) * width + x]; }
    std::size_t size() const { return data.size(); }
    bool same_shape(int w, int h) const { return width == w && height == h; }

    friend bool operator==(const Image&, const Image&) = default;
};

using Mask = Image<std::uint8_t>;

/// Interleaved 8-bit RGB.
struct ColorImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    ColorImage() = default;
    ColorImage(int w, int h) : width(w), height(h), rgb(std::size_t(w) * h * 3, 0) {}

    std::uint8_t* pixel(int x, int y) { return &rgb[(std::size_t(y) * width + x) * 3]; }
    const std::uint8_t* pixel(int x, int y) const { return &rgb[(std::size_t(y) * width + x) * 3]; }

    friend bool operator==(const ColorImage&, const ColorImage&) = default;
};

/// Registered color + metric depth. Depth 0 marks an invalid pixel.
struct RgbdFrame {
    ColorImage color;
    Image<double> depth;
    CameraIntrinsics intrinsics;

    int width() const { return color.width; }
    int height() const { return color.height; }
    bool valid_depth(int x, int y) const { return depth(x, y) > 0.0; }

    void validate() const;
};

enum class LabelDomain { food, plate };

struct LabelMap {
    LabelDomain domain = LabelDomain::food;
    Image<std::uint8_t> labels;

    int width() const { return labels.width; }
    int height() const { return labels.height; }
    int class_count() const { return domain == LabelDomain::food ? kFoodClasses : kPlateClasses; }
    std::uint8_t operator()(int x, int y) const { return labels(x, y); }

    /// Throws validation Error naming the first out-of-range label.
    void validate() const;
};

/// H x W x C per-pixel class distribution, channel-minor layout.
struct ClassProbabilities {
    int width = 0;
    int height = 0;
    int classes = 0;
    std::vector<double> values;

    ClassProbabilities() = default;
    ClassProbabilities(int w, int h, int c) : width(w), height(h), classes(c), values(std::size_t(w) * h * c, 0.0) {}

    std::span<double> at(std::size_t pixel) { return {values.data() + pixel * classes, std::size_t(classes)}; }
    std::span<const double> at(std::size_t pixel) const {
        return {values.data() + pixel * classes, std::size_t(classes)};
    }
    std::size_t pixels() const { return std::size_t(width) * height; }

    /// Largest |sum - 1| over all pixels; -1 if a negative entry exists.
    double normalization_error() const;
    LabelMap argmax(LabelDomain domain) const;

    friend bool operator==(const ClassProbabilities&, const ClassProbabilities&) = default;
};

struct ProbabilityMaps {
    ClassProbabilities food;   // 8 classes
    ClassProbabilities plate;  // 6 classes
};

struct NutrientVector {
    double calories = 0;  // kcal
    double cho = 0;       // g
    double fat = 0;
    double protein = 0;
    double salt = 0;
    double fiber = 0;
    double sodium = 0;

    static constexpr std::size_t kCount = 7;
    static constexpr std::array<std::string_view, kCount> kNames{"calories", "cho",   "fat",   "protein",
                                                                  "salt",     "fiber", "sodium"};

    double& operator[](std::size_t i);
    double operator[](std::size_t i) const;

    NutrientVector scaled(double factor) const;
    NutrientVector& operator+=(const NutrientVector& other);

    friend bool operator==(const NutrientVector&, const NutrientVector&) = default;
};

struct MealItem {
    int food_category = food::main_course;
    int plate_category = plate::main_plate;
    NutrientVector total_nutrients;
    double served_weight_g = 0;
};

struct FramePaths {
    std::string color;
    std::string depth;
    std::string food;   // empty when not annotated
    std::string plate;
};

struct MealRecord {
    std::string meal_id;
    std::vector<MealItem> items;
    std::optional<FramePaths> before;
    std::optional<FramePaths> after;
    CameraIntrinsics intrinsics;
};

/// Radial height profile of a rotationally symmetric plate interior. Heights are measured
/// from the rim plane (<= 0); the deepest point rests on the tray.
struct PlateModel {
    int category = plate::main_plate;
    std::vector<std::array<double, 2>> profile;  // (radius m, height m), radii increasing
    double rim_radius = 0;
    /// Closed containers expose only their lid to the camera.
    bool lidded = false;

    void validate() const;
    /// Piecewise-linear height at radius r, clamped to the rim height for r >= rim_radius.
    double height_at(double r) const;
    /// Height of the rim plane above the tray.
    double rim_height() const;
    /// Interior volume below the rim plane in m^3.
    double interior_volume() const;
};

}  // namespace mealscan
