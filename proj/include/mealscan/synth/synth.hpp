#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mealscan/core/io.hpp"
#include "mealscan/core/types.hpp"
#include "mealscan/volumetry/geometry.hpp"
#include "mealscan/volumetry/volume.hpp"

namespace mealscan::synth {

using volumetry::Vec2;
using volumetry::Vec3;
using Rgb = std::array<std::uint8_t, 3>;
using volumetry::operator+;
using volumetry::operator-;
using volumetry::operator*;

enum class ShapeKind { cap, box, cone };

/// Height field standing on the plate base. Offsets and sizes in meters, in the tray-plane frame
/// centered on the plate.
struct FoodShape {
    ShapeKind kind = ShapeKind::cap;
    int food_category = food::main_course;
    Vec2 offset{0, 0};
    double radius = 0.05;  // cap: sphere radius; cone: base radius
    double height = 0.02;
    double length = 0.1, width = 0.1;  // box
    double angle = 0;                  // box rotation (rad)

    double volume() const;  // m^3
    /// Height above the base at a plate-local point, 0 outside the footprint.
    double height_at(const Vec2& local) const;
    /// Radius of a disc around the offset containing the footprint.
    double footprint_radius() const;
    bool empty() const { return !(height > 0); }
};

struct PlatePlacement {
    PlateModel model;
    Vec2 center{0, 0};  // tray-plane coordinates relative to the point on the optical axis
    std::vector<FoodShape> foods;
};

struct SceneSpec {
    CameraIntrinsics intrinsics;
    int width = 640, height = 480;
    double tray_distance = 0.4;  // along the optical axis
    double tilt_x = 0, tilt_y = 0;  // tray rotation about the camera x / y axes (rad)
    std::vector<PlatePlacement> plates;
    double noise_sigma = 0.001;  // m
    double dropout = 0.01;
    std::uint64_t seed = 0;

    volumetry::Plane tray_plane() const;
    /// Point of the tray plane on the optical axis, origin of the tray-plane frame.
    Vec3 tray_origin() const;
    Vec3 plate_center(std::size_t plate) const;
    void validate() const;
    /// Items in plate order, then food order within a plate.
    std::size_t item_count() const;
};

struct SceneTruth {
    LabelMap food, plate;
    std::vector<double> item_volume_ml;
    volumetry::Plane tray;
    std::vector<volumetry::PlatePose> poses;
};

/// Flat colors per class.
Rgb food_color(int category);
Rgb plate_color(int category);
Rgb tray_color();

/// Ray-cast depth, colors and labels; noise is added after the truth is taken.
std::pair<RgbdFrame, SceneTruth> render_scene(const SceneSpec& spec);

/// Shrinks every item so its volume is (1 - fraction) of the original. Order as item_count().
SceneSpec make_eaten_scene(const SceneSpec& spec, const std::vector<double>& eaten_fraction);

/// Plate models used by generated datasets, keyed by plate category.
PlateLibrary default_plate_library();

struct DatasetOptions {
    double noise_sigma = 0.001;
    double dropout = 0.01;
};

/// Writes n meal directories (meal_000 ...) plus plates.json under root; each meal holds
/// before/after frames with annotations, meal.json and truth.json. Deterministic in seed.
std::vector<std::filesystem::path> make_dataset(std::size_t n_meals, std::uint64_t seed,
                                                const std::filesystem::path& root, const DatasetOptions& options = {});

/// Random tray layout and recipe for one meal (exposed for tests).
struct MealScene {
    SceneSpec before;
    std::vector<double> eaten_fraction;
    MealRecord record;
};
MealScene random_meal(std::uint64_t seed, const std::string& meal_id, const DatasetOptions& options = {});

/// Renders both frames of one meal and writes the meal directory layout used by make_dataset.
void write_meal(const std::filesystem::path& dir, const MealScene& meal, const DatasetOptions& options = {});

}  // namespace mealscan::synth
