#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mealscan/core/types.hpp"

namespace mealscan {

namespace fs = std::filesystem;

// PNG codecs. 8-bit RGB, 8-bit gray (labels), 16-bit gray (depth).
ColorImage read_color_png(const fs::path& path);
Image<std::uint8_t> read_gray8_png(const fs::path& path);
Image<std::uint16_t> read_gray16_png(const fs::path& path);
void write_color_png(const fs::path& path, const ColorImage& image);
void write_gray8_png(const fs::path& path, const Image<std::uint8_t>& image);
void write_gray16_png(const fs::path& path, const Image<std::uint16_t>& image);

/// Loads a registered color/depth pair; stored depth is multiplied by depth_scale and 0 stays invalid.
RgbdFrame load_frame(const fs::path& color_path, const fs::path& depth_path, const CameraIntrinsics& intrinsics);
/// Quantizes depth to round(z / depth_scale); values beyond the 16-bit range throw.
void save_frame(const RgbdFrame& frame, const fs::path& color_path, const fs::path& depth_path);

std::pair<LabelMap, LabelMap> load_annotation(const fs::path& food_path, const fs::path& plate_path);
void save_label_map(const LabelMap& map, const fs::path& path);

// JSON documents.
nlohmann::json to_json(const CameraIntrinsics& k);
CameraIntrinsics intrinsics_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NutrientVector& n);
NutrientVector nutrients_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PlateModel& m);
PlateModel plate_model_from_json(const nlohmann::json& j);

nlohmann::json read_json(const fs::path& path);
/// Writes through a temporary file and renames, so readers never see partial output.
void write_text_atomic(const fs::path& path, const std::string& text);
void write_json(const fs::path& path, const nlohmann::json& j);

/// Parses meal.json; frame paths are resolved against the meal directory layout
/// meal_id/{before,after}/{color,depth,food,plate}.png.
MealRecord load_meal_record(const fs::path& meal_json);
MealRecord meal_record_from_json(const nlohmann::json& j, const fs::path& meal_dir);
nlohmann::json to_json(const MealRecord& record);

using PlateLibrary = std::map<int, PlateModel>;
PlateLibrary load_plate_library(const fs::path& path);
void save_plate_library(const fs::path& path, const PlateLibrary& library);

/// Dense H x W x C float64 map with a 16-byte header: "PMAP", then u32 H, W, C (little endian).
void write_probability_map(const fs::path& path, const ClassProbabilities& probs);
ClassProbabilities read_probability_map(const fs::path& path);

/// Meal directories (those containing meal.json) directly under root, sorted by name.
std::vector<fs::path> list_meal_dirs(const fs::path& root);

}  // namespace mealscan
