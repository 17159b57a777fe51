#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "mealscan/core/io.hpp"
#include "mealscan/core/types.hpp"
#include "mealscan/volumetry/volume.hpp"

namespace mealscan::intake {

using mealscan::to_json;

/// clamp(1 - v_after / v_before, 0, 1); v_before <= 0 throws "empty served item".
double consumed_ratio(double v_before_ml, double v_after_ml);
/// Total nutrients scaled by consumed_ratio.
NutrientVector consumed_nutrients(const MealItem& item, double v_before_ml, double v_after_ml);

struct ItemIntake {
    int food_category = 0;
    int plate_category = 0;
    double v_before_ml = 0;
    double v_after_ml = 0;
    double ratio = 0;
    bool heuristic = false;
    bool empty = false;  // nothing measured before the meal; ratio forced to 0
    NutrientVector total;
    NutrientVector consumed;
};

struct IntakeResult {
    std::string meal_id;
    std::vector<ItemIntake> items;
    NutrientVector totals;
    std::vector<std::string> warnings;
};

/// Per-item ratios (with the packaged-container rule) applied to the recipe; volumes align with record.items.
IntakeResult compute_intake(const MealRecord& record, const std::vector<volumetry::ItemVolumes>& volumes);

nlohmann::json to_json(const IntakeResult& result);
IntakeResult intake_result_from_json(const nlohmann::json& j);

enum class ReportFormat { text, csv };
ReportFormat report_format_from_name(const std::string& name);

inline constexpr const char* kIntakeCsvHeader =
    "meal_id,item,food_category,plate_category,v_before_ml,v_after_ml,ratio,calories_kcal,cho_g,fat_g,protein_g,"
    "salt_g,fiber_g,sodium_g";

/// One row per item plus a totals row; byte-identical for equal input.
std::string render_intake_report(const IntakeResult& result, ReportFormat format);
/// Several meals in one document (CSV: a single header).
std::string render_intake_report(const std::vector<IntakeResult>& results, ReportFormat format);

struct NutrientError {
    double mae = 0;
    double mre_percent = 0;
    std::size_t mre_skipped = 0;  // meals whose true value is 0
};

struct FScores {
    double f_min = 0;  // percent, worst class present in the ground truth
    double f_sum = 0;  // percent, pooled over all food classes
    std::map<int, double> per_class;
};

/// Pixel counts behind the F-scores; accumulate over images, then call scores().
struct FScoreCounts {
    std::array<std::size_t, kFoodClasses> predicted{}, truth{}, overlap{};

    void add(const LabelMap& pred, const LabelMap& gt);
    FScores scores() const;
};

/// Dice per class k present in gt: 2|P∩G| / (|P|+|G|). Pooled: 2 Σ|P_k∩G_k| / (Σ|P_k| + Σ|G_k|) over k >= 1.
FScores segmentation_fscores(const LabelMap& pred, const LabelMap& gt);

struct EvalReport {
    std::size_t meals = 0;
    std::array<NutrientError, NutrientVector::kCount> nutrients{};
    bool has_segmentation = false;
    FScores segmentation;
};

/// MAE in native units, MRE in percent (zero-truth meals skipped and counted).
EvalReport evaluate_intake(const std::vector<NutrientVector>& predicted, const std::vector<NutrientVector>& truth);

nlohmann::json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& j);
/// Table of MAE / MRE per nutrient, the published INIMD reference rows, and the segmentation scores.
std::string render_eval_report(const EvalReport& report, ReportFormat format);

}  // namespace mealscan::intake
