#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mealscan/core/types.hpp"

namespace mealscan::context {

inline constexpr int kPlateTypes = kPlateClasses - 1;  // rows: plate classes 1..5
inline constexpr int kFoodTypes = kFoodClasses - 1;    // columns: food classes 1..7

/// p(food | plate) estimated from pixel co-occurrence, add-1 smoothed.
struct CooccurrenceTable {
    std::array<std::array<double, kFoodTypes>, kPlateTypes> p_food_given_plate{};
    std::array<std::array<std::uint64_t, kFoodTypes>, kPlateTypes> counts{};

    /// Plate and food are class indices (1-based, background excluded).
    double probability(int plate_class, int food_class) const {
        return p_food_given_plate[std::size_t(plate_class - 1)][std::size_t(food_class - 1)];
    }
    static CooccurrenceTable from_counts(const std::array<std::array<std::uint64_t, kFoodTypes>, kPlateTypes>& counts);
    void validate() const;
};

CooccurrenceTable estimate_cooccurrence(const std::vector<std::pair<LabelMap, LabelMap>>& annotated);

nlohmann::json to_json(const CooccurrenceTable& table);
CooccurrenceTable cooccurrence_from_json(const nlohmann::json& j);

struct ContextParams {
    double alpha = 0.5;
    double beta = 0.5;
    /// Minimum component size at the reference resolution; scaled with image area.
    int min_region_px = 25;
    int reference_pixels = 64 * 64;

    int min_region_for(int width, int height) const;
    void validate() const;
};

/// Relabels each 8-connected food component to argmax_k alpha * sum_i p_i(k) + beta * N * p(k | plate),
/// with the plate taken as the majority plate label beneath the component. Components over no plate
/// use beta = 0; components below the size threshold become background.
LabelMap refine_context(const ClassProbabilities& food_probs, const LabelMap& food_labels, const LabelMap& plate_labels,
                        const CooccurrenceTable& table, const ContextParams& params);

}  // namespace mealscan::context
