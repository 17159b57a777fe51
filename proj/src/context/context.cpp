#include "mealscan/context/context.hpp"

#include <cmath>

#include <fmt/format.h>
#include <gmpxx.h>

#include "mealscan/core/components.hpp"

namespace mealscan::context {

CooccurrenceTable CooccurrenceTable::from_counts(
    const std::array<std::array<std::uint64_t, kFoodTypes>, kPlateTypes>& counts) {
    CooccurrenceTable t;
    t.counts = counts;
    for (int pl = 0; pl < kPlateTypes; ++pl) {
        double total = 0;
        for (auto c : counts[pl]) total += double(c) + 1.0;
        for (int k = 0; k < kFoodTypes; ++k) t.p_food_given_plate[pl][k] = (double(counts[pl][k]) + 1.0) / total;
    }
    return t;
}

void CooccurrenceTable::validate() const {
    for (int pl = 0; pl < kPlateTypes; ++pl) {
        double sum = 0;
        for (double v : p_food_given_plate[pl]) {
            if (!(v > 0)) throw Error(ErrorKind::validation, "co-occurrence entries must be positive");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw Error(ErrorKind::validation, fmt::format("co-occurrence row {} sums to {}", pl + 1, sum));
    }
}

CooccurrenceTable estimate_cooccurrence(const std::vector<std::pair<LabelMap, LabelMap>>& annotated) {
    if (annotated.empty()) throw Error(ErrorKind::validation, "co-occurrence estimation needs at least one annotation");
    std::array<std::array<std::uint64_t, kFoodTypes>, kPlateTypes> counts{};
    for (const auto& [food_map, plate_map] : annotated) {
        food_map.validate();
        plate_map.validate();
        if (!food_map.labels.same_shape(plate_map.labels.width, plate_map.labels.height))
            throw Error(ErrorKind::validation, "food and plate annotations differ in size");
        for (std::size_t i = 0; i < food_map.labels.data.size(); ++i) {
            const int f = food_map.labels.data[i], p = plate_map.labels.data[i];
            if (f > 0 && p > 0) ++counts[std::size_t(p - 1)][std::size_t(f - 1)];
        }
    }
    return CooccurrenceTable::from_counts(counts);
}

nlohmann::json to_json(const CooccurrenceTable& table) {
    return {{"p_food_given_plate", table.p_food_given_plate}, {"counts", table.counts}};
}

CooccurrenceTable cooccurrence_from_json(const nlohmann::json& j) {
    try {
        auto t = CooccurrenceTable::from_counts(j.at("counts").get<decltype(CooccurrenceTable::counts)>());
        t.validate();
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::validation, fmt::format("bad co-occurrence table: {}", e.what()));
    }
}

int ContextParams::min_region_for(int width, int height) const {
    return int(std::lround(double(min_region_px) * double(width) * double(height) / double(reference_pixels)));
}

void ContextParams::validate() const {
    if (!(alpha >= 0 && beta >= 0) || (alpha == 0 && beta == 0))
        throw Error(ErrorKind::validation, "context weights must be non-negative and not both zero");
    if (min_region_px < 0 || reference_pixels <= 0) throw Error(ErrorKind::validation, "bad context region size");
}

LabelMap refine_context(const ClassProbabilities& food_probs, const LabelMap& food_labels, const LabelMap& plate_labels,
                        const CooccurrenceTable& table, const ContextParams& params) {
    params.validate();
    const int w = food_labels.labels.width, h = food_labels.labels.height;
    if (food_probs.width != w || food_probs.height != h || !plate_labels.labels.same_shape(w, h))
        throw Error(ErrorKind::validation, "context refinement inputs differ in size");
    if (food_probs.classes != kFoodClasses) throw Error(ErrorKind::validation, "food probabilities need 8 classes");

    const auto comps = connected_components(food_labels.labels);
    const std::size_t min_size = std::size_t(params.min_region_for(w, h));
    LabelMap out{LabelDomain::food, Image<std::uint8_t>(w, h, 0)};
    for (const auto& members : comps.pixels) {
        if (members.size() < min_size) continue;
        std::array<std::size_t, kPlateClasses> votes{};
        std::array<double, kFoodClasses> mass{};
        for (auto p : members) {
            ++votes[plate_labels.labels.data[p]];
            const auto d = food_probs.at(p);
            for (int k = 0; k < kFoodClasses; ++k) mass[k] += d[k];
        }
        int plate = 0;
        for (int pl = 1; pl < kPlateClasses; ++pl)
            if (votes[pl] > votes[plate]) plate = pl;
        // Scores are compared in exact rational arithmetic so that the argmax depends only on the
        // ratio alpha : beta.
        const mpq_class alpha(params.alpha), beta_n(mpq_class(params.beta) * long(members.size()));
        int best = 0;
        mpq_class best_score;
        for (int k = 1; k < kFoodClasses; ++k) {
            mpq_class score = alpha * mpq_class(mass[k]);
            if (plate > 0) score += beta_n * mpq_class(table.probability(plate, k));
            if (best == 0 || score > best_score) {
                best_score = score;
                best = k;
            }
        }
        for (auto p : members) out.labels.data[p] = std::uint8_t(best);
    }
    return out;
}

}  // namespace mealscan::context
