#include "mealscan/intake/intake.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace mealscan::intake {

namespace {

constexpr std::array<std::string_view, NutrientVector::kCount> kUnits{"kcal", "g", "g", "g", "g", "g", "g"};

struct ReferenceRow {
    std::string_view nutrient, mae, mre;
};
// Published INIMD results, shown for context only.
constexpr std::array<ReferenceRow, NutrientVector::kCount> kReference{{{"Calories", "63.78kcal", "12.71"},
                                                                      {"CHO", "6.37g", "12.08"},
                                                                      {"Fat", "3.60g", "13.78"},
                                                                      {"Protein", "2.80g", "17.19"},
                                                                      {"Salt", "0.74g", "15.89"},
                                                                      {"Fiber", "1.06g", "16.87"},
                                                                      {"Sodium", "0.32g", "16.47"}}};
constexpr std::string_view kReferenceLabel = "published reference (INIMD, not reproduced)";
constexpr std::string_view kReferenceFmin = "71.59", kReferenceFsum = "87.04";

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

std::string num(double v, int decimals = 3) {
    if (v == 0) v = 0;  // no "-0.000"
    std::string s = fmt::format("{:.{}f}", v, decimals);
    if (s.find_first_not_of("-0.") == std::string::npos && s[0] == '-') s.erase(0, 1);
    return s;
}

void csv_rows(const IntakeResult& r, std::string& out) {
    std::size_t index = 1;
    for (const auto& item : r.items) {
        out += fmt::format("{},{},{},{},{},{},{}", csv_field(r.meal_id), index++,
                           csv_field(food_category_name(item.food_category)),
                           csv_field(plate_category_name(item.plate_category)), num(item.v_before_ml),
                           num(item.v_after_ml), num(item.ratio, 4));
        for (std::size_t c = 0; c < NutrientVector::kCount; ++c) out += "," + num(item.consumed[c]);
        out += "\n";
    }
    out += fmt::format("{},total,,,,,", csv_field(r.meal_id));
    for (std::size_t c = 0; c < NutrientVector::kCount; ++c) out += "," + num(r.totals[c]);
    out += "\n";
}

void text_table(const IntakeResult& r, std::string& out) {
    out += fmt::format("meal {}\n", r.meal_id);
    out += fmt::format("{:<5} {:<12} {:<18} {:>11} {:>11} {:>7}", "item", "food", "plate", "before_ml", "after_ml",
                       "ratio");
    for (auto name : NutrientVector::kNames) out += fmt::format(" {:>10}", name);
    out += "\n";
    std::size_t index = 1;
    for (const auto& item : r.items) {
        out += fmt::format("{:<5} {:<12} {:<18} {:>11} {:>11} {:>7}", index++, food_category_name(item.food_category),
                           plate_category_name(item.plate_category), num(item.v_before_ml), num(item.v_after_ml),
                           num(item.ratio, 4));
        for (std::size_t c = 0; c < NutrientVector::kCount; ++c) out += fmt::format(" {:>10}", num(item.consumed[c]));
        out += item.heuristic ? "  *\n" : "\n";
    }
    out += fmt::format("{:<5} {:<12} {:<18} {:>11} {:>11} {:>7}", "total", "", "", "", "", "");
    for (std::size_t c = 0; c < NutrientVector::kCount; ++c) out += fmt::format(" {:>10}", num(r.totals[c]));
    out += "\n";
    if (std::any_of(r.items.begin(), r.items.end(), [](const ItemIntake& i) { return i.heuristic; }))
        out += "* ratio taken from the salad items (packaged container)\n";
    for (const auto& w : r.warnings) out += fmt::format("warning: {}\n", w);
}

}  // namespace

double consumed_ratio(double v_before_ml, double v_after_ml) {
    if (!(v_before_ml > 0)) throw Error(ErrorKind::validation, "empty served item");
    if (!(v_after_ml >= 0)) throw Error(ErrorKind::validation, "negative after-meal volume");
    return std::clamp(1.0 - v_after_ml / v_before_ml, 0.0, 1.0);
}

NutrientVector consumed_nutrients(const MealItem& item, double v_before_ml, double v_after_ml) {
    return item.total_nutrients.scaled(consumed_ratio(v_before_ml, v_after_ml));
}

IntakeResult compute_intake(const MealRecord& record, const std::vector<volumetry::ItemVolumes>& volumes) {
    if (volumes.size() != record.items.size())
        throw Error(ErrorKind::validation,
                    fmt::format("{} volume entries for {} meal items", volumes.size(), record.items.size()));
    IntakeResult r;
    r.meal_id = record.meal_id;
    // An item with nothing measured before the meal is reported with ratio 0; the rest of the meal proceeds.
    auto usable = volumes;
    std::vector<bool> empty(volumes.size(), false);
    for (std::size_t i = 0; i < usable.size(); ++i) {
        if (usable[i].before_ml > 0) continue;
        if (usable[i].plate_category != plate::packaged) {
            empty[i] = true;
            usable[i].food_category = 0;
            usable[i].plate_category = 0;
            r.warnings.push_back(fmt::format("item {} ({}): empty served item", i + 1,
                                             food_category_name(volumes[i].food_category)));
        }
        usable[i].before_ml = usable[i].after_ml = 1;
    }
    const auto consumed = volumetry::consumed_volumes(usable, r.warnings);
    for (std::size_t i = 0; i < volumes.size(); ++i) {
        ItemIntake item;
        item.food_category = record.items[i].food_category;
        item.plate_category = record.items[i].plate_category;
        item.v_before_ml = volumes[i].before_ml;
        item.v_after_ml = volumes[i].after_ml;
        item.ratio = consumed[i].ratio;
        item.heuristic = consumed[i].heuristic;
        item.total = record.items[i].total_nutrients;
        item.empty = empty[i];
        item.consumed = item.heuristic || item.empty
                            ? item.total.scaled(item.ratio)
                            : consumed_nutrients(record.items[i], item.v_before_ml, item.v_after_ml);
        r.totals += item.consumed;
        r.items.push_back(item);
    }
    return r;
}

nlohmann::json to_json(const IntakeResult& result) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& i : result.items)
        items.push_back({{"food_category", food_category_name(i.food_category)},
                         {"plate_category", plate_category_name(i.plate_category)},
                         {"v_before_ml", i.v_before_ml},
                         {"v_after_ml", i.v_after_ml},
                         {"ratio", i.ratio},
                         {"heuristic", i.heuristic},
                         {"empty_served_item", i.empty},
                         {"total", to_json(i.total)},
                         {"consumed", to_json(i.consumed)}});
    return {{"meal_id", result.meal_id}, {"items", items}, {"totals", to_json(result.totals)}, {"warnings", result.warnings}};
}

IntakeResult intake_result_from_json(const nlohmann::json& j) {
    try {
        IntakeResult r;
        r.meal_id = j.at("meal_id").get<std::string>();
        for (const auto& e : j.at("items")) {
            ItemIntake i;
            i.food_category = food_category_from_name(e.at("food_category").get<std::string>());
            i.plate_category = plate_category_from_name(e.at("plate_category").get<std::string>());
            i.v_before_ml = e.at("v_before_ml").get<double>();
            i.v_after_ml = e.at("v_after_ml").get<double>();
            i.ratio = e.at("ratio").get<double>();
            i.heuristic = e.at("heuristic").get<bool>();
            i.empty = e.value("empty_served_item", false);
            i.total = nutrients_from_json(e.at("total"));
            i.consumed = nutrients_from_json(e.at("consumed"));
            r.items.push_back(i);
        }
        r.totals = nutrients_from_json(j.at("totals"));
        r.warnings = j.value("warnings", std::vector<std::string>{});
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::validation, fmt::format("malformed intake result: {}", e.what()));
    }
}

ReportFormat report_format_from_name(const std::string& name) {
    if (name == "text") return ReportFormat::text;
    if (name == "csv") return ReportFormat::csv;
    throw Error(ErrorKind::validation, fmt::format("unknown report format '{}'", name));
}

std::string render_intake_report(const IntakeResult& result, ReportFormat format) {
    return render_intake_report(std::vector<IntakeResult>{result}, format);
}

std::string render_intake_report(const std::vector<IntakeResult>& results, ReportFormat format) {
    std::string out;
    if (format == ReportFormat::csv) {
        out = std::string(kIntakeCsvHeader) + "\n";
        for (const auto& r : results) csv_rows(r, out);
    } else {
        for (std::size_t i = 0; i < results.size(); ++i) {
            if (i) out += "\n";
            text_table(results[i], out);
        }
    }
    return out;
}

void FScoreCounts::add(const LabelMap& pred, const LabelMap& gt) {
    if (pred.width() != gt.width() || pred.height() != gt.height())
        throw Error(ErrorKind::validation, "prediction and ground truth differ in size");
    for (std::size_t i = 0; i < gt.labels.size(); ++i) {
        const int p = pred.labels.data[i], g = gt.labels.data[i];
        if (p >= kFoodClasses || g >= kFoodClasses) throw Error(ErrorKind::validation, "food label out of range");
        ++predicted[p];
        ++truth[g];
        if (p == g) ++overlap[p];
    }
}

FScores FScoreCounts::scores() const {
    FScores s;
    std::size_t tp = 0, sizes = 0;
    for (int k = 1; k < kFoodClasses; ++k) {
        tp += overlap[k];
        sizes += predicted[k] + truth[k];
        if (truth[k] == 0) continue;
        s.per_class[k] = 100.0 * 2.0 * double(overlap[k]) / double(predicted[k] + truth[k]);
    }
    if (s.per_class.empty()) throw Error(ErrorKind::validation, "ground truth has no food pixels");
    s.f_min = 100.0;
    for (const auto& [k, f] : s.per_class) s.f_min = std::min(s.f_min, f);
    s.f_sum = 100.0 * 2.0 * double(tp) / double(sizes);
    return s;
}

FScores segmentation_fscores(const LabelMap& pred, const LabelMap& gt) {
    FScoreCounts counts;
    counts.add(pred, gt);
    return counts.scores();
}

EvalReport evaluate_intake(const std::vector<NutrientVector>& predicted, const std::vector<NutrientVector>& truth) {
    if (predicted.size() != truth.size())
        throw Error(ErrorKind::validation,
                    fmt::format("{} predictions for {} ground-truth meals", predicted.size(), truth.size()));
    if (truth.empty()) throw Error(ErrorKind::validation, "no meals to evaluate");
    EvalReport r;
    r.meals = truth.size();
    for (std::size_t c = 0; c < NutrientVector::kCount; ++c) {
        double abs_sum = 0, rel_sum = 0;
        std::size_t rel_n = 0;
        for (std::size_t m = 0; m < truth.size(); ++m) {
            const double err = std::abs(predicted[m][c] - truth[m][c]);
            abs_sum += err;
            if (truth[m][c] == 0) {
                ++r.nutrients[c].mre_skipped;
                continue;
            }
            rel_sum += err / std::abs(truth[m][c]);
            ++rel_n;
        }
        r.nutrients[c].mae = abs_sum / double(truth.size());
        r.nutrients[c].mre_percent = rel_n ? 100.0 * rel_sum / double(rel_n) : 0.0;
    }
    return r;
}

nlohmann::json to_json(const EvalReport& report) {
    nlohmann::json j;
    j["meals"] = report.meals;
    for (std::size_t c = 0; c < NutrientVector::kCount; ++c)
        j["nutrients"][std::string(NutrientVector::kNames[c])] = {{"mae", report.nutrients[c].mae},
                                                                   {"unit", kUnits[c]},
                                                                   {"mre_percent", report.nutrients[c].mre_percent},
                                                                   {"mre_skipped", report.nutrients[c].mre_skipped}};
    if (report.has_segmentation) {
        nlohmann::json per_class = nlohmann::json::object();
        for (const auto& [k, f] : report.segmentation.per_class) per_class[std::string(food_category_name(k))] = f;
        j["segmentation"] = {{"f_min_percent", report.segmentation.f_min},
                             {"f_sum_percent", report.segmentation.f_sum},
                             {"per_class_percent", per_class}};
    }
    return j;
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
    try {
        EvalReport r;
        r.meals = j.at("meals").get<std::size_t>();
        for (std::size_t c = 0; c < NutrientVector::kCount; ++c) {
            const auto& n = j.at("nutrients").at(std::string(NutrientVector::kNames[c]));
            r.nutrients[c] = {n.at("mae").get<double>(), n.at("mre_percent").get<double>(),
                              n.at("mre_skipped").get<std::size_t>()};
        }
        if (j.contains("segmentation")) {
            const auto& s = j["segmentation"];
            r.has_segmentation = true;
            r.segmentation.f_min = s.at("f_min_percent").get<double>();
            r.segmentation.f_sum = s.at("f_sum_percent").get<double>();
            for (const auto& [name, f] : s.at("per_class_percent").items())
                r.segmentation.per_class[food_category_from_name(name)] = f.get<double>();
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::validation, fmt::format("malformed evaluation report: {}", e.what()));
    }
}

std::string render_eval_report(const EvalReport& report, ReportFormat format) {
    std::string out;
    if (format == ReportFormat::csv) {
        out = "source,metric,value,unit,skipped\n";
        for (std::size_t c = 0; c < NutrientVector::kCount; ++c) {
            const auto name = NutrientVector::kNames[c];
            out += fmt::format("measured,{}_mae,{},{},\n", name, num(report.nutrients[c].mae, 4), kUnits[c]);
            out += fmt::format("measured,{}_mre,{},%,{}\n", name, num(report.nutrients[c].mre_percent, 4),
                               report.nutrients[c].mre_skipped);
        }
        if (report.has_segmentation) {
            out += fmt::format("measured,f_min,{},%,\n", num(report.segmentation.f_min, 4));
            out += fmt::format("measured,f_sum,{},%,\n", num(report.segmentation.f_sum, 4));
        }
        const std::string ref = csv_field(kReferenceLabel);
        for (std::size_t c = 0; c < NutrientVector::kCount; ++c) {
            const auto name = NutrientVector::kNames[c];
            const auto mae = kReference[c].mae;
            out += fmt::format("{},{}_mae,{},{},\n", ref, name, mae.substr(0, mae.size() - kUnits[c].size()), kUnits[c]);
            out += fmt::format("{},{}_mre,{},%,\n", ref, name, kReference[c].mre);
        }
        out += fmt::format("{},f_min,{},%,\n{},f_sum,{},%,\n", ref, kReferenceFmin, ref, kReferenceFsum);
        return out;
    }

    out += fmt::format("Nutrient intake accuracy over {} meals\n", report.meals);
    out += fmt::format("{:<10} {:>16} {:>10} {:>8}\n", "", "MAE", "MRE (%)", "skipped");
    for (std::size_t c = 0; c < NutrientVector::kCount; ++c)
        out += fmt::format("{:<10} {:>16} {:>10} {:>8}\n", kReference[c].nutrient,
                           num(report.nutrients[c].mae, 2) + std::string(kUnits[c]),
                           num(report.nutrients[c].mre_percent, 2), report.nutrients[c].mre_skipped);
    out += fmt::format("\n{}\n", kReferenceLabel);
    out += fmt::format("{:<10} {:>16} {:>10}\n", "", "MAE", "MRE (%)");
    for (const auto& row : kReference) out += fmt::format("{:<10} {:>16} {:>10}\n", row.nutrient, row.mae, row.mre);

    out += "\nSegmentation (before-meal frames)\n";
    out += fmt::format("{:<44} {:>9} {:>9}\n", "", "Fmin (%)", "Fsum (%)");
    if (report.has_segmentation)
        out += fmt::format("{:<44} {:>9} {:>9}\n", "measured", num(report.segmentation.f_min, 2),
                           num(report.segmentation.f_sum, 2));
    out += fmt::format("{:<44} {:>9} {:>9}\n", kReferenceLabel, kReferenceFmin, kReferenceFsum);
    out += "F-scores are per-class Dice over pixel counts pooled across images; Fmin is the worst class present\n"
           "in the ground truth, Fsum pools all food classes. MRE skips meals whose true value is zero.\n";
    return out;
}

}  // namespace mealscan::intake
