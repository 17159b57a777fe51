#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mealscan/core/random.hpp"
#include "mealscan/intake/intake.hpp"

using namespace mealscan;
using namespace mealscan::intake;

namespace {

MealItem item_with(NutrientVector n, int food_category = food::main_course, int plate_category = plate::main_plate) {
    MealItem m;
    m.food_category = food_category;
    m.plate_category = plate_category;
    m.total_nutrients = n;
    m.served_weight_g = 100;
    return m;
}

LabelMap food_map(int w, int h) { return LabelMap{LabelDomain::food, Image<std::uint8_t>(w, h, 0)}; }

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

}  // namespace

TEST_CASE("consumed nutrients scale by the clamped volume ratio") {
    NutrientVector n;
    n.protein = 20;
    const auto m = item_with(n);
    CHECK(std::abs(consumed_nutrients(m, 300, 100).protein - 40.0 / 3.0) < 1e-9);
    CHECK(std::abs(consumed_nutrients(m, 300, 100).protein - 13.333) < 1e-3);
    CHECK(std::abs(consumed_nutrients(m, 300, 0).protein - 20) < 1e-9);
    CHECK(consumed_nutrients(m, 300, 320).protein == 0);
    CHECK_THROWS_WITH_AS(consumed_nutrients(m, 0, 0), "empty served item", Error);
    CHECK_THROWS_AS(consumed_nutrients(m, -1, 0), Error);
}

TEST_CASE("consumed nutrients are linear in the recipe totals") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        NutrientVector n;
        for (std::size_t c = 0; c < NutrientVector::kCount; ++c) n[c] = rng.uniform(0, 500);
        const double c_scale = rng.uniform(0.1, 10), vb = rng.uniform(1, 500), va = rng.uniform(0, 600);
        const auto base = consumed_nutrients(item_with(n), vb, va);
        const auto scaled = consumed_nutrients(item_with(n.scaled(c_scale)), vb, va);
        for (std::size_t c = 0; c < NutrientVector::kCount; ++c) {
            CHECK(scaled[c] == doctest::Approx(base[c] * c_scale).epsilon(1e-12));
            CHECK(base[c] <= n[c]);
            CHECK(base[c] >= 0);
        }
    }
}

TEST_CASE("meal intake totals sum the items and apply the packaged rule") {
    MealRecord r;
    r.meal_id = "m";
    NutrientVector a{500, 60, 20, 30, 2, 5, 0.8}, b{40, 5, 0.5, 1, 0.2, 2, 0.1}, c{90, 6, 7, 1, 0.9, 0.2, 0.35};
    r.items = {item_with(a), item_with(b, food::salad, plate::salad_bowl), item_with(c, food::sauce, plate::packaged)};
    const auto res = compute_intake(r, {{food::main_course, plate::main_plate, 200, 50},
                                        {food::salad, plate::salad_bowl, 100, 60},
                                        {food::sauce, plate::packaged, 30, 30}});
    REQUIRE(res.items.size() == 3);
    CHECK(res.items[0].ratio == 0.75);
    CHECK(res.items[2].heuristic);
    CHECK(res.items[2].ratio == doctest::Approx(0.4));
    CHECK(res.items[2].consumed.calories == doctest::Approx(36));
    NutrientVector sum;
    for (const auto& i : res.items) sum += i.consumed;
    for (std::size_t k = 0; k < NutrientVector::kCount; ++k)
        CHECK(std::abs(res.totals[k] - sum[k]) <= 1e-9 * std::max(1.0, std::abs(sum[k])));
    CHECK_THROWS_AS(compute_intake(r, {{food::main_course, plate::main_plate, 200, 50}}), Error);
}

TEST_CASE("an empty served item is a per-item error and the meal still totals") {
    MealRecord r;
    r.meal_id = "m";
    NutrientVector a{500, 60, 20, 30, 2, 5, 0.8}, b{40, 5, 0.5, 1, 0.2, 2, 0.1}, c{90, 6, 7, 1, 0.9, 0.2, 0.35};
    r.items = {item_with(a), item_with(b, food::salad, plate::salad_bowl), item_with(c, food::sauce, plate::packaged)};
    const auto res = compute_intake(r, {{food::main_course, plate::main_plate, 0, 0},
                                        {food::salad, plate::salad_bowl, 100, 60},
                                        {food::sauce, plate::packaged, 0, 0}});
    CHECK(res.items[0].empty);
    CHECK(res.items[0].ratio == 0);
    CHECK(res.items[0].consumed == NutrientVector{});
    CHECK(res.items[2].heuristic);
    CHECK(res.items[2].ratio == doctest::Approx(0.4));
    REQUIRE(res.warnings.size() == 1);
    CHECK(res.warnings[0].find("empty served item") != std::string::npos);
    CHECK(res.totals.calories == doctest::Approx(0.4 * 40 + 0.4 * 90));
}

TEST_CASE("evaluate_intake single-meal and identity examples") {
    NutrientVector p, t;
    p.calories = 110;
    t.calories = 100;
    t.cho = 10;
    p.cho = 10;
    auto rep = evaluate_intake({p}, {t});
    CHECK(rep.nutrients[0].mae == 10.0);
    CHECK(rep.nutrients[0].mre_percent == 10.0);
    CHECK(rep.nutrients[1].mae == 0.0);
    CHECK(rep.nutrients[1].mre_percent == 0.0);
    // fat, protein, salt, fiber, sodium are zero in the truth
    CHECK(rep.nutrients[2].mre_skipped == 1);
    CHECK(rep.nutrients[0].mre_skipped == 0);

    rep = evaluate_intake({t, t}, {t, t});
    for (const auto& e : rep.nutrients) {
        CHECK(e.mae == 0);
        CHECK(e.mre_percent == 0);
    }
    CHECK_THROWS_AS(evaluate_intake({p}, {t, t}), Error);
    CHECK_THROWS_AS(evaluate_intake({}, {}), Error);
}

TEST_CASE("evaluate_intake is permutation invariant and non-negative") {
    Rng rng(12);
    std::vector<NutrientVector> pred(30), truth(30);
    for (std::size_t m = 0; m < 30; ++m)
        for (std::size_t c = 0; c < NutrientVector::kCount; ++c) {
            truth[m][c] = rng.bernoulli(0.1) ? 0.0 : rng.uniform(0, 100);
            pred[m][c] = rng.uniform(0, 100);
        }
    const auto a = evaluate_intake(pred, truth);
    std::vector<std::size_t> order(30);
    for (std::size_t i = 0; i < 30; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<NutrientVector> p2, t2;
    for (auto i : order) {
        p2.push_back(pred[i]);
        t2.push_back(truth[i]);
    }
    const auto b = evaluate_intake(p2, t2);
    for (std::size_t c = 0; c < NutrientVector::kCount; ++c) {
        CHECK(a.nutrients[c].mae == doctest::Approx(b.nutrients[c].mae).epsilon(1e-12));
        CHECK(a.nutrients[c].mre_percent == doctest::Approx(b.nutrients[c].mre_percent).epsilon(1e-12));
        CHECK(a.nutrients[c].mre_skipped == b.nutrients[c].mre_skipped);
        CHECK(a.nutrients[c].mae >= 0);
        CHECK(a.nutrients[c].mre_percent >= 0);
    }
}

TEST_CASE("segmentation F-score examples") {
    auto gt = food_map(30, 10);
    for (int x = 0; x < 30; ++x)
        for (int y = 0; y < 10; ++y) gt.labels(x, y) = std::uint8_t(x < 10 ? food::soup : x < 20 ? food::salad : food::dessert);
    auto f = segmentation_fscores(gt, gt);
    CHECK(f.f_min == 100.0);
    CHECK(f.f_sum == 100.0);
    CHECK(f.per_class.size() == 3);

    auto pred = gt;
    for (int x = 0; x < 10; ++x)
        for (int y = 0; y < 10; ++y) pred.labels(x, y) = 0;
    f = segmentation_fscores(pred, gt);
    CHECK(f.f_min == 0.0);
    CHECK(f.per_class.at(food::salad) == 100.0);

    // |P| = |G| = 100 with 50 shared pixels.
    auto g1 = food_map(20, 10), p1 = food_map(20, 10);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) {
            g1.labels(x, y) = food::main_course;
            p1.labels(x + 5, y) = food::main_course;
        }
    f = segmentation_fscores(p1, g1);
    CHECK(f.f_min == 50.0);
    CHECK(f.f_sum == 50.0);

    CHECK_THROWS_AS(segmentation_fscores(food_map(4, 4), food_map(4, 4)), Error);
    CHECK_THROWS_AS(segmentation_fscores(food_map(4, 4), food_map(4, 5)), Error);
}

TEST_CASE("F-scores stay in range and F_min never exceeds the best class") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        auto p = food_map(16, 16), g = food_map(16, 16);
        for (auto& v : p.labels.data) v = std::uint8_t(rng.below(kFoodClasses));
        for (auto& v : g.labels.data) v = std::uint8_t(rng.below(kFoodClasses));
        const auto f = segmentation_fscores(p, g);
        double best = 0;
        for (const auto& [k, v] : f.per_class) {
            CHECK(v >= 0);
            CHECK(v <= 100);
            best = std::max(best, v);
        }
        CHECK(f.f_min <= best);
        CHECK(f.f_sum >= 0);
        CHECK(f.f_sum <= 100);
    }
}

TEST_CASE("intake reports") {
    NutrientVector n{500, 60, 20, 30, 2, 5, 0.8};
    MealRecord r;
    r.meal_id = "meal_001";
    r.items = {item_with(n)};
    const auto res = compute_intake(r, {{food::main_course, plate::main_plate, 250, 0}});
    const auto csv = render_intake_report(res, ReportFormat::csv);
    const auto rows = lines(csv);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == "meal_id,item,food_category,plate_category,v_before_ml,v_after_ml,ratio,calories_kcal,cho_g,"
                     "fat_g,protein_g,salt_g,fiber_g,sodium_g");
    CHECK(rows[1] == "meal_001,1,main course,main plate,250.000,0.000,1.0000,500.000,60.000,20.000,30.000,2.000,5.000,0.800");
    CHECK(rows[2] == "meal_001,total,,,,,,500.000,60.000,20.000,30.000,2.000,5.000,0.800");
    CHECK(render_intake_report(res, ReportFormat::csv) == csv);
    CHECK(render_intake_report(res, ReportFormat::text) == render_intake_report(res, ReportFormat::text));

    IntakeResult empty;
    empty.meal_id = "x,y";
    const auto e = lines(render_intake_report(empty, ReportFormat::csv));
    REQUIRE(e.size() == 2);
    CHECK(e[1] == "\"x,y\",total,,,,,,0.000,0.000,0.000,0.000,0.000,0.000,0.000");
    CHECK(report_format_from_name("csv") == ReportFormat::csv);
    CHECK_THROWS_AS(report_format_from_name("xml"), Error);
}

TEST_CASE("eval report carries the published reference rows verbatim") {
    NutrientVector t{100, 10, 5, 5, 1, 1, 0.4};
    auto rep = evaluate_intake({t}, {t});
    rep.has_segmentation = true;
    rep.segmentation.f_min = 80;
    rep.segmentation.f_sum = 90;
    const auto text = render_eval_report(rep, ReportFormat::text);
    CHECK(text.find("published reference (INIMD, not reproduced)") != std::string::npos);
    for (const char* cell : {"63.78kcal", "12.71", "6.37g", "12.08", "3.60g", "13.78", "2.80g", "17.19", "0.74g",
                             "15.89", "1.06g", "16.87", "0.32g", "16.47", "71.59", "87.04"})
        CHECK(text.find(cell) != std::string::npos);
    bool found = false;
    for (const auto& l : lines(text))
        if (l.rfind("Calories", 0) == 0 && l.find("63.78kcal") != std::string::npos && l.find("12.71") != std::string::npos)
            found = true;
    CHECK(found);
    const auto csv = render_eval_report(rep, ReportFormat::csv);
    CHECK(csv.find("\"published reference (INIMD, not reproduced)\",calories_mae,63.78,kcal,") != std::string::npos);
    CHECK(csv.find("measured,f_sum,90.0000,%,") != std::string::npos);
    CHECK(render_eval_report(rep, ReportFormat::csv) == csv);
}
