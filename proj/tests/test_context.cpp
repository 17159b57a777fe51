#include <doctest.h>

#include <algorithm>
#include <map>

#include "mealscan/context/context.hpp"
#include "mealscan/core/components.hpp"
#include "mealscan/core/random.hpp"

using namespace mealscan;
using namespace mealscan::context;

namespace {

LabelMap food_map(int w, int h, std::uint8_t fill = 0) { return {LabelDomain::food, Image<std::uint8_t>(w, h, fill)}; }
LabelMap plate_map(int w, int h, std::uint8_t fill = 0) { return {LabelDomain::plate, Image<std::uint8_t>(w, h, fill)}; }

ClassProbabilities uniform_probs(int w, int h) {
    ClassProbabilities p(w, h, kFoodClasses);
    std::fill(p.values.begin(), p.values.end(), 1.0 / kFoodClasses);
    return p;
}

CooccurrenceTable table_with(int plate, std::map<int, double> entries) {
    CooccurrenceTable t = CooccurrenceTable::from_counts({});
    double rest = 1.0;
    for (auto [k, v] : entries) rest -= v;
    const double fill = rest / double(kFoodTypes - int(entries.size()));
    for (int k = 1; k <= kFoodTypes; ++k)
        t.p_food_given_plate[plate - 1][k - 1] = entries.count(k) ? entries[k] : fill;
    return t;
}

// Random blobs of food on random plates with random marginals.
struct Scene {
    ClassProbabilities probs;
    LabelMap food, plate;
};
Scene random_scene(int w, int h, std::uint64_t seed) {
    Rng rng(seed);
    Scene s{ClassProbabilities(w, h, kFoodClasses), food_map(w, h), plate_map(w, h)};
    for (int b = 0; b < 6; ++b) {
        const int cx = int(rng.below(w)), cy = int(rng.below(h)), r = 2 + int(rng.below(6));
        const auto f = std::uint8_t(1 + rng.below(7)), p = std::uint8_t(rng.below(6));
        for (int y = std::max(0, cy - r); y < std::min(h, cy + r); ++y)
            for (int x = std::max(0, cx - r); x < std::min(w, cx + r); ++x) {
                s.food.labels(x, y) = f;
                s.plate.labels(x, y) = p;
            }
    }
    for (std::size_t i = 0; i < s.probs.pixels(); ++i) {
        auto d = s.probs.at(i);
        double sum = 0;
        for (double& v : d) sum += (v = rng.uniform(0.01, 1));
        for (double& v : d) v /= sum;
    }
    return s;
}

}  // namespace

TEST_CASE("co-occurrence counts with add-1 smoothing") {
    auto f1 = food_map(40, 25), p1 = plate_map(40, 25);
    auto f2 = food_map(10, 10), p2 = plate_map(10, 10);
    for (int y = 0; y < 25; ++y)
        for (int x = 0; x < 36; ++x) {
            f1.labels(x, y) = food::salad;
            p1.labels(x, y) = plate::salad_bowl;
        }
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) {
            f2.labels(x, y) = food::salad;
            p2.labels(x, y) = plate::salad_bowl;
        }
    // 900 + 100 salad pixels, all on salad bowls.
    const auto t = estimate_cooccurrence({{f1, p1}, {f2, p2}});
    CHECK(t.counts[plate::salad_bowl - 1][food::salad - 1] == 1000);
    CHECK(t.probability(plate::salad_bowl, food::salad) == doctest::Approx(1001.0 / 1007.0).epsilon(1e-15));
    CHECK(t.probability(plate::salad_bowl, food::soup) == doctest::Approx(1.0 / 1007.0).epsilon(1e-15));
    for (int k = 1; k <= kFoodTypes; ++k) CHECK(t.probability(plate::soup_bowl, k) == doctest::Approx(1.0 / 7).epsilon(1e-15));
    CHECK_NOTHROW(t.validate());

    const auto swapped = estimate_cooccurrence({{f2, p2}, {f1, p1}});
    CHECK(swapped.p_food_given_plate == t.p_food_given_plate);
    CHECK(cooccurrence_from_json(to_json(t)).p_food_given_plate == t.p_food_given_plate);
    CHECK_THROWS_AS(estimate_cooccurrence({}), Error);
}

TEST_CASE("rows of estimated tables are stochastic and positive") {
    std::vector<std::pair<LabelMap, LabelMap>> data;
    for (int i = 0; i < 5; ++i) {
        auto s = random_scene(30, 20, 100 + i);
        data.emplace_back(s.food, s.plate);
    }
    const auto t = estimate_cooccurrence(data);
    for (const auto& row : t.p_food_given_plate) {
        double sum = 0;
        for (double v : row) {
            CHECK(v > 0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("plate context flips a main-course guess to salad on a salad bowl") {
    const int n = 10;
    auto probs = uniform_probs(n, n);
    auto food = food_map(n, n, food::main_course);
    auto plate = plate_map(n, n, plate::salad_bowl);
    for (std::size_t i = 0; i < probs.pixels(); ++i) {
        auto d = probs.at(i);
        std::fill(d.begin(), d.end(), 0.15 / 6);
        d[food::main_course] = 0.45;
        d[food::salad] = 0.40;
    }
    const auto table = table_with(plate::salad_bowl, {{food::salad, 0.8}, {food::main_course, 0.05}});
    ContextParams prm;  // alpha = beta = 0.5
    prm.min_region_px = 0;
    // Scores: main 0.5 * 45 + 0.5 * 5 = 25, salad 0.5 * 40 + 0.5 * 80 = 60.
    const auto out = refine_context(probs, food, plate, table, prm);
    for (auto v : out.labels.data) CHECK(v == food::salad);

    prm.beta = 0;
    prm.alpha = 1;
    const auto network_only = refine_context(probs, food, plate, table, prm);
    for (auto v : network_only.labels.data) CHECK(v == food::main_course);
}

TEST_CASE("components over no plate ignore the table") {
    const int n = 8;
    auto probs = uniform_probs(n, n);
    for (std::size_t i = 0; i < probs.pixels(); ++i) probs.at(i)[food::dessert] += 0.01, probs.at(i)[0] -= 0.01;
    auto food = food_map(n, n, food::soup);
    auto plate = plate_map(n, n, 0);
    ContextParams prm;
    prm.min_region_px = 0;
    prm.beta = 1000;
    const auto out = refine_context(probs, food, plate, table_with(plate::soup_bowl, {{food::soup, 0.99}}), prm);
    for (auto v : out.labels.data) CHECK(v == food::dessert);
}

TEST_CASE("small components become background, threshold scales with area") {
    ContextParams prm;
    CHECK(prm.min_region_for(64, 64) == 25);
    CHECK(prm.min_region_for(128, 128) == 100);
    auto probs = uniform_probs(64, 64);
    auto food = food_map(64, 64);
    auto plate = plate_map(64, 64, plate::main_plate);
    for (int i = 0; i < 24; ++i) food.labels(i, 2) = food::vegetable;   // 24 px, dropped
    for (int i = 0; i < 25; ++i) food.labels(i, 10) = food::vegetable;  // 25 px, kept
    const auto out = refine_context(probs, food, plate, CooccurrenceTable::from_counts({}), prm);
    for (int i = 0; i < 24; ++i) CHECK(out.labels(i, 2) == 0);
    for (int i = 0; i < 25; ++i) CHECK(out.labels(i, 10) != 0);
}

TEST_CASE("output properties on random scenes") {
    for (int trial = 0; trial < 10; ++trial) {
        auto s = random_scene(48, 40, 7 + trial);
        std::vector<std::pair<LabelMap, LabelMap>> train{{s.food, s.plate}};
        const auto table = estimate_cooccurrence(train);
        ContextParams prm;
        prm.alpha = 0.3 + 0.1 * trial;
        prm.beta = 0.7;
        prm.min_region_px = 8;
        const auto out = refine_context(s.probs, s.food, s.plate, table, prm);
        for (std::size_t i = 0; i < out.labels.data.size(); ++i) {
            CHECK(out.labels.data[i] < kFoodClasses);
            if (s.food.labels.data[i] == 0) CHECK(out.labels.data[i] == 0);
        }
        // One label per input component.
        const auto comps = connected_components(s.food.labels);
        for (const auto& members : comps.pixels)
            for (auto p : members) CHECK(out.labels.data[p] == out.labels.data[members.front()]);

        // Common positive scaling leaves every label unchanged.
        for (double c : {3.0, 0.125, 7.0}) {
            ContextParams scaled = prm;
            scaled.alpha *= c;
            scaled.beta *= c;
            CHECK(refine_context(s.probs, s.food, s.plate, table, scaled).labels == out.labels);
        }
    }
}

TEST_CASE("beta zero with isolated pixels is the per-pixel argmax") {
    auto s = random_scene(20, 20, 3);
    auto food = food_map(20, 20);
    for (int y = 0; y < 20; y += 2)
        for (int x = 0; x < 20; x += 2) food.labels(x, y) = food::side_dish;
    ContextParams prm;
    prm.alpha = 1;
    prm.beta = 0;
    prm.min_region_px = 0;
    const auto out = refine_context(s.probs, food, s.plate, estimate_cooccurrence({{s.food, s.plate}}), prm);
    for (int y = 0; y < 20; y += 2)
        for (int x = 0; x < 20; x += 2) {
            const auto d = s.probs.at(std::size_t(y) * 20 + x);
            const auto best = std::max_element(d.begin() + 1, d.end()) - d.begin();
            CHECK(out.labels(x, y) == best);
        }
}

TEST_CASE("context parameters are validated") {
    ContextParams prm;
    prm.alpha = prm.beta = 0;
    CHECK_THROWS_AS(prm.validate(), Error);
    prm.alpha = -1;
    CHECK_THROWS_AS(prm.validate(), Error);
    auto probs = uniform_probs(4, 4);
    CHECK_THROWS_AS(refine_context(probs, food_map(4, 5), plate_map(4, 4), CooccurrenceTable::from_counts({}), ContextParams{}),
                    Error);
}

TEST_CASE("connected components use 8-connectivity") {
    Image<std::uint8_t> m(5, 5, 0);
    m(0, 0) = 1;
    m(1, 1) = 1;  // diagonal neighbour
    m(3, 3) = 1;
    m(4, 0) = 2;
    const auto c = connected_components(m);
    CHECK(c.count() == 3);
    CHECK(c.id(0, 0) == c.id(1, 1));
    CHECK(c.id(2, 2) == -1);
}
