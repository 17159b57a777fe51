#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "mealscan/core/io.hpp"
#include "mealscan/core/random.hpp"
#include "mealscan/synth/synth.hpp"
#include "test_util.hpp"

using namespace mealscan;
using namespace mealscan::synth;

namespace {

SceneSpec sample_scene() {
    const auto lib = default_plate_library();
    SceneSpec s;
    s.tilt_x = 0.03;
    s.tilt_y = -0.02;
    s.seed = 21;
    FoodShape main;
    main.kind = ShapeKind::cap;
    main.offset = {-0.03, 0};
    main.radius = 0.06;
    main.height = 0.02;
    FoodShape veg;
    veg.kind = ShapeKind::box;
    veg.food_category = food::vegetable;
    veg.offset = {0.035, -0.03};
    veg.length = 0.025;
    veg.width = 0.02;
    veg.height = 0.015;
    veg.angle = 0.4;
    FoodShape side;
    side.kind = ShapeKind::cone;
    side.food_category = food::side_dish;
    side.offset = {0.035, 0.03};
    side.radius = 0.018;
    side.height = 0.025;
    s.plates.push_back({lib.at(plate::main_plate), {-0.125, 0}, {main, veg, side}});
    FoodShape salad;
    salad.food_category = food::salad;
    salad.radius = 0.05;
    salad.height = 0.025;
    s.plates.push_back({lib.at(plate::salad_bowl), {0.015, -0.085}, {salad}});
    FoodShape sauce;
    sauce.food_category = food::sauce;
    sauce.radius = 0.03;
    sauce.height = 0.012;
    s.plates.push_back({lib.at(plate::packaged), {0.13, 0.085}, {sauce}});
    return s;
}

std::size_t count(const LabelMap& m, int label) {
    std::size_t n = 0;
    for (auto v : m.labels.data) n += v == label;
    return n;
}

// Closed forms, written out independently of FoodShape::volume.
double oracle_volume(const FoodShape& f) {
    if (!(f.height > 0)) return 0;
    switch (f.kind) {
        case ShapeKind::cap: return std::numbers::pi * f.height * f.height * (3 * f.radius - f.height) / 3;
        case ShapeKind::box: return f.length * f.width * f.height;
        case ShapeKind::cone: return std::numbers::pi * f.radius * f.radius * f.height / 3;
    }
    return 0;
}

}  // namespace

TEST_CASE("rendering is deterministic in the seed") {
    const auto s = sample_scene();
    const auto [a, ta] = render_scene(s);
    const auto [b, tb] = render_scene(s);
    CHECK(a.depth == b.depth);
    CHECK(a.color == b.color);
    CHECK(ta.food.labels == tb.food.labels);
    auto other = s;
    other.seed = 22;
    CHECK_FALSE(render_scene(other).first.depth == a.depth);
    // noise never touches the labels
    CHECK(render_scene(other).second.food.labels == ta.food.labels);
}

TEST_CASE("label maps partition the image consistently") {
    auto s = sample_scene();
    s.noise_sigma = 0;
    s.dropout = 0;
    const auto [frame, truth] = render_scene(s);
    CHECK_NOTHROW(truth.food.validate());
    CHECK_NOTHROW(truth.plate.validate());
    for (std::size_t i = 0; i < truth.food.labels.size(); ++i) {
        if (truth.food.labels.data[i]) CHECK(truth.plate.labels.data[i] != 0);
        CHECK(frame.depth.data[i] > 0);
    }
    for (int c : {food::main_course, food::vegetable, food::side_dish, food::salad, food::sauce})
        CHECK(count(truth.food, c) > 100);
    for (int p : {plate::main_plate, plate::salad_bowl, plate::packaged}) CHECK(count(truth.plate, p) > 1000);
    // lidded container: the lid carries the sauce label over the whole rim disc
    std::size_t lid_plate = 0, lid_food = 0;
    for (std::size_t i = 0; i < truth.plate.labels.size(); ++i)
        if (truth.plate.labels.data[i] == plate::packaged) {
            ++lid_plate;
            lid_food += truth.food.labels.data[i] == food::sauce;
        }
    CHECK(lid_food == lid_plate);
    CHECK(truth.item_volume_ml.size() == 5);
    CHECK(truth.poses.size() == 3);
}

TEST_CASE("flat colours are distinct per category") {
    std::set<Rgb> seen{tray_color()};
    for (int c = 1; c < kFoodClasses; ++c) CHECK(seen.insert(food_color(c)).second);
    for (int p = 1; p < kPlateClasses; ++p) CHECK(seen.insert(plate_color(p)).second);
}

TEST_CASE("invalid scenes are rejected") {
    auto s = sample_scene();
    s.plates[0].center = {-0.3, 0};
    CHECK_THROWS_WITH_AS(render_scene(s), doctest::Contains("frustum"), Error);
    s = sample_scene();
    s.plates[1].foods[0].offset = {0.04, 0};
    CHECK_THROWS_WITH_AS(render_scene(s), doctest::Contains("rim"), Error);
    s = sample_scene();
    s.plates[1].center = {-0.05, 0};
    CHECK_THROWS_AS(render_scene(s), Error);
}

TEST_CASE("eaten scenes shrink analytic volumes by the eaten fraction") {
    const auto s = sample_scene();
    CHECK_THROWS_AS(make_eaten_scene(s, {0.5}), Error);
    CHECK_THROWS_AS(make_eaten_scene(s, {0, 0, 0, 1.5, 0}), Error);

    const auto same = make_eaten_scene(s, {0, 0, 0, 0, 0});
    for (std::size_t p = 0; p < s.plates.size(); ++p)
        for (std::size_t f = 0; f < s.plates[p].foods.size(); ++f) {
            CHECK(same.plates[p].foods[f].height == s.plates[p].foods[f].height);
            CHECK(same.plates[p].foods[f].radius == s.plates[p].foods[f].radius);
        }

    const auto gone = make_eaten_scene(s, {1, 1, 1, 1, 1});
    auto quiet = gone;
    quiet.noise_sigma = 0;
    const auto [frame, truth] = render_scene(quiet);
    for (double v : truth.item_volume_ml) CHECK(v == 0.0);
    // only the lidded container still shows a food label
    CHECK(count(truth.food, food::main_course) == 0);
    CHECK(count(truth.food, food::salad) == 0);
    CHECK(count(truth.food, food::sauce) > 0);

    const auto half = make_eaten_scene(s, {0, 0.5, 0, 0, 0});
    CHECK(half.plates[0].foods[1].height == s.plates[0].foods[1].height / 2);
    CHECK(oracle_volume(half.plates[0].foods[1]) == doctest::Approx(oracle_volume(s.plates[0].foods[1]) / 2));

    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> frac(5);
        for (double& f : frac) f = rng.uniform();
        const auto eaten = make_eaten_scene(s, frac);
        std::size_t k = 0;
        for (std::size_t p = 0; p < s.plates.size(); ++p)
            for (std::size_t f = 0; f < s.plates[p].foods.size(); ++f, ++k) {
                const double want = (1 - frac[k]) * oracle_volume(s.plates[p].foods[f]);
                CHECK(std::abs(oracle_volume(eaten.plates[p].foods[f]) - want) <= 1e-6 * want);
            }
    }
}

TEST_CASE("make_dataset writes a loadable, reproducible tree") {
    TempDir a, b;
    const auto dirs = make_dataset(3, 7, a.path());
    make_dataset(3, 7, b.path());
    REQUIRE(dirs.size() == 3);
    CHECK(list_meal_dirs(a.path()).size() == 3);
    CHECK(load_plate_library(a / "plates.json").size() == 5);
    for (const auto& entry : fs::recursive_directory_iterator(a.path())) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), a.path());
        CAPTURE(rel.string());
        CHECK(read_file(entry.path()) == read_file(b.path() / rel));
    }
    for (const auto& dir : dirs) {
        const auto record = load_meal_record(dir / "meal.json");
        REQUIRE(record.before);
        REQUIRE(record.after);
        CHECK_NOTHROW(load_annotation(record.before->food, record.before->plate));
        CHECK_NOTHROW(load_annotation(record.after->food, record.after->plate));
        const auto frame = load_frame(record.before->color, record.before->depth, record.intrinsics);
        CHECK(frame.width() == 640);
        const auto truth = read_json(dir / "truth.json");
        REQUIRE(truth.at("items").size() == record.items.size());
        NutrientVector total;
        for (std::size_t k = 0; k < record.items.size(); ++k) {
            const auto& item = truth.at("items")[k];
            const double f = item.at("eaten_fraction").get<double>();
            const auto intake = nutrients_from_json(item.at("intake"));
            for (std::size_t c = 0; c < NutrientVector::kCount; ++c)
                CHECK(std::abs(intake[c] - record.items[k].total_nutrients[c] * f) <= 1e-9);
            const double vb = item.at("volume_before_ml").get<double>(), va = item.at("volume_after_ml").get<double>();
            CHECK(vb > 0);
            CHECK(std::abs(va - (1 - f) * vb) <= 1e-6 * vb);
            total += intake;
        }
        const auto stored = nutrients_from_json(truth.at("intake_total"));
        for (std::size_t c = 0; c < NutrientVector::kCount; ++c) CHECK(stored[c] == doctest::Approx(total[c]));
    }
    TempDir c;
    CHECK(make_dataset(3, 8, c.path()).size() == 3);
    CHECK_FALSE(read_file(c / "meal_000/meal.json") == read_file(a / "meal_000/meal.json"));
}

TEST_CASE("make_dataset errors") {
    TempDir dir;
    CHECK_THROWS_AS(make_dataset(2, 1, dir.path()), Error);
    std::ofstream(dir / "file") << "x";
    try {
        make_dataset(3, 1, dir / "file" / "sub");
        FAIL("expected an io error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::io);
    }
}

TEST_CASE("random meals keep the sauce with the salad") {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const auto m = random_meal(seed, "m");
        CHECK_NOTHROW(m.before.validate());
        double salad = -1, sauce = -1;
        std::size_t k = 0;
        for (const auto& p : m.before.plates)
            for (const auto& f : p.foods) {
                if (f.food_category == food::salad) salad = m.eaten_fraction[k];
                if (p.model.category == plate::packaged) sauce = m.eaten_fraction[k];
                ++k;
            }
        if (sauce >= 0) CHECK(sauce == salad);
        CHECK(m.record.items.size() == m.before.item_count());
    }
}
