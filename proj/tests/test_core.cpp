#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "mealscan/core/io.hpp"
#include "mealscan/core/random.hpp"
#include "mealscan/core/split.hpp"
#include "test_util.hpp"

using namespace mealscan;

namespace {

RgbdFrame small_frame(int w, int h) {
    RgbdFrame f;
    f.color = ColorImage(w, h);
    f.depth = Image<double>(w, h, 0.4);
    f.intrinsics = {50, 50, w / 2.0, h / 2.0, 0.001};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto* p = f.color.pixel(x, y);
            p[0] = std::uint8_t(x * 7);
            p[1] = std::uint8_t(y * 5);
            p[2] = std::uint8_t(x + y);
        }
    return f;
}

nlohmann::json meal_json() {
    return nlohmann::json::parse(R"({
      "meal_id": "m001",
      "items": [{"food_category": "main course", "plate_category": "main plate",
                 "nutrients": {"calories": 506, "cho": 60, "fat": 18, "protein": 25,
                               "salt": 2.1, "fiber": 4, "sodium": 0.8},
                 "served_weight_g": 350}]
    })");
}

}  // namespace

TEST_CASE("load_frame converts stored millimetres to metres and keeps zero invalid") {
    TempDir dir;
    Image<std::uint16_t> raw(4, 3, 400);
    raw(1, 1) = 0;
    write_gray16_png(dir / "depth.png", raw);
    write_color_png(dir / "color.png", ColorImage(4, 3));
    auto frame = load_frame(dir / "color.png", dir / "depth.png", {10, 10, 2, 1.5, 0.001});
    CHECK(frame.depth(0, 0) == doctest::Approx(0.400).epsilon(1e-12));
    CHECK_FALSE(frame.valid_depth(1, 1));
    CHECK(frame.valid_depth(2, 2));
}

TEST_CASE("load_frame rejects mismatched sizes and bad depth scale") {
    TempDir dir;
    write_color_png(dir / "color.png", ColorImage(640, 480));
    write_gray16_png(dir / "depth.png", Image<std::uint16_t>(640, 481, 400));
    CHECK_THROWS_WITH_AS(load_frame(dir / "color.png", dir / "depth.png", CameraIntrinsics{}),
                         doctest::Contains("dimension mismatch"), Error);
    write_gray16_png(dir / "depth.png", Image<std::uint16_t>(640, 480, 400));
    CameraIntrinsics bad;
    bad.depth_scale = 0;
    CHECK_THROWS_AS(load_frame(dir / "color.png", dir / "depth.png", bad), Error);
    CHECK_THROWS_AS(load_frame(dir / "missing.png", dir / "depth.png", CameraIntrinsics{}), Error);
}

TEST_CASE("frame save/load round trip is bit-identical") {
    TempDir dir;
    auto frame = small_frame(16, 12);
    frame.depth(3, 4) = 0.0;
    frame.depth(5, 5) = 0.387;
    save_frame(frame, dir / "c.png", dir / "d.png");
    const auto once = load_frame(dir / "c.png", dir / "d.png", frame.intrinsics);
    save_frame(once, dir / "c2.png", dir / "d2.png");
    const auto twice = load_frame(dir / "c2.png", dir / "d2.png", frame.intrinsics);
    CHECK(once.color == frame.color);
    CHECK(twice.color == once.color);
    CHECK(twice.depth == once.depth);
    CHECK(read_file(dir / "d.png") == read_file(dir / "d2.png"));
}

TEST_CASE("load_annotation validates class ranges") {
    TempDir dir;
    Image<std::uint8_t> food(8, 8, 0), plate(8, 8, 0);
    write_gray8_png(dir / "f.png", food);
    write_gray8_png(dir / "p.png", plate);
    SUBCASE("all-zero maps are a valid empty annotation") {
        auto [f, p] = load_annotation(dir / "f.png", dir / "p.png");
        CHECK(f.domain == LabelDomain::food);
        CHECK(p.domain == LabelDomain::plate);
    }
    SUBCASE("background, soup and salad are valid food labels") {
        food(1, 1) = 1;
        food(2, 2) = 6;
        write_gray8_png(dir / "f.png", food);
        CHECK_NOTHROW(load_annotation(dir / "f.png", dir / "p.png"));
    }
    SUBCASE("plate label 7 is rejected") {
        plate(3, 3) = 7;
        write_gray8_png(dir / "p.png", plate);
        CHECK_THROWS_WITH_AS(load_annotation(dir / "f.png", dir / "p.png"), doctest::Contains("plate label 7"), Error);
    }
    SUBCASE("food label 8 is rejected") {
        food(0, 0) = 8;
        write_gray8_png(dir / "f.png", food);
        CHECK_THROWS_AS(load_annotation(dir / "f.png", dir / "p.png"), Error);
    }
}

TEST_CASE("meal records parse names and enforce the schema") {
    SUBCASE("field passthrough") {
        auto r = meal_record_from_json(meal_json(), {});
        REQUIRE(r.items.size() == 1);
        CHECK(r.items[0].food_category == food::main_course);
        CHECK(r.items[0].plate_category == plate::main_plate);
        CHECK(r.items[0].total_nutrients.calories == 506);
    }
    SUBCASE("missing sodium names the field") {
        auto j = meal_json();
        j["items"][0]["nutrients"].erase("sodium");
        CHECK_THROWS_WITH_AS(meal_record_from_json(j, {}), doctest::Contains("sodium"), Error);
    }
    SUBCASE("empty items") {
        auto j = meal_json();
        j["items"] = nlohmann::json::array();
        CHECK_THROWS_WITH_AS(meal_record_from_json(j, {}), "meal has no items", Error);
    }
    SUBCASE("unknown category name") {
        auto j = meal_json();
        j["items"][0]["food_category"] = "pizza";
        CHECK_THROWS_WITH_AS(meal_record_from_json(j, {}), doctest::Contains("pizza"), Error);
    }
    SUBCASE("numeric categories and json round trip") {
        auto r = meal_record_from_json(meal_json(), {});
        auto again = meal_record_from_json(to_json(r), {});
        CHECK(again.items[0].total_nutrients == r.items[0].total_nutrients);
        CHECK(again.items[0].served_weight_g == 350);
    }
}

TEST_CASE("meal directories resolve before/after frame paths") {
    TempDir dir;
    const auto meal = dir / "m001";
    fs::create_directories(meal / "before");
    write_json(meal / "meal.json", meal_json());
    write_color_png(meal / "before" / "color.png", ColorImage(4, 4));
    write_gray16_png(meal / "before" / "depth.png", Image<std::uint16_t>(4, 4, 400));
    auto r = load_meal_record(meal / "meal.json");
    REQUIRE(r.before.has_value());
    CHECK_FALSE(r.after.has_value());
    CHECK(r.before->food.empty());
    CHECK(list_meal_dirs(dir.path()).size() == 1);

    fs::remove_all(meal / "before");
    fs::create_directories(meal / "after");
    write_color_png(meal / "after" / "color.png", ColorImage(4, 4));
    CHECK_THROWS_WITH_AS(load_meal_record(meal / "meal.json"), doctest::Contains("without before"), Error);
}

TEST_CASE("split sizes follow the 232:30:60 proportions") {
    auto s = split_sizes(322);
    CHECK(s.train == 232);
    CHECK(s.val == 30);
    CHECK(s.test == 60);
    // 50 * 30 / 322 = 4.66 -> 5 and 50 * 60 / 322 = 9.32 -> 9; train absorbs the rest.
    s = split_sizes(50);
    CHECK(s.train == 36);
    CHECK(s.val == 5);
    CHECK(s.test == 9);
    CHECK_THROWS_AS(split_sizes(2), Error);
}

TEST_CASE("split_dataset is a deterministic partition") {
    Rng gen(99);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 3 + gen.below(400);
        std::vector<int> records(n);
        for (std::size_t i = 0; i < n; ++i) records[i] = int(i);
        const auto seed = gen.next();
        auto a = split_dataset(records, seed);
        auto b = split_dataset(records, seed);
        CHECK(a.train == b.train);
        CHECK(a.val == b.val);
        CHECK(a.test == b.test);
        std::set<int> all;
        all.insert(a.train.begin(), a.train.end());
        all.insert(a.val.begin(), a.val.end());
        all.insert(a.test.begin(), a.test.end());
        CHECK(all.size() == n);
        CHECK(a.train.size() + a.val.size() + a.test.size() == n);
    }
}

TEST_CASE("probability map files round-trip exactly") {
    TempDir dir;
    ClassProbabilities p(5, 3, 8);
    Rng rng(3);
    for (double& v : p.values) v = rng.uniform();
    write_probability_map(dir / "p.bin", p);
    CHECK(fs::file_size(dir / "p.bin") == 16 + 5 * 3 * 8 * sizeof(double));
    CHECK(read_probability_map(dir / "p.bin") == p);
}

TEST_CASE("plate model profile lookup and interior volume") {
    PlateModel bowl;
    bowl.category = plate::soup_bowl;
    bowl.rim_radius = 0.06;
    for (int i = 0; i <= 60; ++i) {
        const double r = 0.06 * i / 60.0;
        bowl.profile.push_back({r, -0.03 * (1 - (r / 0.06) * (r / 0.06))});
    }
    bowl.validate();
    CHECK(bowl.height_at(0.0) == doctest::Approx(-0.03));
    CHECK(bowl.height_at(0.2) == 0.0);
    CHECK(bowl.rim_height() == doctest::Approx(0.03));
    // Paraboloid bowl: V = pi R^2 d / 2.
    CHECK(bowl.interior_volume() == doctest::Approx(std::numbers::pi * 0.06 * 0.06 * 0.03 / 2).epsilon(1e-3));

    PlateModel bad = bowl;
    bad.profile[3][0] = bad.profile[2][0];
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = bowl;
    bad.profile[1][1] = 0.01;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("nutrient vectors index by name order") {
    NutrientVector n{1, 2, 3, 4, 5, 6, 7};
    for (std::size_t i = 0; i < NutrientVector::kCount; ++i) CHECK(n[i] == double(i + 1));
    CHECK(nutrients_from_json(to_json(n)) == n);
    CHECK(n.scaled(2).sodium == 14);
}
