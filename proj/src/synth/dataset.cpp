#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "mealscan/core/random.hpp"
#include "mealscan/synth/synth.hpp"

namespace mealscan::synth {

namespace {

PlateModel flat_bottom(int category, double rim_radius, double depth, double flat_radius) {
    PlateModel m;
    m.category = category;
    m.rim_radius = rim_radius;
    m.profile = {{0.0, -depth}, {flat_radius, -depth}};
    for (int i = 1; i <= 8; ++i) {
        const double r = flat_radius + (rim_radius - flat_radius) * i / 8.0;
        const double s = double(i) / 8;
        m.profile.push_back({r, -depth * (1 - s * s)});
    }
    return m;
}

PlateModel paraboloid(int category, double rim_radius, double depth) {
    PlateModel m;
    m.category = category;
    m.rim_radius = rim_radius;
    for (int i = 0; i <= 40; ++i) {
        const double r = rim_radius * i / 40.0;
        m.profile.push_back({r, std::min(0.0, -depth * (1 - (r / rim_radius) * (r / rim_radius)))});
    }
    return m;
}

// Per 100 g: calories, cho, fat, protein, salt, fiber, sodium.
NutrientVector per_100g(int category) {
    switch (category) {
        case food::soup: return {45, 6, 1.5, 2, 0.8, 0.5, 0.31};
        case food::main_course: return {180, 12, 9, 14, 0.9, 1.2, 0.35};
        case food::sauce: return {120, 8, 9, 1.5, 1.2, 0.3, 0.47};
        case food::vegetable: return {35, 6, 0.3, 2, 0.2, 2.8, 0.08};
        case food::side_dish: return {150, 28, 3, 4, 0.5, 2, 0.2};
        case food::salad: return {25, 3.5, 0.3, 1.2, 0.1, 1.8, 0.04};
        default: return {210, 30, 8, 3.5, 0.2, 1, 0.08};
    }
}

double density(int category) {
    static constexpr double g_per_ml[kFoodClasses] = {1, 1.0, 0.9, 1.05, 0.6, 0.8, 0.35, 0.8};
    return g_per_ml[std::clamp(category, 0, kFoodClasses - 1)];
}

FoodShape cap(Rng& rng, int category, Vec2 offset, double a_lo, double a_hi, double h_lo, double h_hi) {
    FoodShape s;
    s.kind = ShapeKind::cap;
    s.food_category = category;
    s.offset = offset;
    const double a = rng.uniform(a_lo, a_hi);
    s.height = rng.uniform(h_lo, h_hi);
    s.radius = (a * a + s.height * s.height) / (2 * s.height);
    return s;
}

FoodShape box(Rng& rng, int category, Vec2 offset, double side_lo, double side_hi, double h_lo, double h_hi) {
    FoodShape s;
    s.kind = ShapeKind::box;
    s.food_category = category;
    s.offset = offset;
    s.length = rng.uniform(side_lo, side_hi);
    s.width = rng.uniform(side_lo, side_hi);
    s.height = rng.uniform(h_lo, h_hi);
    s.angle = rng.uniform(0, std::numbers::pi);
    return s;
}

FoodShape cone(Rng& rng, int category, Vec2 offset, double r_lo, double r_hi, double h_lo, double h_hi) {
    FoodShape s;
    s.kind = ShapeKind::cone;
    s.food_category = category;
    s.offset = offset;
    s.radius = rng.uniform(r_lo, r_hi);
    s.height = rng.uniform(h_lo, h_hi);
    return s;
}

double draw_fraction(Rng& rng) {
    const double u = rng.uniform();
    if (u < 0.1) return 0.0;
    if (u < 0.2) return 1.0;
    return std::round(rng.uniform() * 1000) / 1000;
}

MealScene draw_meal(Rng& rng, const std::string& meal_id, const DatasetOptions& options) {
    const auto lib = default_plate_library();
    MealScene m;
    SceneSpec& s = m.before;
    s.intrinsics.depth_scale = 1e-4;
    s.tray_distance = rng.uniform(0.38, 0.42);
    s.tilt_x = rng.uniform(-4, 4) * std::numbers::pi / 180;
    s.tilt_y = rng.uniform(-4, 4) * std::numbers::pi / 180;
    s.noise_sigma = options.noise_sigma;
    s.dropout = options.dropout;
    s.seed = rng.next();
    auto jitter = [&] { return rng.uniform(-0.004, 0.004); };

    PlatePlacement main{lib.at(plate::main_plate), {-0.125 + jitter(), jitter()}, {}};
    main.foods.push_back(rng.bernoulli(0.5) ? cap(rng, food::main_course, {-0.03, 0}, 0.03, 0.04, 0.012, 0.025)
                                            : box(rng, food::main_course, {-0.03, 0}, 0.035, 0.05, 0.01, 0.02));
    if (rng.bernoulli(0.7)) main.foods.push_back(box(rng, food::vegetable, {0.035, -0.03}, 0.02, 0.03, 0.01, 0.02));
    if (rng.bernoulli(0.7)) main.foods.push_back(cone(rng, food::side_dish, {0.035, 0.03}, 0.015, 0.021, 0.015, 0.03));
    s.plates.push_back(main);

    const bool salad = rng.bernoulli(0.6);
    if (salad) {
        PlatePlacement p{lib.at(plate::salad_bowl), {0.025 + jitter(), -0.085 + jitter()}, {}};
        p.foods.push_back(rng.bernoulli(0.5) ? cap(rng, food::salad, {0, 0}, 0.03, 0.04, 0.02, 0.03)
                                             : cone(rng, food::salad, {0, 0}, 0.03, 0.04, 0.02, 0.035));
        s.plates.push_back(p);
    }
    if (rng.bernoulli(0.6)) {
        PlatePlacement p{lib.at(plate::soup_bowl), {0.025 + jitter(), 0.085 + jitter()}, {}};
        p.foods.push_back(cap(rng, food::soup, {0, 0}, 0.035, 0.042, 0.008, 0.015));
        s.plates.push_back(p);
    }
    if (rng.bernoulli(0.6)) {
        PlatePlacement p{lib.at(plate::dessert_bowl), {0.14 + jitter(), -0.085 + jitter()}, {}};
        p.foods.push_back(rng.bernoulli(0.5) ? box(rng, food::dessert, {0, 0}, 0.025, 0.034, 0.015, 0.025)
                                             : cap(rng, food::dessert, {0, 0}, 0.025, 0.032, 0.015, 0.025));
        s.plates.push_back(p);
    }
    if (salad && rng.bernoulli(0.7)) {
        PlatePlacement p{lib.at(plate::packaged), {0.14 + jitter(), 0.085 + jitter()}, {}};
        p.foods.push_back(cap(rng, food::sauce, {0, 0}, 0.02, 0.025, 0.01, 0.015));
        s.plates.push_back(p);
    }

    double salad_fraction = 0;
    for (const auto& p : s.plates)
        for (const auto& f : p.foods) {
            const double frac = draw_fraction(rng);
            if (f.food_category == food::salad) salad_fraction = frac;
            m.eaten_fraction.push_back(frac);
        }
    // Packaged sauce follows the salad, matching the consumption heuristic.
    std::size_t k = 0;
    for (const auto& p : s.plates)
        for (std::size_t j = 0; j < p.foods.size(); ++j, ++k)
            if (p.model.category == plate::packaged) m.eaten_fraction[k] = salad_fraction;

    m.record.meal_id = meal_id;
    m.record.intrinsics = s.intrinsics;
    for (const auto& p : s.plates)
        for (const auto& f : p.foods) {
            MealItem item;
            item.food_category = f.food_category;
            item.plate_category = p.model.category;
            item.served_weight_g = std::round(f.volume() * 1e6 * density(f.food_category) * 10) / 10;
            NutrientVector n = per_100g(f.food_category);
            for (std::size_t c = 0; c < NutrientVector::kCount; ++c)
                n[c] = std::round(n[c] * rng.uniform(0.85, 1.15) * item.served_weight_g / 100 * 1000) / 1000;
            if (f.food_category == food::soup && rng.bernoulli(0.5)) n.fiber = 0;
            item.total_nutrients = n;
            m.record.items.push_back(item);
        }
    return m;
}

std::uint64_t meal_seed(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 finalizer
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void write_frame(const fs::path& dir, const RgbdFrame& frame, const SceneTruth& truth) {
    fs::create_directories(dir);
    save_frame(frame, dir / "color.png", dir / "depth.png");
    save_label_map(truth.food, dir / "food.png");
    save_label_map(truth.plate, dir / "plate.png");
}

}  // namespace

PlateLibrary default_plate_library() {
    PlateLibrary lib;
    lib[plate::main_plate] = flat_bottom(plate::main_plate, 0.085, 0.015, 0.065);
    lib[plate::salad_bowl] = paraboloid(plate::salad_bowl, 0.055, 0.04);
    lib[plate::soup_bowl] = paraboloid(plate::soup_bowl, 0.055, 0.035);
    lib[plate::dessert_bowl] = paraboloid(plate::dessert_bowl, 0.045, 0.03);
    auto packaged = flat_bottom(plate::packaged, 0.035, 0.03, 0.028);
    packaged.lidded = true;
    lib[plate::packaged] = packaged;
    return lib;
}

MealScene random_meal(std::uint64_t seed, const std::string& meal_id, const DatasetOptions& options) {
    Rng rng(seed);
    for (int attempt = 0; attempt < 100; ++attempt) {
        MealScene m = draw_meal(rng, meal_id, options);
        try {
            m.before.validate();
            return m;
        } catch (const Error&) {
            // jitter or tilt pushed a plate out of view; draw again
        }
    }
    throw Error(ErrorKind::validation, "could not place a meal inside the camera frustum");
}

void write_meal(const fs::path& dir, const MealScene& m, const DatasetOptions& options) {
    SceneSpec after = make_eaten_scene(m.before, m.eaten_fraction);
    after.seed = meal_seed(m.before.seed, 1);

    const auto [before_frame, before_truth] = render_scene(m.before);
    const auto [after_frame, after_truth] = render_scene(after);
    write_frame(dir / "before", before_frame, before_truth);
    write_frame(dir / "after", after_frame, after_truth);
    write_json(dir / "meal.json", to_json(m.record));

    nlohmann::json items = nlohmann::json::array();
    NutrientVector total;
    for (std::size_t k = 0; k < m.record.items.size(); ++k) {
        const auto& item = m.record.items[k];
        const auto intake = item.total_nutrients.scaled(m.eaten_fraction[k]);
        total += intake;
        items.push_back({{"food_category", item.food_category},
                         {"plate_category", item.plate_category},
                         {"volume_before_ml", before_truth.item_volume_ml[k]},
                         {"volume_after_ml", after_truth.item_volume_ml[k]},
                         {"eaten_fraction", m.eaten_fraction[k]},
                         {"intake", to_json(intake)}});
    }
    nlohmann::json poses = nlohmann::json::array();
    for (std::size_t p = 0; p < before_truth.poses.size(); ++p) {
        auto pose = volumetry::to_json(before_truth.poses[p]);
        pose["plate_category"] = m.before.plates[p].model.category;
        poses.push_back(pose);
    }
    write_json(dir / "truth.json", {{"meal_id", m.record.meal_id},
                                    {"items", items},
                                    {"intake_total", to_json(total)},
                                    {"tray", volumetry::to_json(before_truth.tray)},
                                    {"poses", poses},
                                    {"noise_sigma", options.noise_sigma},
                                    {"dropout", options.dropout}});
}

std::vector<fs::path> make_dataset(std::size_t n_meals, std::uint64_t seed, const fs::path& root,
                                   const DatasetOptions& options) {
    if (n_meals < 3) throw Error(ErrorKind::validation, "a dataset needs at least 3 meals");
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec || !fs::is_directory(root))
        throw Error(ErrorKind::io, fmt::format("cannot create dataset directory {}: {}", root.string(), ec.message()));
    save_plate_library(root / "plates.json", default_plate_library());

    std::vector<fs::path> dirs;
    for (std::size_t i = 0; i < n_meals; ++i) {
        const std::string id = fmt::format("meal_{:03d}", i);
        const fs::path dir = root / id;
        write_meal(dir, random_meal(meal_seed(seed, i), id, options), options);
        dirs.push_back(dir);
    }
    return dirs;
}

}  // namespace mealscan::synth
