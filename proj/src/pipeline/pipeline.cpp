#include "mealscan/pipeline/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include <fmt/format.h>

#include "mealscan/core/components.hpp"
#include "mealscan/core/split.hpp"

namespace mealscan::pipeline {

void log(const std::string& message) { fmt::print(stderr, "[mealscan] {}\n", message); }

namespace {

ColorImage network_color(const RgbdFrame& frame, const segnet::NetworkConfig& nc) {
    const auto t = segnet::make_input(frame, nc);
    ColorImage out(nc.input_width, nc.input_height);
    for (int y = 0; y < nc.input_height; ++y)
        for (int x = 0; x < nc.input_width; ++x)
            for (int c = 0; c < 3; ++c)
                out.pixel(x, y)[c] = std::uint8_t(std::clamp(std::lround(t.at(0, c, y, x) * 255.0), 0L, 255L));
    return out;
}

Mask select(const LabelMap& food, int food_class, const LabelMap& plate, int plate_class) {
    Mask m(food.width(), food.height(), 0);
    for (std::size_t i = 0; i < m.size(); ++i)
        m.data[i] = food.labels.data[i] == food_class && plate.labels.data[i] == plate_class;
    return m;
}

bool has_food(const LabelMap& food) {
    return std::any_of(food.labels.data.begin(), food.labels.data.end(), [](std::uint8_t v) { return v != 0; });
}

RgbdFrame load(const FramePaths& p, const MealRecord& r) { return load_frame(p.color, p.depth, r.intrinsics); }

FrameLabels load_labels(const FramePaths& p, const std::string& meal, const char* which) {
    if (p.food.empty() || p.plate.empty())
        throw Error(ErrorKind::validation, fmt::format("meal {}: {} frame has no annotation", meal, which));
    auto [food, plate] = load_annotation(p.food, p.plate);
    return {std::move(food), std::move(plate)};
}

}  // namespace

SegmentationStages segment_frame(segnet::Network& net, const RgbdFrame& frame, const context::CooccurrenceTable& table,
                                 const PipelineConfig& config) {
    const auto& nc = net.config();
    SegmentationStages s;
    s.raw = segnet::predict(net, frame);
    auto crf_params = config.crf;
    if (nc.input_width * nc.input_height > crf::kMaxBruteForcePixels) crf_params.truncate = true;
    s.food_crf = crf::refine_crf(s.raw.food, network_color(frame, nc), crf_params);
    s.food_raw = s.raw.food.argmax(LabelDomain::food);
    s.food_crf_labels = s.food_crf.argmax(LabelDomain::food);
    s.plate = s.raw.plate.argmax(LabelDomain::plate);
    s.food_refined = context::refine_context(s.food_crf, s.food_crf_labels, s.plate, table, config.context);
    s.full.food = {LabelDomain::food,
                   segnet::resize_labels(s.food_refined.labels, frame.width(), frame.height(), kFoodClasses)};
    s.full.plate = {LabelDomain::plate, segnet::resize_labels(s.plate.labels, frame.width(), frame.height(), kPlateClasses)};
    return s;
}

void dump_segmentation(const SegmentationStages& s, const fs::path& dir) {
    fs::create_directories(dir);
    write_probability_map(dir / "food_probs.pmap", s.raw.food);
    write_probability_map(dir / "plate_probs.pmap", s.raw.plate);
    write_probability_map(dir / "food_crf.pmap", s.food_crf);
    save_label_map(s.food_raw, dir / "food_raw.png");
    save_label_map(s.food_crf_labels, dir / "food_crf.png");
    save_label_map(s.food_refined, dir / "food_refined.png");
    save_label_map(s.plate, dir / "plate.png");
}

FrameMeasurement measure_frame(const RgbdFrame& frame, const FrameLabels& labels, const MealRecord& record,
                               const PlateLibrary& plates, const PipelineConfig& config,
                               std::vector<std::string>& warnings) {
    const int w = frame.width(), h = frame.height();
    if (!labels.food.labels.same_shape(w, h) || !labels.plate.labels.same_shape(w, h))
        throw Error(ErrorKind::validation, fmt::format("meal {}: label maps differ from the frame size", record.meal_id));
    FrameMeasurement out;

    Mask background(w, h, 0);
    for (std::size_t i = 0; i < background.size(); ++i)
        background.data[i] = labels.food.labels.data[i] == 0 && labels.plate.labels.data[i] == 0;
    volumetry::PointCloud cloud;
    try {
        cloud = volumetry::depth_to_cloud(frame, &background);
    } catch (const Error&) {
    }
    if (cloud.size() < 3) {
        warnings.push_back("too little background for the tray fit; using the whole frame");
        cloud = volumetry::depth_to_cloud(frame);
    }
    out.tray = volumetry::fit_tray_plane(cloud.points, config.ransac);

    const std::size_t min_plate_px = std::size_t(config.context.min_region_for(w, h));
    std::map<int, Components> plate_components;
    auto components_of = [&](int p) -> const Components& {
        auto it = plate_components.find(p);
        if (it != plate_components.end()) return it->second;
        Mask m(w, h, 0);
        for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = labels.plate.labels.data[i] == p;
        return plate_components.emplace(p, connected_components(m)).first->second;
    };

    std::set<std::pair<int, int>> keys;
    for (const auto& item : record.items) {
        const int k = item.food_category, p = item.plate_category;
        if (!keys.insert({k, p}).second)
            warnings.push_back(fmt::format("two items share the key ({}, {}); both get the same volume",
                                           food_category_name(k), plate_category_name(p)));
        ItemMeasurement m;
        auto measure = [&](const Mask& mask, const volumetry::BaseSurface& base) {
            try {
                const auto est = volumetry::item_volume(frame, mask, base, out.tray.plane);
                m.volume_ml += est.volume_ml;
                m.food_pixels += est.mask_pixels;
                const int offset = int(m.mesh.vertices.size());
                m.mesh.vertices.insert(m.mesh.vertices.end(), est.mesh.vertices.begin(), est.mesh.vertices.end());
                for (const auto& t : est.mesh.triangles) m.mesh.triangles.push_back({t[0] + offset, t[1] + offset, t[2] + offset});
                if (est.beyond_rim_fraction > 0.2)
                    warnings.push_back(fmt::format("{}: {:.0f}% of the food lies beyond the plate rim",
                                                   food_category_name(k), 100 * est.beyond_rim_fraction));
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::empty_result) throw;
                warnings.push_back(fmt::format("{}: {}", food_category_name(k), e.what()));
            }
        };
        if (p == 0) {
            const Mask mask = select(labels.food, k, labels.plate, 0);
            if (std::count(mask.data.begin(), mask.data.end(), 1) > 0)
                measure(mask, volumetry::BaseSurface::flat(out.tray.plane));
        } else {
            const auto model = plates.find(p);
            if (model == plates.end())
                throw Error(ErrorKind::validation, fmt::format("no plate model for {}", plate_category_name(p)));
            const auto& comps = components_of(p);
            for (const auto& members : comps.pixels) {
                if (members.size() < min_plate_px) continue;
                Mask plate_mask(w, h, 0), food_mask(w, h, 0);
                std::size_t food_px = 0;
                for (auto i : members) {
                    plate_mask.data[i] = 1;
                    if (labels.food.labels.data[i] == k) {
                        food_mask.data[i] = 1;
                        ++food_px;
                    }
                }
                if (food_px == 0) continue;
                const auto base = volumetry::plate_base_surface(plate_mask, frame.intrinsics, model->second, out.tray.plane);
                m.poses.push_back(base.pose);
                measure(food_mask, base);
            }
        }
        out.items.push_back(std::move(m));
    }

    // Food regions no item claims.
    std::map<std::pair<int, int>, std::size_t> region_px;
    for (std::size_t i = 0; i < labels.food.labels.size(); ++i)
        if (labels.food.labels.data[i]) ++region_px[{labels.food.labels.data[i], labels.plate.labels.data[i]}];
    for (const auto& [key, px] : region_px)
        if (!keys.count(key) && px >= min_plate_px)
            warnings.push_back(fmt::format("unmatched region ignored: {} on {} ({} px)", food_category_name(key.first),
                                           key.second ? plate_category_name(key.second) : "tray", px));
    return out;
}

Models load_models(const PipelineConfig& config) {
    Models m;
    const auto plates = config.plates_path();
    if (!fs::exists(plates)) throw Error(ErrorKind::io, fmt::format("plate library {} not found", plates.string()));
    m.plates = load_plate_library(plates);
    if (config.use_gt_labels) return m;
    if (config.checkpoint.empty()) throw Error(ErrorKind::validation, "a checkpoint is required without --use-gt-labels");
    if (config.cooccurrence.empty())
        throw Error(ErrorKind::validation, "a co-occurrence table is required without --use-gt-labels");
    m.network.emplace(segnet::load_checkpoint(config.checkpoint));
    m.table = context::cooccurrence_from_json(read_json(config.cooccurrence));
    return m;
}

MealRun segment_meal(const fs::path& meal_dir, Models& models, const PipelineConfig& config) {
    MealRun run;
    run.record = load_meal_record(meal_dir / "meal.json");
    const auto& id = run.record.meal_id;
    if (!run.record.before) throw Error(ErrorKind::validation, fmt::format("meal {}: missing before-frame", id));
    auto label = [&](const FramePaths& paths, const char* which, std::optional<SegmentationStages>& stages) {
        if (config.use_gt_labels) return load_labels(paths, id, which);
        stages = segment_frame(*models.network, load(paths, run.record), *models.table, config);
        return stages->full;
    };
    run.before_labels = label(*run.record.before, "before", run.before_stages);
    if (run.record.after) run.after_labels = label(*run.record.after, "after", run.after_stages);
    return run;
}

MealRun run_meal(const fs::path& meal_dir, Models& models, const PipelineConfig& config) {
    auto record = load_meal_record(meal_dir / "meal.json");
    if (!record.after) throw Error(ErrorKind::validation, fmt::format("meal {}: missing after-frame", record.meal_id));
    MealRun run = segment_meal(meal_dir, models, config);
    if (!has_food(run.before_labels.food))
        throw Error(ErrorKind::empty_result,
                    fmt::format("meal {}: segmentation found no food on the before frame", run.record.meal_id));

    std::vector<std::string> warnings;
    const auto before = load(*run.record.before, run.record);
    const auto after = load(*run.record.after, run.record);
    run.before = measure_frame(before, run.before_labels, run.record, models.plates, config, warnings);
    // After the meal, food is looked for only inside the plate regions found before it.
    const FrameLabels after_in_before_plates{run.after_labels.food, run.before_labels.plate};
    run.after = measure_frame(after, after_in_before_plates, run.record, models.plates, config, warnings);

    std::vector<volumetry::ItemVolumes> volumes;
    for (std::size_t i = 0; i < run.record.items.size(); ++i)
        volumes.push_back({run.record.items[i].food_category, run.record.items[i].plate_category,
                           run.before.items[i].volume_ml, run.after.items[i].volume_ml});
    run.intake = intake::compute_intake(run.record, volumes);
    run.intake.warnings.insert(run.intake.warnings.begin(), warnings.begin(), warnings.end());
    for (const auto& w : run.intake.warnings) log(fmt::format("meal {}: warning: {}", run.record.meal_id, w));
    return run;
}

nlohmann::json volumes_json(const MealRun& run) {
    auto frame = [&](const FrameMeasurement& f) {
        nlohmann::json items = nlohmann::json::array();
        for (std::size_t i = 0; i < f.items.size(); ++i) {
            nlohmann::json poses = nlohmann::json::array();
            for (const auto& p : f.items[i].poses) poses.push_back(volumetry::to_json(p));
            items.push_back({{"food_category", food_category_name(run.record.items[i].food_category)},
                             {"plate_category", plate_category_name(run.record.items[i].plate_category)},
                             {"volume_ml", f.items[i].volume_ml},
                             {"food_pixels", f.items[i].food_pixels},
                             {"poses", poses}});
        }
        return nlohmann::json{{"tray", volumetry::to_json(f.tray.plane)},
                              {"tray_inliers", f.tray.inliers},
                              {"tray_rms_residual", f.tray.rms_residual},
                              {"items", items}};
    };
    return {{"meal_id", run.record.meal_id}, {"before", frame(run.before)}, {"after", frame(run.after)}};
}

void write_meal_outputs(const MealRun& run, const PipelineConfig& config, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw Error(ErrorKind::io, fmt::format("cannot create {}: {}", out_dir.string(), ec.message()));
    auto j = intake::to_json(run.intake);
    j["volumes"] = volumes_json(run);
    write_json(out_dir / "intake.json", j);
    const auto format = intake::report_format_from_name(config.report_format);
    write_text_atomic(out_dir / (format == intake::ReportFormat::csv ? "report.csv" : "report.txt"),
                      intake::render_intake_report(run.intake, format));
    if (!config.dump_stages) return;
    const fs::path stages = out_dir / "stages";
    auto frame = [&](const char* which, const std::optional<SegmentationStages>& seg, const FrameLabels& labels,
                     const FrameMeasurement& m) {
        const fs::path dir = stages / which;
        fs::create_directories(dir);
        if (seg) dump_segmentation(*seg, dir / "segmentation");
        save_label_map(labels.food, dir / "food.png");
        save_label_map(labels.plate, dir / "plate.png");
        write_json(dir / "tray.json", volumetry::to_json(m.tray.plane));
        for (std::size_t i = 0; i < m.items.size(); ++i)
            volumetry::write_mesh(dir / fmt::format("item_{}.obj", i + 1), m.items[i].mesh);
    };
    frame("before", run.before_stages, run.before_labels, run.before);
    frame("after", run.after_stages, run.after_labels, run.after);
    write_json(stages / "volumes.json", volumes_json(run));
}

TrainSummary train_models(const PipelineConfig& config, const fs::path& out_dir) {
    const auto meals = list_meal_dirs(config.data);
    if (meals.size() < 3)
        throw Error(ErrorKind::validation, fmt::format("{} holds {} meals; at least 3 are needed", config.data.string(),
                                                       meals.size()));
    const auto split = split_dataset(meals, config.seed);
    std::vector<std::pair<LabelMap, LabelMap>> annotations;
    auto samples = [&](const std::vector<fs::path>& dirs, bool keep_annotations) {
        std::vector<segnet::Sample> out;
        for (const auto& dir : dirs) {
            const auto r = load_meal_record(dir / "meal.json");
            for (const auto& [paths, which] : {std::pair{r.before, "before"}, std::pair{r.after, "after"}}) {
                if (!paths) continue;
                auto labels = load_labels(*paths, r.meal_id, which);
                out.push_back(segnet::make_sample(load(*paths, r), labels.food, labels.plate, config.network));
                if (keep_annotations) annotations.emplace_back(std::move(labels.food), std::move(labels.plate));
            }
        }
        return out;
    };
    const auto train_set = samples(split.train, true);
    const auto val_set = samples(split.val, false);
    log(fmt::format("training on {} frames, validating on {}", train_set.size(), val_set.size()));

    segnet::Network net(config.network, config.seed);
    TrainSummary summary;
    summary.train_samples = train_set.size();
    summary.val_samples = val_set.size();
    if (config.train.max_epochs == 0) {
        log("warning: max_epochs is 0; writing the initialized weights");
        summary.result.initial_val_loss = segnet::evaluate_loss(net, val_set, config.train.food_loss_weight,
                                                                config.train.plate_loss_weight);
    } else {
        summary.result = segnet::train(net, train_set, val_set, config.train, config.seed, [](const segnet::EpochRecord& e) {
            log(fmt::format("epoch {}: train loss {:.6f}, val loss {:.6f}", e.epoch, e.train_loss, e.val_loss));
        });
    }
    summary.final_val_loss =
        segnet::evaluate_loss(net, val_set, config.train.food_loss_weight, config.train.plate_loss_weight);

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw Error(ErrorKind::io, fmt::format("cannot create {}: {}", out_dir.string(), ec.message()));
    segnet::save_checkpoint(net, out_dir / "checkpoint.bin");
    write_json(out_dir / "cooccurrence.json", context::to_json(context::estimate_cooccurrence(annotations)));

    nlohmann::json history = nlohmann::json::array();
    for (const auto& e : summary.result.history)
        history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
    write_json(out_dir / "train_log.json", {{"history", history},
                                            {"best_epoch", summary.result.best_epoch},
                                            {"stopped_early", summary.result.stopped_early},
                                            {"initial_val_loss", summary.result.initial_val_loss},
                                            {"final_val_loss", summary.final_val_loss},
                                            {"train_frames", summary.train_samples},
                                            {"val_frames", summary.val_samples}});
    auto names = [](const std::vector<fs::path>& dirs) {
        std::vector<std::string> out;
        for (const auto& d : dirs) out.push_back(d.filename().string());
        return out;
    };
    write_json(out_dir / "split.json", {{"seed", config.seed},
                                        {"train", names(split.train)},
                                        {"val", names(split.val)},
                                        {"test", names(split.test)}});
    return summary;
}

std::vector<fs::path> evaluation_meals(const PipelineConfig& config) {
    const auto meals = list_meal_dirs(config.data);
    if (config.split == "all") {
        if (meals.empty()) throw Error(ErrorKind::validation, fmt::format("no meals under {}", config.data.string()));
        return meals;
    }
    if (meals.size() < 3) throw Error(ErrorKind::validation, "empty test split");
    auto test = split_dataset(meals, config.seed).test;
    if (test.empty()) throw Error(ErrorKind::validation, "empty test split");
    return test;
}

EvalSummary evaluate_dataset(const PipelineConfig& config, const fs::path& out_dir) {
    auto models = load_models(config);
    EvalSummary summary;
    std::vector<NutrientVector> predicted, truth;
    intake::FScoreCounts counts;
    bool any_gt = false;
    for (const auto& dir : evaluation_meals(config)) {
        const auto run = run_meal(dir, models, config);
        write_meal_outputs(run, config, out_dir / "meals" / run.record.meal_id);
        if (!fs::exists(dir / "truth.json"))
            throw Error(ErrorKind::validation, fmt::format("meal {} has no truth.json", run.record.meal_id));
        truth.push_back(nutrients_from_json(read_json(dir / "truth.json").at("intake_total")));
        predicted.push_back(run.intake.totals);
        if (!run.record.before->food.empty()) {
            const auto gt = load_labels(*run.record.before, run.record.meal_id, "before");
            counts.add(run.before_labels.food, gt.food);
            any_gt = true;
        }
        summary.results.push_back(run.intake);
        summary.meal_ids.push_back(run.record.meal_id);
        log(fmt::format("meal {}: {:.1f} kcal estimated, {:.1f} kcal true", run.record.meal_id,
                        run.intake.totals.calories, truth.back().calories));
    }
    summary.report = intake::evaluate_intake(predicted, truth);
    if (any_gt) {
        try {
            summary.report.segmentation = counts.scores();
            summary.report.has_segmentation = true;
        } catch (const Error&) {
            log("warning: ground truth shows no food; F-scores skipped");
        }
    }
    const auto format = intake::report_format_from_name(config.report_format);
    const char* ext = format == intake::ReportFormat::csv ? "csv" : "txt";
    auto j = intake::to_json(summary.report);
    j["meal_ids"] = summary.meal_ids;
    write_json(out_dir / "eval.json", j);
    write_text_atomic(out_dir / fmt::format("eval_report.{}", ext), intake::render_eval_report(summary.report, format));
    write_text_atomic(out_dir / fmt::format("intake_report.{}", ext), intake::render_intake_report(summary.results, format));
    return summary;
}

}  // namespace mealscan::pipeline
