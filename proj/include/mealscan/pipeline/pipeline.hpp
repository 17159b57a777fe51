#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mealscan/context/context.hpp"
#include "mealscan/core/io.hpp"
#include "mealscan/crf/crf.hpp"
#include "mealscan/intake/intake.hpp"
#include "mealscan/segnet/network.hpp"
#include "mealscan/segnet/train.hpp"
#include "mealscan/volumetry/geometry.hpp"
#include "mealscan/volumetry/volume.hpp"

namespace mealscan::pipeline {

namespace fs = std::filesystem;

struct SynthOptions {
    std::size_t meals = 50;
    double noise_sigma = 0.001;
    double dropout = 0.01;
};

/// Everything a run depends on. Loaded from one JSON file; command-line flags override fields.
struct PipelineConfig {
    fs::path data;          // dataset root (meal directories + plates.json)
    fs::path checkpoint;    // segnet weights
    fs::path cooccurrence;  // p(food | plate) table
    fs::path plates;        // plate-model library; defaults to <data>/plates.json
    std::uint64_t seed = 0;
    std::string report_format = "text";
    std::string split = "test";  // eval: test | all
    bool dump_stages = false;
    bool use_gt_labels = false;

    segnet::NetworkConfig network;
    segnet::TrainConfig train;
    crf::CrfParams crf;
    context::ContextParams context;
    volumetry::RansacParams ransac;
    SynthOptions synth;

    void validate() const;
    /// Plate library path, falling back to the dataset's plates.json.
    fs::path plates_path() const;
};

/// Unknown keys are rejected so typos cannot silently fall back to defaults.
PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig base = {});
PipelineConfig load_config(const fs::path& path);
nlohmann::json to_json(const PipelineConfig& config);

/// Log line on standard error.
void log(const std::string& message);

struct FrameLabels {
    LabelMap food;
    LabelMap plate;
};

/// Intermediate maps of one segmented frame, all at network resolution except `full`.
struct SegmentationStages {
    ProbabilityMaps raw;
    ClassProbabilities food_crf;
    LabelMap food_raw;
    LabelMap food_crf_labels;
    LabelMap food_refined;
    LabelMap plate;
    FrameLabels full;  // refined labels resampled to the frame size
};

/// segnet -> CRF on the food map -> plate-context relabeling -> nearest upsampling to the frame.
SegmentationStages segment_frame(segnet::Network& net, const RgbdFrame& frame, const context::CooccurrenceTable& table,
                                 const PipelineConfig& config);
/// Writes raw/CRF probability maps (PMAP) and label images (PNG) under dir.
void dump_segmentation(const SegmentationStages& stages, const fs::path& dir);

struct ItemMeasurement {
    double volume_ml = 0;
    std::size_t food_pixels = 0;
    std::vector<volumetry::PlatePose> poses;  // one per plate component holding the item
    volumetry::TriMesh mesh;
};

struct FrameMeasurement {
    volumetry::PlaneFit tray;
    std::vector<ItemMeasurement> items;  // aligned with the meal's items
};

/// Tray plane from background pixels, then per item: the food mask of its category inside each connected
/// component of its plate category, measured against that component's plate surface.
FrameMeasurement measure_frame(const RgbdFrame& frame, const FrameLabels& labels, const MealRecord& record,
                               const PlateLibrary& plates, const PipelineConfig& config,
                               std::vector<std::string>& warnings);

struct Models {
    std::optional<segnet::Network> network;
    std::optional<context::CooccurrenceTable> table;
    PlateLibrary plates;
};

/// Loads what the configuration needs: the plate library always, the network and table unless
/// ground-truth labels are used.
Models load_models(const PipelineConfig& config);

struct MealRun {
    MealRecord record;
    FrameLabels before_labels, after_labels;
    std::optional<SegmentationStages> before_stages, after_stages;
    FrameMeasurement before, after;
    intake::IntakeResult intake;
};

/// Full per-meal pipeline. Throws empty_result when the before frame shows no food.
MealRun run_meal(const fs::path& meal_dir, Models& models, const PipelineConfig& config);
/// Segmentation only, for both frames present.
MealRun segment_meal(const fs::path& meal_dir, Models& models, const PipelineConfig& config);

/// Writes intake.json, report and, with dump_stages, the stage files into out_dir (one meal).
void write_meal_outputs(const MealRun& run, const PipelineConfig& config, const fs::path& out_dir);
nlohmann::json volumes_json(const MealRun& run);

struct TrainSummary {
    segnet::TrainResult result;
    std::size_t train_samples = 0, val_samples = 0;
    double final_val_loss = 0;
};

/// Trains segnet on the train split (before and after frames), early-stops on the val split, and writes
/// checkpoint.bin, cooccurrence.json, train_log.json and split.json under out_dir.
TrainSummary train_models(const PipelineConfig& config, const fs::path& out_dir);

struct EvalSummary {
    intake::EvalReport report;
    std::vector<intake::IntakeResult> results;
    std::vector<std::string> meal_ids;
};

/// Runs the pipeline on the evaluation meals and compares with truth.json.
EvalSummary evaluate_dataset(const PipelineConfig& config, const fs::path& out_dir);

/// Meals selected by config.split (test split of the seeded partition, or all).
std::vector<fs::path> evaluation_meals(const PipelineConfig& config);

}  // namespace mealscan::pipeline
