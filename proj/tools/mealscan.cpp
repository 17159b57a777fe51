#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mealscan/pipeline/pipeline.hpp"
#include "mealscan/synth/synth.hpp"

using namespace mealscan;
namespace fs = std::filesystem;

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    bool dump_stages = false;
    bool use_gt_labels = false;
    std::string out;
    std::optional<std::string> format;
    std::optional<std::string> data, checkpoint, table, plates, split;
    std::optional<std::size_t> n, max_epochs;
    std::optional<double> noise_sigma, dropout;
    std::string meal, in;
};

pipeline::PipelineConfig resolve(const Flags& f) {
    auto c = f.config.empty() ? pipeline::PipelineConfig{} : pipeline::load_config(f.config);
    if (f.seed) c.seed = *f.seed;
    if (f.dump_stages) c.dump_stages = true;
    if (f.use_gt_labels) c.use_gt_labels = true;
    if (f.format) c.report_format = *f.format;
    if (f.data) c.data = *f.data;
    if (f.checkpoint) c.checkpoint = *f.checkpoint;
    if (f.table) c.cooccurrence = *f.table;
    if (f.plates) c.plates = *f.plates;
    if (f.split) c.split = *f.split;
    if (f.n) c.synth.meals = *f.n;
    if (f.max_epochs) c.train.max_epochs = *f.max_epochs;
    if (f.noise_sigma) c.synth.noise_sigma = *f.noise_sigma;
    if (f.dropout) c.synth.dropout = *f.dropout;
    c.validate();
    return c;
}

fs::path prepare_out(const Flags& f, const pipeline::PipelineConfig& c) {
    const fs::path out = f.out;
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw Error(ErrorKind::io, fmt::format("cannot create {}: {}", out.string(), ec.message()));
    write_json(out / "config.json", pipeline::to_json(c));
    return out;
}

fs::path meal_dir(const Flags& f, const pipeline::PipelineConfig& c) {
    if (f.meal.empty()) throw Error(ErrorKind::validation, "--meal is required");
    fs::path dir = f.meal;
    if (!fs::is_directory(dir) && !c.data.empty() && fs::is_directory(c.data / f.meal)) dir = c.data / f.meal;
    if (!fs::is_directory(dir)) throw Error(ErrorKind::io, fmt::format("meal directory {} not found", f.meal));
    return dir;
}

// Plate models default to the plates.json next to the meal directories.
pipeline::PipelineConfig with_meal_data(pipeline::PipelineConfig c, const fs::path& meal) {
    if (c.data.empty() && c.plates.empty()) c.data = meal.parent_path();
    return c;
}

void cmd_synth(const Flags& f) {
    const auto c = resolve(f);
    synth::DatasetOptions options{c.synth.noise_sigma, c.synth.dropout};
    const fs::path out = f.out;
    const auto meals = synth::make_dataset(c.synth.meals, c.seed, out, options);
    pipeline::log(fmt::format("wrote {} meals to {}", meals.size(), out.string()));
}

void cmd_train(const Flags& f) {
    const auto c = resolve(f);
    if (c.data.empty()) throw Error(ErrorKind::validation, "--data is required");
    const auto s = pipeline::train_models(c, prepare_out(f, c));
    pipeline::log(fmt::format("validation loss {:.6f} -> {:.6f}", s.result.initial_val_loss, s.final_val_loss));
}

void cmd_segment(const Flags& f) {
    auto c = resolve(f);
    const auto dir = meal_dir(f, c);
    c = with_meal_data(c, dir);
    auto models = pipeline::load_models(c);
    const auto run = pipeline::segment_meal(dir, models, c);
    const auto out = prepare_out(f, c);
    auto write = [&](const char* which, const pipeline::FrameLabels& labels,
                     const std::optional<pipeline::SegmentationStages>& stages) {
        fs::create_directories(out / which);
        save_label_map(labels.food, out / which / "food.png");
        save_label_map(labels.plate, out / which / "plate.png");
        if (stages) pipeline::dump_segmentation(*stages, out / which / "stages");
    };
    write("before", run.before_labels, run.before_stages);
    if (run.record.after) write("after", run.after_labels, run.after_stages);
}

void cmd_volume(const Flags& f) {
    auto c = resolve(f);
    const auto dir = meal_dir(f, c);
    c = with_meal_data(c, dir);
    auto models = pipeline::load_models(c);
    const auto run = pipeline::run_meal(dir, models, c);
    write_json(prepare_out(f, c) / "volumes.json", pipeline::volumes_json(run));
}

void cmd_intake(const Flags& f) {
    auto c = resolve(f);
    const auto dir = meal_dir(f, c);
    c = with_meal_data(c, dir);
    auto models = pipeline::load_models(c);
    const auto run = pipeline::run_meal(dir, models, c);
    pipeline::write_meal_outputs(run, c, prepare_out(f, c));
}

void cmd_eval(const Flags& f) {
    const auto c = resolve(f);
    if (c.data.empty()) throw Error(ErrorKind::validation, "--data is required");
    pipeline::evaluate_dataset(c, prepare_out(f, c));
}

void cmd_report(const Flags& f) {
    const auto c = resolve(f);
    const auto format = intake::report_format_from_name(c.report_format);
    const char* ext = format == intake::ReportFormat::csv ? "csv" : "txt";
    const fs::path in = f.in;
    std::string text, name;
    if (fs::is_directory(in)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(in))
            if (e.is_regular_file() && e.path().filename() == "intake.json") files.push_back(e.path());
        if (files.empty()) throw Error(ErrorKind::validation, fmt::format("no intake.json under {}", in.string()));
        std::sort(files.begin(), files.end());
        std::vector<intake::IntakeResult> results;
        for (const auto& p : files) results.push_back(intake::intake_result_from_json(read_json(p)));
        text = intake::render_intake_report(results, format);
        name = fmt::format("intake_report.{}", ext);
    } else {
        const auto j = read_json(in);
        if (j.contains("nutrients")) {
            text = intake::render_eval_report(intake::eval_report_from_json(j), format);
            name = fmt::format("eval_report.{}", ext);
        } else {
            text = intake::render_intake_report(intake::intake_result_from_json(j), format);
            name = fmt::format("report.{}", ext);
        }
    }
    const fs::path out = f.out;
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw Error(ErrorKind::io, fmt::format("cannot create {}: {}", out.string(), ec.message()));
    write_text_atomic(out / name, text);
}

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::training: return 3;
        case ErrorKind::empty_result: return 4;
        default: return 2;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Nutrient intake from before/after RGB-D meal images"};
    app.require_subcommand(1);
    Flags f;
    void (*command)(const Flags&) = nullptr;
    app.add_option("--config", f.config, "pipeline configuration (JSON)")->check(CLI::ExistingFile);
    app.add_option("--seed", f.seed, "seed for every random choice");
    app.add_flag("--dump-stages", f.dump_stages, "write intermediate maps, meshes and volumes");
    app.add_flag("--use-gt-labels", f.use_gt_labels, "use annotated label maps instead of the network");
    app.add_option("--format", f.format, "report format: text or csv");
    app.add_option("--plates", f.plates, "plate-model library (default <data>/plates.json)");

    auto add = [&](const char* name, const char* help, void (*run)(const Flags&)) {
        auto* sub = app.add_subcommand(name, help);
        sub->fallthrough();
        sub->add_option("--out", f.out, "output directory")->required();
        sub->callback([run, &command] { command = run; });
        return sub;
    };
    auto* synth = add("synth", "render a synthetic dataset", cmd_synth);
    synth->add_option("--n", f.n, "number of meals");
    synth->add_option("--noise-sigma", f.noise_sigma, "depth noise standard deviation in metres");
    synth->add_option("--dropout", f.dropout, "fraction of depth pixels dropped");

    auto* train = add("train", "train the segmentation network and the co-occurrence table", cmd_train);
    train->add_option("--data", f.data, "dataset root");
    train->add_option("--max-epochs", f.max_epochs, "epoch limit");

    for (auto [name, help, run] : {std::tuple{"segment", "segment the before and after frames of a meal", cmd_segment},
                                   std::tuple{"volume", "estimate item volumes of a meal", cmd_volume},
                                   std::tuple{"intake", "estimate the nutrient intake of a meal", cmd_intake}}) {
        auto* sub = add(name, help, run);
        sub->add_option("--meal", f.meal, "meal directory (or its name under --data)")->required();
        sub->add_option("--data", f.data, "dataset root");
        sub->add_option("--checkpoint", f.checkpoint, "network checkpoint");
        sub->add_option("--table", f.table, "co-occurrence table");
    }

    auto* eval = add("eval", "evaluate intake estimation on a dataset split", cmd_eval);
    eval->add_option("--data", f.data, "dataset root");
    eval->add_option("--checkpoint", f.checkpoint, "network checkpoint");
    eval->add_option("--table", f.table, "co-occurrence table");
    eval->add_option("--split", f.split, "test or all");

    auto* report = add("report", "render a report from intake.json, eval.json or a directory of intake.json", cmd_report);
    report->add_option("--in", f.in, "input file or directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return 2;
    }
    try {
        command(f);
    } catch (const Error& e) {
        pipeline::log(fmt::format("error: {}", e.what()));
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        pipeline::log(fmt::format("error: {}", e.what()));
        return 2;
    }
    return 0;
}
