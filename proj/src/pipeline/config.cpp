#include <functional>
#include <map>

#include <fmt/format.h>

#include "mealscan/pipeline/pipeline.hpp"

namespace mealscan::pipeline {

namespace {

using Setter = std::function<void(const nlohmann::json&)>;

void apply(const nlohmann::json& j, const std::string& section, const std::map<std::string, Setter>& setters) {
    if (!j.is_object()) throw Error(ErrorKind::validation, fmt::format("config section '{}' must be an object", section));
    for (const auto& [key, value] : j.items()) {
        const auto it = setters.find(key);
        if (it == setters.end())
            throw Error(ErrorKind::validation,
                        fmt::format("unknown config key '{}{}'", section.empty() ? "" : section + ".", key));
        try {
            it->second(value);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::validation, fmt::format("config key '{}': {}", key, e.what()));
        }
    }
}

template <typename T>
Setter set(T& field) {
    return [&field](const nlohmann::json& v) { field = v.get<T>(); };
}

Setter set_path(fs::path& field) {
    return [&field](const nlohmann::json& v) { field = v.get<std::string>(); };
}

}  // namespace

void PipelineConfig::validate() const {
    network.validate();
    train.validate();
    crf.validate();
    context.validate();
    ransac.validate();
    intake::report_format_from_name(report_format);
    if (split != "test" && split != "all") throw Error(ErrorKind::validation, "split must be 'test' or 'all'");
    if (!(synth.noise_sigma >= 0) || !(synth.dropout >= 0 && synth.dropout < 1))
        throw Error(ErrorKind::validation, "synth noise must be >= 0 and dropout in [0, 1)");
}

fs::path PipelineConfig::plates_path() const { return plates.empty() ? data / "plates.json" : plates; }

PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig c) {
    auto& n = c.network;
    auto& t = c.train;
    auto& r = c.crf;
    auto& x = c.context;
    auto& s = c.ransac;
    const std::map<std::string, Setter> network{{"input_height", set(n.input_height)},
                                                {"input_width", set(n.input_width)},
                                                {"encoder_filters", set(n.encoder_filters)},
                                                {"kernel_size", set(n.kernel_size)},
                                                {"depth_scale_m", set(n.depth_scale_m)},
                                                {"bn_momentum", set(n.bn_momentum)},
                                                {"bn_epsilon", set(n.bn_epsilon)}};
    const std::map<std::string, Setter> train{{"learning_rate", set(t.learning_rate)},
                                              {"batch_size", set(t.batch_size)},
                                              {"max_epochs", set(t.max_epochs)},
                                              {"early_stop_patience", set(t.early_stop_patience)},
                                              {"flip_augmentation", set(t.flip_augmentation)},
                                              {"food_loss_weight", set(t.food_loss_weight)},
                                              {"plate_loss_weight", set(t.plate_loss_weight)},
                                              {"adam_beta1", set(t.adam_beta1)},
                                              {"adam_beta2", set(t.adam_beta2)},
                                              {"adam_epsilon", set(t.adam_epsilon)}};
    const std::map<std::string, Setter> crf{{"w_appearance", set(r.w_appearance)},
                                            {"w_smoothness", set(r.w_smoothness)},
                                            {"theta_alpha", set(r.theta_alpha)},
                                            {"theta_beta", set(r.theta_beta)},
                                            {"theta_gamma", set(r.theta_gamma)},
                                            {"iterations", set(r.iterations)},
                                            {"truncate", set(r.truncate)},
                                            {"probability_floor", set(r.probability_floor)}};
    const std::map<std::string, Setter> context{{"alpha", set(x.alpha)},
                                                {"beta", set(x.beta)},
                                                {"min_region_px", set(x.min_region_px)},
                                                {"reference_pixels", set(x.reference_pixels)}};
    const std::map<std::string, Setter> ransac{{"iterations", set(s.iterations)},
                                               {"inlier_threshold", set(s.inlier_threshold)},
                                               {"min_inlier_fraction", set(s.min_inlier_fraction)},
                                               {"min_inliers", set(s.min_inliers)},
                                               {"seed", set(s.seed)}};
    const std::map<std::string, Setter> synth{{"meals", set(c.synth.meals)},
                                              {"noise_sigma", set(c.synth.noise_sigma)},
                                              {"dropout", set(c.synth.dropout)}};
    const std::map<std::string, Setter> top{
        {"data", set_path(c.data)},
        {"checkpoint", set_path(c.checkpoint)},
        {"cooccurrence", set_path(c.cooccurrence)},
        {"plates", set_path(c.plates)},
        {"seed", set(c.seed)},
        {"report_format", set(c.report_format)},
        {"split", set(c.split)},
        {"dump_stages", set(c.dump_stages)},
        {"use_gt_labels", set(c.use_gt_labels)},
        {"network", [&](const nlohmann::json& v) { apply(v, "network", network); }},
        {"train", [&](const nlohmann::json& v) { apply(v, "train", train); }},
        {"crf", [&](const nlohmann::json& v) { apply(v, "crf", crf); }},
        {"context", [&](const nlohmann::json& v) { apply(v, "context", context); }},
        {"ransac", [&](const nlohmann::json& v) { apply(v, "ransac", ransac); }},
        {"synth", [&](const nlohmann::json& v) { apply(v, "synth", synth); }},
    };
    apply(j, "", top);
    return c;
}

PipelineConfig load_config(const fs::path& path) {
    const auto j = read_json(path);
    auto c = config_from_json(j);
    // Relative paths inside a config file are taken relative to the file.
    const fs::path base = path.parent_path();
    for (fs::path* p : {&c.data, &c.checkpoint, &c.cooccurrence, &c.plates})
        if (!p->empty() && p->is_relative()) *p = base / *p;
    return c;
}

nlohmann::json to_json(const PipelineConfig& c) {
    const auto& n = c.network;
    const auto& t = c.train;
    const auto& r = c.crf;
    const auto& x = c.context;
    const auto& s = c.ransac;
    return {{"data", c.data.string()},
            {"checkpoint", c.checkpoint.string()},
            {"cooccurrence", c.cooccurrence.string()},
            {"plates", c.plates.string()},
            {"seed", c.seed},
            {"report_format", c.report_format},
            {"split", c.split},
            {"dump_stages", c.dump_stages},
            {"use_gt_labels", c.use_gt_labels},
            {"network",
             {{"input_height", n.input_height},
              {"input_width", n.input_width},
              {"encoder_filters", n.encoder_filters},
              {"kernel_size", n.kernel_size},
              {"depth_scale_m", n.depth_scale_m},
              {"bn_momentum", n.bn_momentum},
              {"bn_epsilon", n.bn_epsilon}}},
            {"train",
             {{"learning_rate", t.learning_rate},
              {"batch_size", t.batch_size},
              {"max_epochs", t.max_epochs},
              {"early_stop_patience", t.early_stop_patience},
              {"flip_augmentation", t.flip_augmentation},
              {"food_loss_weight", t.food_loss_weight},
              {"plate_loss_weight", t.plate_loss_weight},
              {"adam_beta1", t.adam_beta1},
              {"adam_beta2", t.adam_beta2},
              {"adam_epsilon", t.adam_epsilon}}},
            {"crf",
             {{"w_appearance", r.w_appearance},
              {"w_smoothness", r.w_smoothness},
              {"theta_alpha", r.theta_alpha},
              {"theta_beta", r.theta_beta},
              {"theta_gamma", r.theta_gamma},
              {"iterations", r.iterations},
              {"truncate", r.truncate},
              {"probability_floor", r.probability_floor}}},
            {"context",
             {{"alpha", x.alpha}, {"beta", x.beta}, {"min_region_px", x.min_region_px}, {"reference_pixels", x.reference_pixels}}},
            {"ransac",
             {{"iterations", s.iterations},
              {"inlier_threshold", s.inlier_threshold},
              {"min_inlier_fraction", s.min_inlier_fraction},
              {"min_inliers", s.min_inliers},
              {"seed", s.seed}}},
            {"synth", {{"meals", c.synth.meals}, {"noise_sigma", c.synth.noise_sigma}, {"dropout", c.synth.dropout}}}};
}

}  // namespace mealscan::pipeline
