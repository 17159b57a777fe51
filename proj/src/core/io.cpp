#include "mealscan/core/io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include <fmt/format.h>

namespace mealscan {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
    auto* what = static_cast<std::string*>(png_get_error_ptr(png));
    if (what) *what = msg;
    png_longjmp(png, 1);
}

struct DecodedPng {
    int width = 0;
    int height = 0;
    int channels = 0;
    int bit_depth = 0;
    std::vector<std::uint8_t> bytes;  // big-endian samples for 16-bit
};

DecodedPng decode_png(const fs::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw Error(ErrorKind::io, fmt::format("cannot open {}", path.string()));
    std::uint8_t signature[8];
    if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0)
        throw Error(ErrorKind::io, fmt::format("{} is not a PNG file", path.string()));

    std::string message;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_fail, nullptr);
    png_infop info = png_create_info_struct(png);
    DecodedPng out;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorKind::io, fmt::format("cannot decode {}: {}", path.string(), message));
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    out.width = int(png_get_image_width(png, info));
    out.height = int(png_get_image_height(png, info));
    out.bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && out.bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    out.channels = png_get_channels(png, info);
    out.bit_depth = png_get_bit_depth(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    out.bytes.resize(stride * out.height);
    rows.resize(out.height);
    for (int y = 0; y < out.height; ++y) rows[y] = out.bytes.data() + stride * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void encode_png_file(const fs::path& path, int width, int height, int color_type, int bit_depth,
                     const std::vector<std::uint8_t>& bytes) {
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw Error(ErrorKind::io, fmt::format("cannot write {}", path.string()));
    std::string message;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_fail, nullptr);
    png_infop info = png_create_info_struct(png);
    const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
    const std::size_t stride = std::size_t(width) * channels * (bit_depth / 8);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = const_cast<png_bytep>(bytes.data() + stride * y);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorKind::io, fmt::format("cannot encode {}: {}", path.string(), message));
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), bit_depth, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void encode_png(const fs::path& path, int width, int height, int color_type, int bit_depth,
                const std::vector<std::uint8_t>& bytes) {
    const fs::path tmp = path.string() + ".tmp";
    encode_png_file(tmp, width, height, color_type, bit_depth, bytes);
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw Error(ErrorKind::io, fmt::format("cannot write {}: {}", path.string(), ec.message()));
}

}  // namespace

ColorImage read_color_png(const fs::path& path) {
    auto png = decode_png(path);
    if (png.bit_depth != 8) throw Error(ErrorKind::io, fmt::format("{}: expected 8-bit color", path.string()));
    ColorImage image(png.width, png.height);
    if (png.channels == 3) {
        image.rgb = std::move(png.bytes);
    } else if (png.channels == 1) {
        for (std::size_t i = 0; i < png.bytes.size(); ++i)
            for (int c = 0; c < 3; ++c) image.rgb[i * 3 + c] = png.bytes[i];
    } else {
        throw Error(ErrorKind::io, fmt::format("{}: unsupported channel count {}", path.string(), png.channels));
    }
    return image;
}

Image<std::uint8_t> read_gray8_png(const fs::path& path) {
    auto png = decode_png(path);
    if (png.channels != 1 || png.bit_depth != 8)
        throw Error(ErrorKind::io, fmt::format("{}: expected 8-bit single-channel PNG", path.string()));
    Image<std::uint8_t> image(png.width, png.height);
    image.data = std::move(png.bytes);
    return image;
}

Image<std::uint16_t> read_gray16_png(const fs::path& path) {
    auto png = decode_png(path);
    if (png.channels != 1 || png.bit_depth != 16)
        throw Error(ErrorKind::io, fmt::format("{}: expected 16-bit single-channel PNG", path.string()));
    Image<std::uint16_t> image(png.width, png.height);
    for (std::size_t i = 0; i < image.size(); ++i)
        image.data[i] = std::uint16_t((png.bytes[2 * i] << 8) | png.bytes[2 * i + 1]);
    return image;
}

void write_color_png(const fs::path& path, const ColorImage& image) {
    encode_png(path, image.width, image.height, PNG_COLOR_TYPE_RGB, 8, image.rgb);
}

void write_gray8_png(const fs::path& path, const Image<std::uint8_t>& image) {
    encode_png(path, image.width, image.height, PNG_COLOR_TYPE_GRAY, 8, image.data);
}

void write_gray16_png(const fs::path& path, const Image<std::uint16_t>& image) {
    std::vector<std::uint8_t> bytes(image.size() * 2);
    for (std::size_t i = 0; i < image.size(); ++i) {
        bytes[2 * i] = std::uint8_t(image.data[i] >> 8);
        bytes[2 * i + 1] = std::uint8_t(image.data[i] & 0xff);
    }
    encode_png(path, image.width, image.height, PNG_COLOR_TYPE_GRAY, 16, bytes);
}

RgbdFrame load_frame(const fs::path& color_path, const fs::path& depth_path, const CameraIntrinsics& intrinsics) {
    if (!(intrinsics.depth_scale > 0)) throw Error(ErrorKind::validation, "depth_scale must be positive");
    RgbdFrame frame;
    frame.color = read_color_png(color_path);
    const auto raw = read_gray16_png(depth_path);
    if (!raw.same_shape(frame.color.width, frame.color.height))
        throw Error(ErrorKind::validation,
                    fmt::format("dimension mismatch: color {}x{} vs depth {}x{}", frame.color.width,
                                frame.color.height, raw.width, raw.height));
    frame.depth = Image<double>(raw.width, raw.height);
    for (std::size_t i = 0; i < raw.size(); ++i) frame.depth.data[i] = raw.data[i] * intrinsics.depth_scale;
    frame.intrinsics = intrinsics;
    frame.intrinsics.validate(frame.width(), frame.height());
    return frame;
}

void save_frame(const RgbdFrame& frame, const fs::path& color_path, const fs::path& depth_path) {
    frame.validate();
    Image<std::uint16_t> raw(frame.width(), frame.height());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double units = std::round(frame.depth.data[i] / frame.intrinsics.depth_scale);
        if (units > 65535.0) throw Error(ErrorKind::validation, "depth exceeds 16-bit storage range");
        raw.data[i] = std::uint16_t(units);
    }
    write_color_png(color_path, frame.color);
    write_gray16_png(depth_path, raw);
}

std::pair<LabelMap, LabelMap> load_annotation(const fs::path& food_path, const fs::path& plate_path) {
    LabelMap food{LabelDomain::food, read_gray8_png(food_path)};
    LabelMap plate{LabelDomain::plate, read_gray8_png(plate_path)};
    if (!food.labels.same_shape(plate.width(), plate.height()))
        throw Error(ErrorKind::validation, "food and plate annotations differ in size");
    food.validate();
    plate.validate();
    return {std::move(food), std::move(plate)};
}

void save_label_map(const LabelMap& map, const fs::path& path) { write_gray8_png(path, map.labels); }

nlohmann::json to_json(const CameraIntrinsics& k) {
    return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"depth_scale", k.depth_scale}};
}

CameraIntrinsics intrinsics_from_json(const nlohmann::json& j) {
    CameraIntrinsics k;
    for (const char* key : {"fx", "fy", "cx", "cy", "depth_scale"})
        if (!j.contains(key)) throw Error(ErrorKind::validation, fmt::format("intrinsics missing '{}'", key));
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.depth_scale = j.at("depth_scale").get<double>();
    if (!(k.depth_scale > 0)) throw Error(ErrorKind::validation, "depth_scale must be positive");
    return k;
}

nlohmann::json to_json(const NutrientVector& n) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < NutrientVector::kCount; ++i) j[std::string(NutrientVector::kNames[i])] = n[i];
    return j;
}

NutrientVector nutrients_from_json(const nlohmann::json& j) {
    NutrientVector n;
    for (std::size_t i = 0; i < NutrientVector::kCount; ++i) {
        const std::string key(NutrientVector::kNames[i]);
        if (!j.contains(key)) throw Error(ErrorKind::validation, fmt::format("nutrients missing field '{}'", key));
        n[i] = j.at(key).get<double>();
        if (!(n[i] >= 0)) throw Error(ErrorKind::validation, fmt::format("nutrient '{}' must be >= 0", key));
    }
    return n;
}

nlohmann::json to_json(const PlateModel& m) {
    nlohmann::json profile = nlohmann::json::array();
    for (const auto& s : m.profile) profile.push_back({s[0], s[1]});
    return {{"category", m.category}, {"rim_radius", m.rim_radius}, {"lidded", m.lidded}, {"profile", profile}};
}

PlateModel plate_model_from_json(const nlohmann::json& j) {
    PlateModel m;
    m.category = j.at("category").get<int>();
    m.rim_radius = j.at("rim_radius").get<double>();
    m.lidded = j.value("lidded", false);
    for (const auto& s : j.at("profile")) m.profile.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
    m.validate();
    return m;
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, fmt::format("cannot open {}", path.string()));
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::validation, fmt::format("{}: {}", path.string(), e.what()));
    }
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error(ErrorKind::io, fmt::format("cannot write {}", path.string()));
        out << text;
        if (!out) throw Error(ErrorKind::io, fmt::format("cannot write {}", path.string()));
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw Error(ErrorKind::io, fmt::format("cannot write {}: {}", path.string(), ec.message()));
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

namespace {

int category_field(const nlohmann::json& item, const char* key, bool food) {
    if (!item.contains(key)) throw Error(ErrorKind::validation, fmt::format("item missing '{}'", key));
    const auto& v = item.at(key);
    int category;
    if (v.is_string()) {
        category = food ? food_category_from_name(v.get<std::string>()) : plate_category_from_name(v.get<std::string>());
    } else {
        category = v.get<int>();
    }
    const int limit = food ? kFoodCategories : kPlateCategories;
    if (category < 1 || category > limit)
        throw Error(ErrorKind::validation, fmt::format("unknown {} category {}", food ? "food" : "plate", category));
    return category;
}

std::optional<FramePaths> frame_paths(const fs::path& meal_dir, const char* which) {
    const fs::path dir = meal_dir / which;
    if (!fs::exists(dir / "color.png") && !fs::exists(dir / "depth.png")) return std::nullopt;
    FramePaths p{(dir / "color.png").string(), (dir / "depth.png").string(), "", ""};
    if (fs::exists(dir / "food.png")) p.food = (dir / "food.png").string();
    if (fs::exists(dir / "plate.png")) p.plate = (dir / "plate.png").string();
    return p;
}

}  // namespace

MealRecord meal_record_from_json(const nlohmann::json& j, const fs::path& meal_dir) {
    MealRecord r;
    try {
        r.meal_id = j.at("meal_id").get<std::string>();
        if (!j.contains("items") || j.at("items").empty()) throw Error(ErrorKind::validation, "meal has no items");
        for (const auto& item : j.at("items")) {
            MealItem m;
            m.food_category = category_field(item, "food_category", true);
            m.plate_category = category_field(item, "plate_category", false);
            if (!item.contains("nutrients")) throw Error(ErrorKind::validation, "item missing 'nutrients'");
            m.total_nutrients = nutrients_from_json(item.at("nutrients"));
            m.served_weight_g = item.at("served_weight_g").get<double>();
            if (!(m.served_weight_g > 0)) throw Error(ErrorKind::validation, "served_weight_g must be positive");
            r.items.push_back(m);
        }
        if (j.contains("intrinsics")) r.intrinsics = intrinsics_from_json(j.at("intrinsics"));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::validation, fmt::format("meal record: {}", e.what()));
    }
    if (!meal_dir.empty()) {
        r.before = frame_paths(meal_dir, "before");
        r.after = frame_paths(meal_dir, "after");
        if (r.after && !r.before) throw Error(ErrorKind::validation, fmt::format("meal {}: after-frame without before-frame", r.meal_id));
    }
    return r;
}

MealRecord load_meal_record(const fs::path& meal_json) {
    return meal_record_from_json(read_json(meal_json), meal_json.parent_path());
}

nlohmann::json to_json(const MealRecord& record) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& m : record.items)
        items.push_back({{"food_category", m.food_category},
                         {"plate_category", m.plate_category},
                         {"nutrients", to_json(m.total_nutrients)},
                         {"served_weight_g", m.served_weight_g}});
    return {{"meal_id", record.meal_id}, {"items", items}, {"intrinsics", to_json(record.intrinsics)}};
}

PlateLibrary load_plate_library(const fs::path& path) {
    PlateLibrary lib;
    const auto doc = read_json(path);
    for (const auto& m : doc.at("plates")) {
        auto model = plate_model_from_json(m);
        lib[model.category] = model;
    }
    return lib;
}

void save_plate_library(const fs::path& path, const PlateLibrary& library) {
    nlohmann::json plates = nlohmann::json::array();
    for (const auto& [category, model] : library) plates.push_back(to_json(model));
    write_json(path, {{"plates", plates}});
}

namespace {

void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}
std::uint32_t get_u32(const char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(p[i])) << (8 * i);
    return v;
}

}  // namespace

void write_probability_map(const fs::path& path, const ClassProbabilities& probs) {
    static_assert(std::endian::native == std::endian::little, "probability maps are written little endian");
    std::string bytes = "PMAP";
    put_u32(bytes, std::uint32_t(probs.height));
    put_u32(bytes, std::uint32_t(probs.width));
    put_u32(bytes, std::uint32_t(probs.classes));
    bytes.append(reinterpret_cast<const char*>(probs.values.data()), probs.values.size() * sizeof(double));
    write_text_atomic(path, bytes);
}

ClassProbabilities read_probability_map(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, fmt::format("cannot open {}", path.string()));
    char header[16];
    if (!in.read(header, 16) || std::memcmp(header, "PMAP", 4) != 0)
        throw Error(ErrorKind::validation, fmt::format("{}: bad probability map header", path.string()));
    ClassProbabilities probs(int(get_u32(header + 8)), int(get_u32(header + 4)), int(get_u32(header + 12)));
    if (!in.read(reinterpret_cast<char*>(probs.values.data()), std::streamsize(probs.values.size() * sizeof(double))))
        throw Error(ErrorKind::validation, fmt::format("{}: truncated probability map", path.string()));
    return probs;
}

std::vector<fs::path> list_meal_dirs(const fs::path& root) {
    if (!fs::is_directory(root)) throw Error(ErrorKind::io, fmt::format("{} is not a directory", root.string()));
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory() && fs::exists(entry.path() / "meal.json")) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    return dirs;
}

}  // namespace mealscan
