#include <bit>
#include <cstring>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "mealscan/core/io.hpp"
#include "mealscan/segnet/network.hpp"

namespace mealscan::segnet {

namespace {

constexpr char kMagic[8] = {'M', 'S', 'C', 'K', 'P', 'T', '0', '1'};

nlohmann::json config_to_json(const NetworkConfig& c) {
    return {{"input_height", c.input_height},   {"input_width", c.input_width},
            {"encoder_filters", c.encoder_filters}, {"food_classes", c.food_classes},
            {"plate_classes", c.plate_classes}, {"kernel_size", c.kernel_size},
            {"depth_scale_m", c.depth_scale_m}, {"bn_momentum", c.bn_momentum},
            {"bn_epsilon", c.bn_epsilon}};
}

NetworkConfig config_from_json(const nlohmann::json& j) {
    NetworkConfig c;
    c.input_height = j.at("input_height").get<int>();
    c.input_width = j.at("input_width").get<int>();
    c.encoder_filters = j.at("encoder_filters").get<std::array<int, 6>>();
    c.food_classes = j.at("food_classes").get<int>();
    c.plate_classes = j.at("plate_classes").get<int>();
    c.kernel_size = j.at("kernel_size").get<int>();
    c.depth_scale_m = j.at("depth_scale_m").get<double>();
    c.bn_momentum = j.at("bn_momentum").get<double>();
    c.bn_epsilon = j.at("bn_epsilon").get<double>();
    return c;
}

}  // namespace

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
    static_assert(std::endian::native == std::endian::little);
    nlohmann::json tensors = nlohmann::json::array();
    std::string payload;
    auto add = [&](const Parameter& p, const char* kind) {
        tensors.push_back({{"name", p.name},
                           {"kind", kind},
                           {"shape", p.shape},
                           {"offset", payload.size() / sizeof(double)},
                           {"count", p.value.size()}});
        payload.append(reinterpret_cast<const char*>(p.value.data()), p.value.size() * sizeof(double));
    };
    for (const auto& p : net.parameters()) add(p, "parameter");
    for (const auto& b : net.buffers()) add(b, "buffer");
    const nlohmann::json header{{"format", "mealscan-checkpoint"},
                                {"version", 1},
                                {"seed", net.seed()},
                                {"config", config_to_json(net.config())},
                                {"tensors", tensors}};
    const std::string text = header.dump();
    std::string bytes(kMagic, sizeof kMagic);
    const std::uint64_t length = text.size();
    bytes.append(reinterpret_cast<const char*>(&length), sizeof length);
    bytes += text;
    bytes += payload;
    write_text_atomic(path, bytes);
}

Network load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, fmt::format("cannot open checkpoint {}", path.string()));
    char magic[8];
    std::uint64_t length = 0;
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0 ||
        !in.read(reinterpret_cast<char*>(&length), sizeof length))
        throw Error(ErrorKind::validation, fmt::format("{} is not a checkpoint", path.string()));
    std::string text(length, '\0');
    if (!in.read(text.data(), std::streamsize(length)))
        throw Error(ErrorKind::validation, fmt::format("{}: truncated header", path.string()));
    const auto header = nlohmann::json::parse(text);
    Network net(config_from_json(header.at("config")), header.at("seed").get<std::uint64_t>());
    std::vector<char> rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto find = [&](std::vector<Parameter>& list, const std::string& name) -> Parameter& {
        for (auto& p : list)
            if (p.name == name) return p;
        throw Error(ErrorKind::validation, fmt::format("{}: unknown tensor '{}'", path.string(), name));
    };
    std::size_t seen = 0;
    for (const auto& t : header.at("tensors")) {
        const auto name = t.at("name").get<std::string>();
        auto& target = find(t.at("kind") == "buffer" ? net.buffers() : net.parameters(), name);
        const auto offset = t.at("offset").get<std::size_t>();
        const auto count = t.at("count").get<std::size_t>();
        if (count != target.value.size() || (offset + count) * sizeof(double) > rest.size())
            throw Error(ErrorKind::validation, fmt::format("{}: tensor '{}' has wrong size", path.string(), name));
        std::memcpy(target.value.data(), rest.data() + offset * sizeof(double), count * sizeof(double));
        ++seen;
    }
    if (seen != net.parameters().size() + net.buffers().size())
        throw Error(ErrorKind::validation, fmt::format("{}: checkpoint is missing tensors", path.string()));
    return net;
}

}  // namespace mealscan::segnet
