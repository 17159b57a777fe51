#include "mealscan/core/components.hpp"

namespace mealscan {

Components connected_components(const Image<std::uint8_t>& mask) {
    Components out;
    out.id = Image<int>(mask.width, mask.height, -1);
    std::vector<std::size_t> stack;
    for (std::size_t seed = 0; seed < mask.data.size(); ++seed) {
        if (!mask.data[seed] || out.id.data[seed] >= 0) continue;
        const int label = int(out.pixels.size());
        auto& members = out.pixels.emplace_back();
        out.id.data[seed] = label;
        stack.push_back(seed);
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            members.push_back(p);
            const int x = int(p % std::size_t(mask.width)), y = int(p / std::size_t(mask.width));
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = x + dx, ny = y + dy;
                    if (nx < 0 || ny < 0 || nx >= mask.width || ny >= mask.height) continue;
                    const std::size_t q = std::size_t(ny) * mask.width + nx;
                    if (mask.data[q] && out.id.data[q] < 0) {
                        out.id.data[q] = label;
                        stack.push_back(q);
                    }
                }
        }
    }
    return out;
}

}  // namespace mealscan
