#pragma once

#include <cstdint>
#include <vector>

#include "mealscan/core/types.hpp"

namespace mealscan {

struct Components {
    Image<int> id;  // -1 outside the mask, otherwise component index in scan order
    std::vector<std::vector<std::size_t>> pixels;

    std::size_t count() const { return pixels.size(); }
};

/// 8-connected components of the nonzero pixels of mask.
Components connected_components(const Image<std::uint8_t>& mask);

}  // namespace mealscan
