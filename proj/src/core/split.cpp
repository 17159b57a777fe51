#include "mealscan/core/split.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mealscan/core/random.hpp"
#include "mealscan/core/types.hpp"

namespace mealscan {

namespace {
constexpr double kTrain = 232, kVal = 30, kTest = 60;
}

SplitSizes split_sizes(std::size_t total) {
    if (total < 3) throw Error(ErrorKind::validation, "split needs at least 3 records");
    const double n = double(total);
    const double sum = kTrain + kVal + kTest;
    SplitSizes s;
    s.val = std::max<std::size_t>(1, std::size_t(std::llround(n * kVal / sum)));
    s.test = std::max<std::size_t>(1, std::size_t(std::llround(n * kTest / sum)));
    s.train = total - s.val - s.test;
    return s;
}

DatasetSplit<std::size_t> split_indices(std::size_t total, std::uint64_t seed) {
    const auto sizes = split_sizes(total);
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);
    DatasetSplit<std::size_t> out;
    out.train.assign(order.begin(), order.begin() + std::ptrdiff_t(sizes.train));
    out.val.assign(order.begin() + std::ptrdiff_t(sizes.train), order.begin() + std::ptrdiff_t(sizes.train + sizes.val));
    out.test.assign(order.begin() + std::ptrdiff_t(sizes.train + sizes.val), order.end());
    // Each split is returned in ascending index order.
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

}  // namespace mealscan
