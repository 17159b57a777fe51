#pragma once

#include <cstdint>
#include <vector>

namespace mealscan {

struct SplitSizes {
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
};

/// Proportional 232:30:60 allocation; val and test are rounded to nearest and train takes the remainder.
SplitSizes split_sizes(std::size_t total);

template <typename T>
struct DatasetSplit {
    std::vector<T> train;
    std::vector<T> val;
    std::vector<T> test;
};

/// Index-level split; deterministic in seed. Throws for fewer than 3 records.
DatasetSplit<std::size_t> split_indices(std::size_t total, std::uint64_t seed);

template <typename T>
DatasetSplit<T> split_dataset(const std::vector<T>& records, std::uint64_t seed) {
    const auto idx = split_indices(records.size(), seed);
    DatasetSplit<T> out;
    for (auto i : idx.train) out.train.push_back(records[i]);
    for (auto i : idx.val) out.val.push_back(records[i]);
    for (auto i : idx.test) out.test.push_back(records[i]);
    return out;
}

}  // namespace mealscan
