#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cma/numerics.hpp"

namespace cma {

// 0 = real news, 1 = fake news.
using Label = std::uint8_t;

struct FeatureRecord {
    std::string id;
    Label label = 0;
    Matrix text_tokens;   // L_t x d
    Matrix image_tokens;  // L_m x d
    bool synthetic = false;

    bool operator==(const FeatureRecord&) const = default;
};

struct FeatureStore {
    std::size_t dimension = 0;
    std::vector<FeatureRecord> records;
    std::string source_name;

    bool operator==(const FeatureStore&) const = default;
};

// Throws DataError/DimensionError when a record cannot belong to a store of
// dimension `d`.
void validate_record(const FeatureRecord& record, std::size_t d);

// Full invariant check: unique ids, widths, labels, finiteness.
void validate_store(const FeatureStore& store);

}  // namespace cma
