#include "cma/record.hpp"

#include <unordered_set>

#include "cma/errors.hpp"

namespace cma {

void validate_record(const FeatureRecord& record, std::size_t d) {
    const std::string who = "record '" + record.id + "'";
    if (record.id.empty()) throw DataError("record with empty id");
    if (record.label > 1) {
        throw DataError(who + ": label " + std::to_string(record.label) + " not in {0, 1}");
    }
    if (record.text_tokens.rows() == 0 || record.image_tokens.rows() == 0) {
        throw DataError(who + ": empty token sequence");
    }
    if (record.text_tokens.cols() != d || record.image_tokens.cols() != d) {
        throw DimensionError(who + ": text " + record.text_tokens.shape() + ", image " +
                             record.image_tokens.shape() + " for store dimension " +
                             std::to_string(d));
    }
    if (!all_finite(record.text_tokens.values()) || !all_finite(record.image_tokens.values())) {
        throw DataError(who + ": non-finite feature value");
    }
}

void validate_store(const FeatureStore& store) {
    if (store.dimension == 0) throw DataError("store dimension is zero");
    std::unordered_set<std::string> seen;
    for (const auto& r : store.records) {
        validate_record(r, store.dimension);
        if (!seen.insert(r.id).second) throw DataError("duplicate record id '" + r.id + "'");
    }
}

}  // namespace cma
