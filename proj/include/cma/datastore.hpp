#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cma/record.hpp"

namespace cma {

// CMAF feature store, version 1. All integers little-endian.
//
//   "CMAF"            4 bytes magic
//   version           u32 (= 1)
//   dimension d       u32
//   record count      u64
//   per record:
//     id length       u32, followed by that many UTF-8 bytes
//     label           u8 (0 real, 1 fake)
//     L_t, L_m        u32, u32
//     text tokens     L_t * d float32, row-major
//     image tokens    L_m * d float32, row-major
//
// Values are widened to double on load. A JSON sidecar `<file>.json` may carry
// the source name, class counts, provenance and per-class label embeddings.
inline constexpr std::array<char, 4> kStoreMagic = {'C', 'M', 'A', 'F'};
inline constexpr std::uint32_t kStoreVersion = 1;

void write_store(const FeatureStore& store, const std::filesystem::path& path,
                 const nlohmann::json& provenance = nlohmann::json::object());

// Parses and validates a CMAF buffer. Throws FormatError.
FeatureStore parse_store(std::span<const std::uint8_t> bytes, std::string source_name);
std::vector<std::uint8_t> serialize_store(const FeatureStore& store);

// Reads the store and, when present, its sidecar. Without a sidecar the source
// name is the file stem.
FeatureStore read_store(const std::filesystem::path& path);

struct StoreManifest {
    std::string source_name;
    std::size_t dimension = 0;
    std::array<std::size_t, 2> class_counts{};
    nlohmann::json provenance = nlohmann::json::object();
    std::optional<std::array<Vector, 2>> label_features;
};

std::filesystem::path sidecar_path(const std::filesystem::path& store_path);
std::optional<StoreManifest> read_manifest(const std::filesystem::path& store_path);
void write_manifest(const StoreManifest& manifest, const std::filesystem::path& store_path);

std::array<std::size_t, 2> class_counts(const FeatureStore& store);

// An n-shot split. Train and validation hold exactly n_shot ids per class;
// test holds every other record of the sampled store.
struct Episode {
    std::size_t n_shot = 0;
    std::int64_t seed = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> test_ids;
    // Label-augmentation records; they join the train split only.
    std::vector<FeatureRecord> synthetic_train;

    bool operator==(const Episode&) const = default;
};

// Class-stratified sampling without replacement. The generator is keyed by
// (seed, store.source_name) and ids are sorted before shuffling, so the
// result does not depend on record order in memory.
Episode sample_episode(const FeatureStore& store, std::size_t n_shot, std::int64_t seed,
                       bool with_validation);

// Index of the candidate with the highest cosine similarity; lowest index on
// ties.
std::size_t select_best_image(std::span<const double> text_feature,
                              const std::vector<Vector>& candidates);

// Appends one synthetic record per class whose text and image tokens are the
// class label embedding. Returns the episode unchanged when `enabled` is false.
Episode augment_with_labels(Episode episode, const std::array<Vector, 2>& label_features,
                            std::size_t dimension, bool enabled = true);

// Records of an episode resolved against their stores.
struct EpisodeData {
    std::vector<const FeatureRecord*> train;
    std::vector<const FeatureRecord*> val;
    std::vector<const FeatureRecord*> test;
};

// All three splits from one store.
EpisodeData materialize(const FeatureStore& store, const Episode& episode);

// Train/validation from `train_store`, test = every record of `test_store`.
EpisodeData materialize_shifted(const FeatureStore& train_store, const Episode& episode,
                                const FeatureStore& test_store);

}  // namespace cma
