#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cma/datastore.hpp"
#include "cma/heads.hpp"
#include "cma/optim.hpp"

namespace cma {

inline constexpr int kReportFormatVersion = 1;

double accuracy(std::span<const Label> predictions, std::span<const Label> labels);

// Mean after removing one instance of the maximum and one of the minimum.
// Requires at least three scores.
double trimmed_mean(std::span<const double> scores);

// Population standard deviation over all scores.
double std_dev(std::span<const double> scores);

struct ProtocolConfig {
    std::vector<std::size_t> shots = {2, 8, 16, 32};
    std::size_t num_seeds = 10;
    std::int64_t base_seed = 0;
    Variant variant = Variant::full;
    TrainConfig train_cfg;
    // Parallel (shot, seed) cells. Not part of the report: results are
    // identical for every value.
    std::size_t jobs = 1;
    // Adds per-shot wall-clock seconds to the report (breaks byte-identity).
    bool record_timings = false;
    // Class label embeddings, used when train_cfg.label_augmentation is set.
    std::optional<std::array<Vector, 2>> label_features;

    void validate() const;
};

struct CellResult {
    std::size_t shot = 0;
    std::int64_t seed = 0;
    double accuracy = 0.0;
    std::size_t epochs_ran = 0;
    std::size_t best_epoch = 0;
    std::string stop_reason;
    std::vector<std::string> train_ids;  // kept in memory for pairing checks; not serialized
};

struct ShotSummary {
    std::size_t shot = 0;
    double trimmed_mean = 0.0;
    double std_dev = 0.0;
    double wall_seconds = 0.0;
};

struct ProtocolReport {
    int format_version = kReportFormatVersion;
    nlohmann::json config;
    std::vector<CellResult> cells;  // shot-major, then seed
    std::vector<ShotSummary> summaries;
    bool has_timings = false;
};

// Seed of the i-th run: base_seed + i.
std::int64_t seed_for(const ProtocolConfig& cfg, std::size_t index);

// One (shot, seed) cell: sample, init, train, evaluate on the test split.
// `test_store` switches to the domain-shift arrangement.
CellResult run_cell(const FeatureStore& store, const FeatureStore* test_store, std::size_t shot,
                    std::int64_t seed, const ProtocolConfig& cfg);

ProtocolReport run_protocol(const FeatureStore& store, const ProtocolConfig& cfg);

struct AblationReport {
    std::vector<Variant> variants;
    std::vector<ProtocolReport> reports;
};

// Every variant runs on the same seeds, so rows are paired.
AblationReport run_ablation(const FeatureStore& store, const std::vector<Variant>& variants,
                            const ProtocolConfig& cfg);

// Episodes come from train_store only; each test set is all of test_store.
ProtocolReport run_domain_shift(const FeatureStore& train_store, const FeatureStore& test_store,
                                const ProtocolConfig& cfg);

nlohmann::json to_json(const ProtocolReport& report);
nlohmann::json to_json(const AblationReport& report);

// Serialized form written by the CLI: 2-space indented JSON plus a newline.
std::string dump_report(const nlohmann::json& j);

// One row per (variant, shot) from either a protocol or an ablation report.
std::string report_to_csv(const nlohmann::json& report);
std::string report_to_table(const nlohmann::json& report);

}  // namespace cma
