#include "cma/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <sstream>

#include "cma/errors.hpp"
#include "cma/rng.hpp"

namespace cma {
namespace {

// Re-raises the in-flight exception with a (shot, seed) prefix, keeping its type.
[[noreturn]] void rethrow_annotated(const std::string& prefix) {
    try {
        throw;
    } catch (const FormatError& e) {
        throw FormatError(e.kind(), prefix + e.what(), e.offset());
    } catch (const DimensionError& e) {
        throw DimensionError(prefix + e.what());
    } catch (const DegenerateVectorError& e) {
        throw DegenerateVectorError(prefix + e.what());
    } catch (const NumericError& e) {
        throw NumericError(prefix + e.what());
    } catch (const DataError& e) {
        throw DataError(prefix + e.what());
    }
}

nlohmann::json train_config_json(const TrainConfig& c) {
    return {
        {"learning_rate", c.learning_rate},
        {"weight_decay", c.weight_decay},
        {"max_epochs", c.max_epochs},
        {"patience", c.patience},
        {"batch_size", c.batch_size},
        {"beta1", c.beta1},
        {"beta2", c.beta2},
        {"adam_eps", c.adam_eps},
        {"init_seed", c.init_seed},
        {"init", c.init == InitScheme::zero ? "zero" : "uniform"},
        {"meta_input", std::string(meta_input_name(c.meta_input))},
        {"hidden_units", c.hidden_units},
        {"aux_branch_loss", c.aux_branch_loss},
        {"use_validation", c.use_validation},
        {"label_augmentation", c.label_augmentation},
    };
}

nlohmann::json config_echo(const ProtocolConfig& cfg, const std::string& mode,
                           const FeatureStore& store, const FeatureStore* test_store) {
    std::vector<std::int64_t> seeds;
    for (std::size_t i = 0; i < cfg.num_seeds; ++i) seeds.push_back(seed_for(cfg, i));
    std::vector<std::string> branches;
    for (Branch b : active_branches(cfg.variant)) branches.emplace_back(branch_name(b));
    nlohmann::json j = {
        {"mode", mode},
        {"variant", std::string(variant_tag(cfg.variant))},
        {"z", active_branches(cfg.variant).size()},
        {"branches", branches},
        {"shots", cfg.shots},
        {"num_seeds", cfg.num_seeds},
        {"base_seed", cfg.base_seed},
        {"seeds", seeds},
        {"store", store.source_name},
        {"dimension", store.dimension},
        {"trimming", "drop one minimum and one maximum"},
        {"std_convention", "population standard deviation over all seeds"},
        {"train", train_config_json(cfg.train_cfg)},
    };
    if (test_store) j["test_store"] = test_store->source_name;
    return j;
}

ProtocolReport run_cells(const FeatureStore& store, const FeatureStore* test_store,
                         const ProtocolConfig& cfg, const std::string& mode) {
    cfg.validate();
    const std::size_t n_shots = cfg.shots.size();
    const std::size_t total = n_shots * cfg.num_seeds;
    std::vector<CellResult> cells(total);
    std::vector<std::exception_ptr> errors(total);
    std::vector<double> seconds(total, 0.0);

    const auto n = static_cast<std::ptrdiff_t>(total);
    const int threads = static_cast<int>(std::max<std::size_t>(1, cfg.jobs));
#pragma omp parallel for schedule(dynamic) num_threads(threads)
    for (std::ptrdiff_t idx = 0; idx < n; ++idx) {
        const auto i = static_cast<std::size_t>(idx);
        const std::size_t shot = cfg.shots[i / cfg.num_seeds];
        const std::int64_t seed = seed_for(cfg, i % cfg.num_seeds);
        const auto t0 = std::chrono::steady_clock::now();
        try {
            cells[i] = run_cell(store, test_store, shot, seed, cfg);
        } catch (...) {
            errors[i] = std::current_exception();
        }
        seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    ProtocolReport report;
    report.config = config_echo(cfg, mode, store, test_store);
    report.cells = std::move(cells);
    report.has_timings = cfg.record_timings;
    for (std::size_t s = 0; s < n_shots; ++s) {
        std::vector<double> accs;
        double wall = 0.0;
        for (std::size_t k = 0; k < cfg.num_seeds; ++k) {
            accs.push_back(report.cells[s * cfg.num_seeds + k].accuracy);
            wall += seconds[s * cfg.num_seeds + k];
        }
        report.summaries.push_back({cfg.shots[s], trimmed_mean(accs), std_dev(accs), wall});
    }
    return report;
}

std::string pct(double v) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(2) << 100.0 * v;
    return o.str();
}

std::vector<const nlohmann::json*> protocol_reports(const nlohmann::json& j) {
    std::vector<const nlohmann::json*> out;
    if (j.value("kind", std::string{}) == "ablation") {
        for (const auto& r : j.at("reports")) out.push_back(&r);
    } else {
        out.push_back(&j);
    }
    if (out.empty()) throw DataError("report JSON holds no protocol reports");
    for (const auto* r : out) {
        if (!r->is_object() || !r->contains("summaries") || !r->contains("config")) {
            throw DataError("report JSON lacks config/summaries");
        }
    }
    return out;
}

template <typename Fn>
std::string guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed report JSON: ") + e.what());
    }
}

}  // namespace

double accuracy(std::span<const Label> predictions, std::span<const Label> labels) {
    if (predictions.size() != labels.size()) {
        throw DimensionError("accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                             std::to_string(labels.size()) + " labels");
    }
    if (labels.empty()) throw DataError("accuracy: empty input");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double trimmed_mean(std::span<const double> scores) {
    if (scores.size() < 3) {
        throw DataError("trimmed_mean needs at least 3 scores, got " +
                        std::to_string(scores.size()));
    }
    const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
    // minmax_element returns the first minimum and the last maximum; with all
    // values equal they are still distinct positions.
    // Offsets from the minimum keep constant inputs exact.
    const double base = *lo;
    double sum = 0.0;
    for (auto it = scores.begin(); it != scores.end(); ++it) {
        if (it != lo && it != hi) sum += *it - base;
    }
    return base + sum / static_cast<double>(scores.size() - 2);
}

double std_dev(std::span<const double> scores) {
    if (scores.empty()) throw DataError("std_dev: empty input");
    const double base = *std::min_element(scores.begin(), scores.end());
    double offset = 0.0;
    for (double s : scores) offset += s - base;
    const double mean = base + offset / static_cast<double>(scores.size());
    double ss = 0.0;
    for (double s : scores) ss += (s - mean) * (s - mean);
    return std::sqrt(ss / static_cast<double>(scores.size()));
}

void ProtocolConfig::validate() const {
    if (shots.empty()) throw DataError("protocol: no shots given");
    for (auto s : shots) {
        if (s == 0) throw DataError("protocol: shots must be positive");
    }
    if (num_seeds < 3) throw DataError("protocol: trimming needs at least 3 seeds");
    train_cfg.validate();
}

std::int64_t seed_for(const ProtocolConfig& cfg, std::size_t index) {
    return cfg.base_seed + static_cast<std::int64_t>(index);
}

CellResult run_cell(const FeatureStore& store, const FeatureStore* test_store, std::size_t shot,
                    std::int64_t seed, const ProtocolConfig& cfg) {
    try {
        Episode ep = sample_episode(store, shot, seed, cfg.train_cfg.use_validation);
        if (cfg.train_cfg.label_augmentation) {
            if (!cfg.label_features) {
                throw DataError("label augmentation enabled but no label features available");
            }
            ep = augment_with_labels(std::move(ep), *cfg.label_features, store.dimension);
        }
        const EpisodeData data =
            test_store ? materialize_shifted(store, ep, *test_store) : materialize(store, ep);
        if (data.test.empty()) throw DataError("test split is empty");

        TrainConfig tc = cfg.train_cfg;
        tc.init_seed = static_cast<std::int64_t>(combine_keys(
            static_cast<std::uint64_t>(cfg.train_cfg.init_seed), static_cast<std::uint64_t>(seed)));
        CmaModel model = init_model(store.dimension, cfg.variant, tc);
        TrainResult trained = train_episode(data, std::move(model), tc, seed);

        CellResult cell;
        cell.shot = shot;
        cell.seed = seed;
        cell.accuracy = evaluate_accuracy(trained.model, data.test);
        cell.epochs_ran = trained.history.epochs_ran;
        cell.best_epoch = trained.history.best_epoch;
        cell.stop_reason = std::string(stop_reason_name(trained.history.stop_reason));
        cell.train_ids = ep.train_ids;
        return cell;
    } catch (const Error&) {
        rethrow_annotated("[shot " + std::to_string(shot) + ", seed " + std::to_string(seed) + "] ");
    }
}

ProtocolReport run_protocol(const FeatureStore& store, const ProtocolConfig& cfg) {
    return run_cells(store, nullptr, cfg, "in-domain");
}

AblationReport run_ablation(const FeatureStore& store, const std::vector<Variant>& variants,
                            const ProtocolConfig& cfg) {
    if (variants.empty()) throw DataError("ablation: no variants given");
    AblationReport out;
    for (Variant v : variants) {
        ProtocolConfig c = cfg;
        c.variant = v;
        out.variants.push_back(v);
        out.reports.push_back(run_cells(store, nullptr, c, "ablation"));
    }
    return out;
}

ProtocolReport run_domain_shift(const FeatureStore& train_store, const FeatureStore& test_store,
                                const ProtocolConfig& cfg) {
    if (train_store.dimension != test_store.dimension) {
        throw DimensionError("domain shift: train store dimension " +
                             std::to_string(train_store.dimension) + " vs test store " +
                             std::to_string(test_store.dimension));
    }
    return run_cells(train_store, &test_store, cfg, "domain-shift");
}

nlohmann::json to_json(const ProtocolReport& report) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : report.cells) {
        cells.push_back({{"shot", c.shot},
                         {"seed", c.seed},
                         {"accuracy", c.accuracy},
                         {"epochs_ran", c.epochs_ran},
                         {"best_epoch", c.best_epoch},
                         {"stop_reason", c.stop_reason}});
    }
    nlohmann::json summaries = nlohmann::json::array();
    for (const auto& s : report.summaries) {
        nlohmann::json row = {
            {"shot", s.shot}, {"trimmed_mean", s.trimmed_mean}, {"std_dev", s.std_dev}};
        if (report.has_timings) row["wall_seconds"] = s.wall_seconds;
        summaries.push_back(std::move(row));
    }
    return {{"format_version", report.format_version},
            {"config", report.config},
            {"cells", std::move(cells)},
            {"summaries", std::move(summaries)}};
}

nlohmann::json to_json(const AblationReport& report) {
    nlohmann::json reports = nlohmann::json::array();
    for (const auto& r : report.reports) reports.push_back(to_json(r));
    return {{"format_version", kReportFormatVersion}, {"kind", "ablation"}, {"reports", reports}};
}

std::string dump_report(const nlohmann::json& j) { return j.dump(2) + "\n"; }

std::string report_to_csv(const nlohmann::json& report) {
    return guarded([&] {
        std::ostringstream o;
        o << "variant,shot,trimmed_mean_pct,std_dev_pct,num_seeds\n";
        for (const auto* r : protocol_reports(report)) {
            const auto& cfg = r->at("config");
            const std::string variant = cfg.value("variant", std::string("full"));
            const auto seeds = cfg.value("num_seeds", std::size_t{0});
            for (const auto& s : r->at("summaries")) {
                o << variant << "," << s.at("shot").get<std::size_t>() << ","
                  << pct(s.at("trimmed_mean").get<double>()) << ","
                  << pct(s.at("std_dev").get<double>()) << "," << seeds << "\n";
            }
        }
        return o.str();
    });
}

std::string report_to_table(const nlohmann::json& report) {
    return guarded([&] {
        // Variants as rows, shots as columns, like a paper results table.
        std::ostringstream o;
        const auto reports = protocol_reports(report);
        std::vector<std::size_t> shots;
        for (const auto& s : reports.front()->at("summaries")) shots.push_back(s.at("shot"));
        o << std::left << std::setw(10) << "variant";
        for (auto s : shots) o << std::right << std::setw(16) << (std::to_string(s) + "-shot");
        o << std::right << std::setw(10) << "AVG" << "\n";
        for (const auto* r : reports) {
            o << std::left << std::setw(10) << r->at("config").value("variant", std::string("full"));
            double sum = 0.0;
            std::size_t n = 0;
            for (const auto& s : r->at("summaries")) {
                const double m = s.at("trimmed_mean");
                const double sd = s.at("std_dev");
                o << std::right << std::setw(16) << (pct(m) + " ±" + pct(sd));
                sum += m;
                ++n;
            }
            o << std::right << std::setw(10) << pct(n ? sum / static_cast<double>(n) : 0.0) << "\n";
        }
        return o.str();
    });
}

}  // namespace cma
