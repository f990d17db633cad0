#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cma/checkpoint.hpp"
#include "cma/datastore.hpp"
#include "cma/errors.hpp"
#include "cma/harness.hpp"
#include "cma/optim.hpp"
#include "cma/rng.hpp"
#include "cma/synthetic.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string store;
    std::string train_store;
    std::string test_store;
    std::string model;
    std::string config;
    std::string out;
    std::string in;
    std::string format = "csv";
    std::string variant = "full";
    std::vector<std::string> variants = {"full", "-cross", "-meta", "-img", "-txt"};
    std::vector<std::size_t> shots = {2, 8, 16, 32};
    std::size_t shot = 16;
    std::size_t seeds = 10;
    std::int64_t seed = 0;
    std::int64_t base_seed = 0;
    std::size_t jobs = 1;
    bool timings = false;

    std::string kind = "blobs";
    cma::synthetic::Spec synth;
};

void write_output(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw cma::DataError("cannot write " + path);
    f << text;
    if (!f) throw cma::DataError("write failed: " + path);
}

cma::TrainConfig train_config(const Options& o) {
    cma::TrainConfig cfg;
    if (!o.config.empty()) cfg = cma::load_train_config(o.config);
    cfg.validate();
    return cfg;
}

cma::ProtocolConfig protocol_config(const Options& o, const cma::FeatureStore* store_for_labels,
                                    const std::string& store_path) {
    cma::ProtocolConfig cfg;
    cfg.shots = o.shots;
    cfg.num_seeds = o.seeds;
    cfg.base_seed = o.base_seed;
    cfg.variant = cma::parse_variant(o.variant);
    cfg.train_cfg = train_config(o);
    cfg.jobs = o.jobs;
    cfg.record_timings = o.timings;
    if (store_for_labels && cfg.train_cfg.label_augmentation) {
        if (auto m = cma::read_manifest(store_path)) cfg.label_features = m->label_features;
    }
    cfg.validate();
    return cfg;
}

int cmd_validate(const Options& o) {
    const cma::FeatureStore store = cma::read_store(o.store);
    const auto counts = cma::class_counts(store);
    std::cout << o.store << ": ok, " << store.records.size() << " records (real " << counts[0]
              << ", fake " << counts[1] << "), d=" << store.dimension << ", source "
              << store.source_name << "\n";
    return kExitOk;
}

int cmd_train(const Options& o) {
    if (o.out.empty()) throw UsageError("train: --out is required");
    const cma::FeatureStore store = cma::read_store(o.store);
    cma::ProtocolConfig pc = protocol_config(o, &store, o.store);
    pc.shots = {o.shot};

    cma::Episode ep = cma::sample_episode(store, o.shot, o.seed, pc.train_cfg.use_validation);
    if (pc.train_cfg.label_augmentation) {
        if (!pc.label_features) throw cma::DataError("label augmentation needs label_features in the sidecar");
        ep = cma::augment_with_labels(std::move(ep), *pc.label_features, store.dimension);
    }
    const cma::EpisodeData data = cma::materialize(store, ep);
    cma::TrainConfig tc = pc.train_cfg;
    tc.init_seed = static_cast<std::int64_t>(cma::combine_keys(
        static_cast<std::uint64_t>(pc.train_cfg.init_seed), static_cast<std::uint64_t>(o.seed)));
    cma::TrainResult r =
        cma::train_episode(data, cma::init_model(store.dimension, pc.variant, tc), tc, o.seed);
    cma::save_model(r.model, o.out);

    std::cout << "variant " << cma::variant_tag(pc.variant) << ", shot " << o.shot << ", seed " << o.seed
              << ": epochs " << r.history.epochs_ran << " (best " << r.history.best_epoch << ", "
              << cma::stop_reason_name(r.history.stop_reason) << "), test accuracy "
              << cma::evaluate_accuracy(r.model, data.test) << "\n";
    return kExitOk;
}

int cmd_eval(const Options& o) {
    const cma::CmaModel model = cma::load_model(o.model);
    const cma::FeatureStore store = cma::read_store(o.store);
    if (store.dimension != model.dim) {
        throw cma::DimensionError("model dimension " + std::to_string(model.dim) + " vs store " +
                                  std::to_string(store.dimension));
    }
    std::vector<const cma::FeatureRecord*> all;
    for (const auto& r : store.records) all.push_back(&r);
    std::cout << "accuracy " << cma::evaluate_accuracy(model, all) << " over " << all.size()
              << " records\n";
    return kExitOk;
}

int cmd_protocol(const Options& o) {
    const cma::FeatureStore store = cma::read_store(o.store);
    const cma::ProtocolConfig cfg = protocol_config(o, &store, o.store);
    write_output(o.out, cma::dump_report(cma::to_json(cma::run_protocol(store, cfg))));
    return kExitOk;
}

int cmd_ablate(const Options& o) {
    const cma::FeatureStore store = cma::read_store(o.store);
    const cma::ProtocolConfig cfg = protocol_config(o, &store, o.store);
    std::vector<cma::Variant> variants;
    for (const auto& v : o.variants) variants.push_back(cma::parse_variant(v));
    write_output(o.out, cma::dump_report(cma::to_json(cma::run_ablation(store, variants, cfg))));
    return kExitOk;
}

int cmd_shift(const Options& o) {
    const cma::FeatureStore train = cma::read_store(o.train_store);
    const cma::FeatureStore test = cma::read_store(o.test_store);
    const cma::ProtocolConfig cfg = protocol_config(o, &train, o.train_store);
    write_output(o.out, cma::dump_report(cma::to_json(cma::run_domain_shift(train, test, cfg))));
    return kExitOk;
}

int cmd_report(const Options& o) {
    std::ifstream f(o.in);
    if (!f) throw cma::DataError("cannot open " + o.in);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw cma::DataError(std::string("report is not valid JSON: ") + e.what());
    }
    std::string text;
    if (o.format == "csv") text = cma::report_to_csv(j);
    else if (o.format == "table") text = cma::report_to_table(j);
    else text = cma::dump_report(j);
    write_output(o.out, text);
    return kExitOk;
}

int cmd_synth(Options o) {
    if (o.out.empty()) throw UsageError("synth: --out is required");
    o.synth.kind = cma::synthetic::parse_kind(o.kind);
    const cma::FeatureStore store = cma::synthetic::generate(o.synth);
    nlohmann::json prov = {{"generator", "synthetic"},
                           {"kind", o.kind},
                           {"separation", o.synth.separation},
                           {"noise", o.synth.noise},
                           {"offset", o.synth.offset},
                           {"flip_labels", o.synth.flip_labels},
                           {"distribution_seed", o.synth.distribution_seed},
                           {"sample_seed", o.synth.sample_seed}};
    cma::write_store(store, o.out, prov);
    std::cout << "wrote " << store.records.size() << " records to " << o.out << "\n";
    return kExitOk;
}

void add_training_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--config", o.config, "TrainConfig file (key = value lines)")->check(CLI::ExistingFile);
    cmd->add_option("--variant", o.variant, "full, -cross, -meta, -img or -txt")->capture_default_str();
}

void add_protocol_flags(CLI::App* cmd, Options& o) {
    add_training_flags(cmd, o);
    cmd->add_option("--shots", o.shots, "Comma-separated shot counts")->delimiter(',')->capture_default_str();
    cmd->add_option("--seeds", o.seeds, "Seeds per shot")->capture_default_str();
    cmd->add_option("--base-seed", o.base_seed, "Seed of the first run")->capture_default_str();
    cmd->add_option("--jobs", o.jobs, "Parallel (shot, seed) cells")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_flag("--timings", o.timings, "Record wall-clock seconds in the report");
    cmd->add_option("--out", o.out, "Report path (stdout when omitted)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-modal augmentation for few-shot multimodal classification"};
    app.require_subcommand(1, 1);
    app.allow_windows_style_options(false);
    Options o;

    auto* validate = app.add_subcommand("validate", "Check a CMAF feature store");
    validate->add_option("store", o.store, "Store path")->required();

    auto* train = app.add_subcommand("train", "Train on one episode and save the model");
    train->add_option("--store", o.store)->required();
    train->add_option("--shots", o.shot, "Shots per class")->capture_default_str();
    train->add_option("--seed", o.seed, "Episode seed")->capture_default_str();
    train->add_option("--out", o.out, "Model path")->required();
    add_training_flags(train, o);

    auto* eval = app.add_subcommand("eval", "Accuracy of a saved model on a whole store");
    eval->add_option("--model", o.model)->required();
    eval->add_option("--store", o.store)->required();

    auto* protocol = app.add_subcommand("protocol", "Few-shot protocol over shots and seeds");
    protocol->add_option("--store", o.store)->required();
    add_protocol_flags(protocol, o);

    auto* ablate = app.add_subcommand("ablate", "Paired-seed protocol for several variants");
    ablate->add_option("--store", o.store)->required();
    add_protocol_flags(ablate, o);
    ablate->add_option("--variants", o.variants, "Comma-separated variant tags")
        ->delimiter(',')
        ->capture_default_str();

    auto* shift = app.add_subcommand("shift", "Train on one store, test on another");
    shift->add_option("--train-store", o.train_store)->required();
    shift->add_option("--test-store", o.test_store)->required();
    add_protocol_flags(shift, o);

    auto* report = app.add_subcommand("report", "Render a report as CSV or a table");
    report->add_option("--in", o.in)->required();
    report->add_option("--format", o.format)
        ->check(CLI::IsMember({"csv", "table", "json"}))
        ->capture_default_str();
    report->add_option("--out", o.out, "Output path (stdout when omitted)");

    auto* synth = app.add_subcommand("synth", "Write a synthetic store");
    synth->add_option("--kind", o.kind)->check(CLI::IsMember({"blobs", "complementary"}))->capture_default_str();
    synth->add_option("--dim", o.synth.dim)->check(CLI::PositiveNumber)->capture_default_str();
    synth->add_option("--per-class", o.synth.per_class)->check(CLI::PositiveNumber)->capture_default_str();
    synth->add_option("--text-tokens", o.synth.text_tokens)->check(CLI::PositiveNumber)->capture_default_str();
    synth->add_option("--image-tokens", o.synth.image_tokens)->check(CLI::PositiveNumber)->capture_default_str();
    synth->add_option("--separation", o.synth.separation)->capture_default_str();
    synth->add_option("--noise", o.synth.noise)->capture_default_str();
    synth->add_option("--offset", o.synth.offset)->capture_default_str();
    synth->add_flag("--flip-labels", o.synth.flip_labels);
    synth->add_option("--distribution-seed", o.synth.distribution_seed)->capture_default_str();
    synth->add_option("--sample-seed", o.synth.sample_seed)->capture_default_str();
    synth->add_option("--name", o.synth.name)->capture_default_str();
    synth->add_option("--out", o.out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*validate) return cmd_validate(o);
        if (*train) return cmd_train(o);
        if (*eval) return cmd_eval(o);
        if (*protocol) return cmd_protocol(o);
        if (*ablate) return cmd_ablate(o);
        if (*shift) return cmd_shift(o);
        if (*report) return cmd_report(o);
        if (*synth) return cmd_synth(o);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const cma::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const cma::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
