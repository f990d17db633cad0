#include "cma/optim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cma/errors.hpp"
#include "cma/rng.hpp"

namespace cma {
namespace {

std::string trim(std::string s) {
    const auto ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size()) throw DataError("config: '" + key + "' expects a number, got '" + v + "'");
    return out;
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    std::int64_t out = 0;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size()) throw DataError("config: '" + key + "' expects an integer, got '" + v + "'");
    return out;
}

std::size_t parse_count(const std::string& key, const std::string& v) {
    const auto n = parse_int(key, v);
    if (n < 0) throw DataError("config: '" + key + "' must be non-negative");
    return static_cast<std::size_t>(n);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw DataError("config: '" + key + "' expects true/false, got '" + v + "'");
}

void init_uniform(std::span<double> values, std::uint64_t key, double bound) {
    CounterRng rng(key);
    for (double& x : values) x = rng.uniform(-bound, bound);
}

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw DataError("learning_rate must be non-negative");
    }
    if (!(weight_decay >= 0.0 && weight_decay < 1.0)) {
        throw DataError("weight_decay must lie in [0, 1)");
    }
    if (max_epochs == 0) throw DataError("max_epochs must be positive");
    if (patience == 0 || patience > max_epochs) {
        throw DataError("patience must lie in [1, max_epochs]");
    }
    if (batch_size == 0) throw DataError("batch_size must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw DataError("beta1 and beta2 must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw DataError("adam_eps must be positive");
}

TrainConfig parse_train_config(const std::string& text, TrainConfig cfg) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw DataError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string v = trim(line.substr(eq + 1));
        if (key == "learning_rate") cfg.learning_rate = parse_double(key, v);
        else if (key == "weight_decay") cfg.weight_decay = parse_double(key, v);
        else if (key == "max_epochs") cfg.max_epochs = parse_count(key, v);
        else if (key == "patience") cfg.patience = parse_count(key, v);
        else if (key == "batch_size") cfg.batch_size = parse_count(key, v);
        else if (key == "beta1") cfg.beta1 = parse_double(key, v);
        else if (key == "beta2") cfg.beta2 = parse_double(key, v);
        else if (key == "adam_eps") cfg.adam_eps = parse_double(key, v);
        else if (key == "init_seed") cfg.init_seed = parse_int(key, v);
        else if (key == "init") {
            if (v == "uniform") cfg.init = InitScheme::uniform;
            else if (v == "zero") cfg.init = InitScheme::zero;
            else throw DataError("config: init must be uniform or zero");
        }
        else if (key == "meta_input") cfg.meta_input = parse_meta_input(v);
        else if (key == "hidden_units") cfg.hidden_units = parse_count(key, v);
        else if (key == "aux_branch_loss") cfg.aux_branch_loss = parse_bool(key, v);
        else if (key == "use_validation") cfg.use_validation = parse_bool(key, v);
        else if (key == "label_augmentation") cfg.label_augmentation = parse_bool(key, v);
        else throw DataError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_train_config(ss.str());
}

std::string format_train_config(const TrainConfig& c) {
    std::ostringstream o;
    o.precision(17);
    o << "learning_rate = " << c.learning_rate << "\n"
      << "weight_decay = " << c.weight_decay << "\n"
      << "max_epochs = " << c.max_epochs << "\n"
      << "patience = " << c.patience << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "beta1 = " << c.beta1 << "\n"
      << "beta2 = " << c.beta2 << "\n"
      << "adam_eps = " << c.adam_eps << "\n"
      << "init_seed = " << c.init_seed << "\n"
      << "init = " << (c.init == InitScheme::zero ? "zero" : "uniform") << "\n"
      << "meta_input = " << meta_input_name(c.meta_input) << "\n"
      << "hidden_units = " << c.hidden_units << "\n"
      << "aux_branch_loss = " << (c.aux_branch_loss ? "true" : "false") << "\n"
      << "use_validation = " << (c.use_validation ? "true" : "false") << "\n"
      << "label_augmentation = " << (c.label_augmentation ? "true" : "false") << "\n";
    return o.str();
}

AdamWState make_adamw_state(const CmaModel& model) {
    AdamWState s;
    for_each_param(model, [&](const std::string&, std::span<const double> v) {
        s.m.emplace_back(v.size(), 0.0);
        s.v.emplace_back(v.size(), 0.0);
    });
    return s;
}

void adamw_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                  std::span<double> v, std::uint64_t step, const TrainConfig& cfg,
                  const std::string& block) {
    if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
        throw DimensionError("adamw: shape mismatch in block " + block);
    }
    if (!all_finite(grads)) throw NumericError("adamw: non-finite gradient in block " + block);
    const double t = static_cast<double>(step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        const double w = params[i];
        params[i] = w - cfg.learning_rate * (m_hat / (std::sqrt(v_hat) + cfg.adam_eps) +
                                             cfg.weight_decay * w);
    }
}

void adamw_step(CmaModel& model, const CmaModel& grad, AdamWState& state, const TrainConfig& cfg) {
    std::vector<std::span<const double>> grads;
    std::vector<std::string> names;
    for_each_param(grad, [&](const std::string& name, std::span<const double> g) {
        grads.push_back(g);
        names.push_back(name);
    });
    if (grads.size() != state.m.size()) throw DimensionError("adamw: state does not match model");
    ++state.step;
    std::size_t i = 0;
    for_each_param(model, [&](const std::string& name, std::span<double> w) {
        if (name != names[i]) throw DimensionError("adamw: gradient block order mismatch at " + name);
        adamw_update(w, grads[i], state.m[i], state.v[i], state.step, cfg, name);
        ++i;
    });
}

CmaModel init_model(std::size_t d, Variant variant, std::int64_t seed, MetaInput meta_input,
                    std::size_t hidden_units, InitScheme scheme) {
    CmaModel m = make_zero_model(d, variant, meta_input, hidden_units);
    if (scheme == InitScheme::zero) return m;
    const auto base = static_cast<std::uint64_t>(seed);
    auto key = [&](const std::string& name) { return combine_keys(base, hash_name(name)); };

    auto attention = [&](std::optional<CrossAttentionParams>& p, const std::string& prefix) {
        if (!p) return;
        for (auto [mat, suffix] : {std::pair{&p->w_q, ".w_q"}, std::pair{&p->w_k, ".w_k"},
                                   std::pair{&p->w_v, ".w_v"}}) {
            init_uniform(mat->values(), key(prefix + suffix), 1e-2);
            for (std::size_t i = 0; i < d; ++i) (*mat)(i, i) += 1.0;
        }
    };
    attention(m.attn_mt, "attn_mt");
    attention(m.attn_tm, "attn_tm");

    auto dense = [&](Matrix& w, const std::string& name) {
        init_uniform(w.values(), key(name), 1.0 / std::sqrt(static_cast<double>(w.rows())));
    };
    for (Branch b : kAllBranches) {
        auto& h = m.branch(b);
        if (!h) continue;
        const std::string prefix = "branch." + std::string(branch_name(b));
        if (h->has_hidden()) dense(h->hidden_w, prefix + ".hidden_w");
        dense(h->weights, prefix + ".weights");
    }
    if (m.meta && m.meta_input == MetaInput::features) {
        dense(m.meta->weights, "meta.weights");
    } else if (m.meta) {
        // Starts as the plain average of the branch probabilities.
        Matrix& w = m.meta->weights;
        init_uniform(w.values(), key("meta.weights"), 1e-2);
        const double share = 1.0 / static_cast<double>(m.meta->z);
        for (std::size_t i = 0; i < m.meta->z; ++i) {
            w(2 * i, 0) += share;
            w(2 * i + 1, 1) += share;
        }
    }
    return m;
}

CmaModel init_model(std::size_t d, Variant variant, const TrainConfig& cfg) {
    return init_model(d, variant, cfg.init_seed, cfg.meta_input, cfg.hidden_units, cfg.init);
}

std::string_view stop_reason_name(StopReason r) {
    return r == StopReason::completed ? "completed" : "early-stopped";
}

std::vector<Label> predict_labels(const CmaModel& model,
                                  const std::vector<const FeatureRecord*>& records) {
    std::vector<Label> out;
    out.reserve(records.size());
    for (const auto* r : records) {
        out.push_back(static_cast<Label>(cma_forward(*r, model).predicted_label()));
    }
    return out;
}

double evaluate_accuracy(const CmaModel& model, const std::vector<const FeatureRecord*>& records) {
    if (records.empty()) throw DataError("accuracy over an empty record set");
    const auto pred = predict_labels(model, records);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < records.size(); ++i) hits += pred[i] == records[i]->label;
    return static_cast<double>(hits) / static_cast<double>(records.size());
}

double batch_gradient(const CmaModel& model, std::span<const FeatureRecord* const> batch,
                      CmaModel& grad, LossOptions options) {
    if (batch.empty()) throw DataError("empty batch");
    double loss = 0.0;
    for (const auto* r : batch) loss += cma_backward(*r, r->label, model, grad, options);
    const double inv = 1.0 / static_cast<double>(batch.size());
    for_each_param(grad, [&](const std::string&, std::span<double> g) {
        for (double& x : g) x *= inv;
    });
    return loss * inv;
}

TrainResult train_episode(const EpisodeData& data, CmaModel model, const TrainConfig& cfg,
                          std::int64_t shuffle_seed) {
    cfg.validate();
    if (data.train.empty()) throw DataError("train_episode: empty train set");
    for (const auto* r : data.train) {
        if (r->text_tokens.cols() != model.dim || r->image_tokens.cols() != model.dim) {
            throw DimensionError("train_episode: record '" + r->id + "' width does not match model dimension " +
                                 std::to_string(model.dim));
        }
    }
    const LossOptions loss_opts{cfg.aux_branch_loss};
    const std::size_t n = data.train.size();
    const std::size_t batch = std::min(cfg.batch_size, n);
    const bool has_val = !data.val.empty();
    const std::uint64_t shuffle_key =
        combine_keys(static_cast<std::uint64_t>(shuffle_seed), hash_name("shuffle"));

    AdamWState state = make_adamw_state(model);
    TrainResult result{model, {}};
    TrainHistory& h = result.history;
    double best_acc = -1.0;
    std::size_t since_best = 0;

    std::vector<const FeatureRecord*> order(n);
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::copy(data.train.begin(), data.train.end(), order.begin());
        CounterRng rng(shuffle_key, epoch);
        rng.shuffle(order);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t len = std::min(batch, n - start);
            CmaModel grad = zeros_like(model);
            const double loss =
                batch_gradient(model, std::span(order).subspan(start, len), grad, loss_opts);
            adamw_step(model, grad, state, cfg);
            epoch_loss += loss * static_cast<double>(len);
        }
        h.train_loss.push_back(epoch_loss / static_cast<double>(n));
        h.epochs_ran = epoch;

        if (!has_val) {
            result.model = model;
            h.best_epoch = epoch;
            continue;
        }
        const double acc = evaluate_accuracy(model, data.val);
        h.val_accuracy.push_back(acc);
        if (acc > best_acc) {
            best_acc = acc;
            result.model = model;
            h.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            h.stop_reason = StopReason::early_stopped;
            break;
        }
    }
    return result;
}

}  // namespace cma
