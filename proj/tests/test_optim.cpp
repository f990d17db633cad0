#include <doctest.h>

#include <omp.h>

#include <cmath>

#include "cma/datastore.hpp"
#include "cma/errors.hpp"
#include "cma/optim.hpp"
#include "cma/synthetic.hpp"
#include "support.hpp"

using namespace cma;

namespace {

// Textbook Adam without weight decay, written out independently.
struct PlainAdam {
    double lr, b1, b2, eps;
    std::vector<double> m, v;
    int t = 0;

    void step(std::vector<double>& w, const std::vector<double>& g) {
        ++t;
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1 * m[i] + (1 - b1) * g[i];
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(b1, t));
            const double vh = v[i] / (1 - std::pow(b2, t));
            w[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
};

FeatureRecord token_record(std::string id, Label y, Vector text, Vector image) {
    FeatureRecord r;
    r.id = std::move(id);
    r.label = y;
    r.text_tokens = Matrix::row_vector(text);
    r.image_tokens = Matrix::row_vector(image);
    return r;
}

}  // namespace

TEST_CASE("adamw first step from w = 1, g = 1") {
    const TrainConfig cfg;
    Vector w = {1.0}, m = {0.0}, v = {0.0};
    const Vector g = {1.0};
    adamw_update(w, g, m, v, 1, cfg);
    const double want = 1.0 - 1e-3 * (1.0 / (1.0 + 1e-8)) - 1e-3 * 0.01 * 1.0;
    CHECK(std::abs(w[0] - want) < 1e-15);
    CHECK(std::abs(w[0] - 0.998990) < 1e-8);
}

TEST_CASE("adamw leaves w alone for zero gradient and zero decay") {
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    Vector w = {0.37, -2.0}, m = {0.0, 0.0}, v = {0.0, 0.0};
    const Vector g = {0.0, 0.0};
    for (std::uint64_t s = 1; s <= 5; ++s) adamw_update(w, g, m, v, s, cfg);
    CHECK(w == Vector{0.37, -2.0});
}

TEST_CASE("adamw without decay is plain Adam") {
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    CounterRng rng(61);
    Vector w = test::random_vector(rng, 7), m(7, 0.0), v(7, 0.0);
    PlainAdam ref{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, Vector(7, 0.0), Vector(7, 0.0)};
    Vector w_ref = w;
    for (std::uint64_t s = 1; s <= 50; ++s) {
        const Vector g = test::random_vector(rng, 7, 3.0);
        adamw_update(w, g, m, v, s, cfg);
        ref.step(w_ref, g);
        for (std::size_t i = 0; i < 7; ++i) REQUIRE(std::abs(w[i] - w_ref[i]) <= 1e-15);
    }
}

TEST_CASE("adamw decay is decoupled from the gradient") {
    TrainConfig cfg;
    cfg.weight_decay = 0.1;
    Vector w = {2.0}, m = {0.0}, v = {0.0};
    adamw_update(w, Vector{0.0}, m, v, 1, cfg);
    CHECK(std::abs(w[0] - (2.0 - 1e-3 * 0.1 * 2.0)) < 1e-15);
}

TEST_CASE("property: without decay the update follows the gradient sign and is bounded by lr") {
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    CounterRng rng(62);
    for (int t = 0; t < 500; ++t) {
        const double g = rng.uniform(-10.0, 10.0);
        if (std::abs(g) < 1e-6) continue;
        Vector w = {0.0}, m = {0.0}, v = {0.0};
        for (std::uint64_t s = 1; s <= 20; ++s) {
            const double before = w[0];
            adamw_update(w, Vector{g}, m, v, s, cfg);
            const double delta = w[0] - before;
            REQUIRE(delta * g < 0.0);
            REQUIRE(std::abs(delta) <= cfg.learning_rate * (1.0 + 1e-9));
        }
    }
}

TEST_CASE("adamw names the block with a non-finite gradient") {
    const TrainConfig cfg;
    CmaModel m = make_zero_model(2, Variant::no_image);
    CmaModel g = zeros_like(m);
    g.branch(Branch::text)->bias[1] = std::nan("");
    auto state = make_adamw_state(m);
    try {
        adamw_step(m, g, state, cfg);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("branch.t.bias") != std::string::npos);
    }
}

TEST_CASE("config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.learning_rate = 0.0;
    CHECK_NOTHROW(c.validate());
    c.learning_rate = -1e-3;
    CHECK_THROWS_AS(c.validate(), DataError);
    c = {};
    c.patience = 0;
    CHECK_THROWS_AS(c.validate(), DataError);
    c.patience = 21;
    CHECK_THROWS_AS(c.validate(), DataError);
    c = {};
    c.weight_decay = 1.0;
    CHECK_THROWS_AS(c.validate(), DataError);
    c = {};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), DataError);
}

TEST_CASE("config file round trip and errors") {
    TrainConfig c;
    c.learning_rate = 5e-4;
    c.patience = 5;
    c.hidden_units = 8;
    c.meta_input = MetaInput::features;
    c.aux_branch_loss = true;
    c.use_validation = false;
    const TrainConfig back = parse_train_config(format_train_config(c));
    CHECK(format_train_config(back) == format_train_config(c));
    CHECK(back.learning_rate == 5e-4);
    CHECK(back.meta_input == MetaInput::features);

    const TrainConfig d = parse_train_config("# defaults except one\n  batch_size = 8   # inline\n\n");
    CHECK(d.batch_size == 8);
    CHECK(d.max_epochs == 20);
    CHECK(d.patience == 3);
    CHECK(d.weight_decay == 1e-2);

    CHECK_THROWS_AS(parse_train_config("learning_rat = 1"), DataError);
    CHECK_THROWS_AS(parse_train_config("learning_rate = fast"), DataError);
    CHECK_THROWS_AS(parse_train_config("learning_rate"), DataError);
    CHECK_THROWS_AS(parse_train_config("max_epochs = -1"), DataError);
    CHECK_THROWS_AS(parse_train_config("patience = 30"), DataError);
}

TEST_CASE("init_model is seed-deterministic") {
    for (Variant v : {Variant::full, Variant::no_cross, Variant::no_meta}) {
        const CmaModel a = init_model(6, v, 5);
        CHECK(init_model(6, v, 5) == a);
        CHECK_FALSE(init_model(6, v, 6) == a);
    }
}

TEST_CASE("init_model draws depend on parameter names only") {
    const CmaModel full = init_model(6, Variant::full, 9);
    const CmaModel cross = init_model(6, Variant::no_cross, 9);
    CHECK(full.branch(Branch::text) == cross.branch(Branch::text));
    CHECK(full.branch(Branch::concat) == cross.branch(Branch::concat));
}

TEST_CASE("init_model shapes and ranges") {
    const std::size_t d = 16;
    const CmaModel m = init_model(d, Variant::full, 3);
    for (const auto* a : {&*m.attn_mt, &*m.attn_tm}) {
        for (const Matrix* w : {&a->w_q, &a->w_k, &a->w_v}) {
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) {
                    const double off = (*w)(i, j) - (i == j ? 1.0 : 0.0);
                    REQUIRE(std::abs(off) <= 1e-2);
                }
        }
    }
    for (Branch b : kAllBranches) {
        const auto& h = *m.branch(b);
        const double bound = 1.0 / std::sqrt(static_cast<double>(h.weights.rows()));
        for (double x : h.weights.values()) REQUIRE(std::abs(x) <= bound);
        CHECK(h.bias == Vector{0.0, 0.0});
    }
    // meta starts as an average of the five branch distributions
    const auto& w = m.meta->weights;
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(std::abs(w(2 * i, 0) - 0.2) <= 1e-2);
        CHECK(std::abs(w(2 * i + 1, 1) - 0.2) <= 1e-2);
        CHECK(std::abs(w(2 * i, 1)) <= 1e-2);
        CHECK(std::abs(w(2 * i + 1, 0)) <= 1e-2);
    }
    CHECK(m.meta->bias == Vector{0.0, 0.0});

    const CmaModel z = init_model(d, Variant::full, 3, MetaInput::probabilities, 0, InitScheme::zero);
    CHECK(z == make_zero_model(d, Variant::full));
}

TEST_CASE("property: loss on a separable two-sample problem decreases for five epochs") {
    for (Variant v : {Variant::full, Variant::no_cross, Variant::no_meta, Variant::no_image, Variant::no_text}) {
        for (std::int64_t seed = 0; seed < 5; ++seed) {
            const std::vector<FeatureRecord> recs = {
                token_record("a", 0, {1.0, 0.2, -0.3}, {0.5, 1.0, 0.0}),
                token_record("b", 1, {-1.0, 0.1, 0.4}, {-0.5, -1.0, 0.2}),
            };
            EpisodeData data;
            data.train = test::pointers(recs);
            TrainConfig cfg;
            cfg.use_validation = false;
            cfg.max_epochs = 5;
            cfg.patience = 1;
            const auto r = train_episode(data, init_model(3, v, seed), cfg, seed);
            REQUIRE(r.history.train_loss.size() == 5);
            for (std::size_t e = 1; e < 5; ++e) {
                CAPTURE(variant_tag(v));
                REQUIRE(r.history.train_loss[e] < r.history.train_loss[e - 1]);
            }
            CHECK(r.history.best_epoch == 5);
        }
    }
}

TEST_CASE("separable blobs fit the 16-shot training set within 20 epochs") {
    const FeatureStore store = synthetic::generate({});
    for (std::int64_t seed = 0; seed < 10; ++seed) {
        const Episode ep = sample_episode(store, 16, seed, false);
        const EpisodeData data = materialize(store, ep);
        TrainConfig cfg;
        cfg.use_validation = false;
        const auto r = train_episode(data, init_model(store.dimension, Variant::full, seed), cfg, seed);
        CHECK(r.history.epochs_ran == 20);
        CHECK(evaluate_accuracy(r.model, data.train) >= 0.95);
    }
}

TEST_CASE("patience 1 stops right after a validation peak at epoch 1") {
    // Validation holds the training records with flipped labels, so fitting
    // the training set can only lower validation accuracy.
    synthetic::Spec spec;
    spec.per_class = 20;
    const FeatureStore store = synthetic::generate(spec);
    std::vector<FeatureRecord> flipped;
    for (std::size_t i = 0; i < 16; ++i) {
        FeatureRecord r = store.records[i];
        r.label = static_cast<Label>(1 - r.label);
        flipped.push_back(r);
    }
    EpisodeData data;
    for (std::size_t i = 0; i < 16; ++i) data.train.push_back(&store.records[i]);
    data.val = test::pointers(flipped);
    TrainConfig cfg;
    cfg.patience = 1;
    cfg.learning_rate = 1e-2;
    const auto r = train_episode(data, init_model(store.dimension, Variant::full, 1), cfg, 1);
    CHECK(r.history.epochs_ran <= 2);
    CHECK(r.history.best_epoch == 1);
    CHECK(r.history.stop_reason == StopReason::early_stopped);
}

TEST_CASE("property: the returned snapshot is the first validation maximum") {
    synthetic::Spec spec;
    spec.separation = 3.0;
    const FeatureStore store = synthetic::generate(spec);
    for (std::int64_t seed = 0; seed < 10; ++seed) {
        const Episode ep = sample_episode(store, 8, seed, true);
        const EpisodeData data = materialize(store, ep);
        TrainConfig cfg;
        cfg.learning_rate = 5e-3;
        const auto r = train_episode(data, init_model(store.dimension, Variant::no_cross, seed), cfg, seed);
        const auto& acc = r.history.val_accuracy;
        REQUIRE(acc.size() == r.history.epochs_ran);
        const std::size_t best = r.history.best_epoch;
        for (std::size_t e = 0; e < acc.size(); ++e) {
            if (e + 1 < best) REQUIRE(acc[e] < acc[best - 1]);
            else REQUIRE(acc[e] <= acc[best - 1]);
        }
        REQUIRE(evaluate_accuracy(r.model, data.val) == acc[best - 1]);
        if (r.history.stop_reason == StopReason::early_stopped) {
            REQUIRE(r.history.epochs_ran == best + cfg.patience);
        }
    }
}

TEST_CASE("without validation the last epoch is kept") {
    const FeatureStore store = synthetic::generate({});
    const Episode ep = sample_episode(store, 2, 0, false);
    CHECK(ep.val_ids.empty());
    const EpisodeData data = materialize(store, ep);
    TrainConfig cfg;
    cfg.use_validation = false;
    const auto r = train_episode(data, init_model(store.dimension, Variant::full, 0), cfg, 0);
    CHECK(r.history.epochs_ran == 20);
    CHECK(r.history.best_epoch == 20);
    CHECK(r.history.val_accuracy.empty());
}

TEST_CASE("2-shot trains on one full batch of 4") {
    const FeatureStore store = synthetic::generate({});
    const Episode ep = sample_episode(store, 2, 0, true);
    CHECK(ep.train_ids.size() == 4);
    const EpisodeData data = materialize(store, ep);
    TrainConfig one_epoch;
    one_epoch.max_epochs = 1;
    one_epoch.patience = 1;
    const CmaModel init = init_model(store.dimension, Variant::no_cross, 0);
    const auto r = train_episode(data, init, one_epoch, 0);

    CmaModel manual = init;
    CmaModel grad = zeros_like(manual);
    batch_gradient(manual, data.train, grad);
    auto state = make_adamw_state(manual);
    adamw_step(manual, grad, state, one_epoch);
    const Vector got = flatten(r.model), want = flatten(manual);
    // same step, gradients summed in shuffled order
    for (std::size_t i = 0; i < got.size(); ++i) REQUIRE(std::abs(got[i] - want[i]) <= 1e-15);
    CHECK_FALSE(r.model == init);
}

TEST_CASE("property: training is deterministic and independent of thread count") {
    synthetic::Spec spec;
    spec.dim = 512;
    spec.per_class = 6;
    const FeatureStore store = synthetic::generate(spec);
    const Episode ep = sample_episode(store, 2, 4, true);
    const EpisodeData data = materialize(store, ep);
    TrainConfig cfg;
    cfg.max_epochs = 2;
    cfg.patience = 2;
    cfg.batch_size = 2;
    const CmaModel init = init_model(store.dimension, Variant::full, 4);

    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    const auto a = train_episode(data, init, cfg, 4);
    omp_set_num_threads(4);
    const auto b = train_episode(data, init, cfg, 4);
    omp_set_num_threads(saved);
    CHECK(a.model == b.model);
    CHECK(a.history.train_loss == b.history.train_loss);

    // the shuffle seed changes how the four records split into batches
    const auto c = train_episode(data, init, cfg, 5);
    CHECK_FALSE(c.model == a.model);
}

TEST_CASE("train_episode rejects mismatched widths") {
    const FeatureStore store = synthetic::generate({});
    const EpisodeData data = materialize(store, sample_episode(store, 2, 0, true));
    CHECK_THROWS_AS(train_episode(data, init_model(8, Variant::full, 0), {}, 0), DimensionError);
}
