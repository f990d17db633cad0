#include <doctest.h>

#include <cmath>
#include <numeric>

#include "cma/errors.hpp"
#include "cma/fusion.hpp"
#include "cma/heads.hpp"
#include "support.hpp"

using namespace cma;

namespace {

constexpr Variant kVariants[] = {Variant::full, Variant::no_cross, Variant::no_meta, Variant::no_image,
                                 Variant::no_text};

ProbVector pv(double p0, double p1) { return ProbVector::from_values({p0, p1}); }

BranchHead linear_head(Matrix w, Vector b) {
    BranchHead h;
    h.weights = std::move(w);
    h.bias = std::move(b);
    return h;
}

// Smallest |pre-activation| over the hidden layers touched by `batch`.
double min_hidden_margin(const CmaModel& m, const std::vector<FeatureRecord>& batch) {
    double margin = std::numeric_limits<double>::infinity();
    for (const auto& r : batch) {
        const FeatureBundle b = uses_attention(m.variant)
                                    ? build_bundle(r, *m.attn_mt, *m.attn_tm)
                                    : FeatureBundle{mean_rows(r.text_tokens), mean_rows(r.image_tokens),
                                                    concat_normalized(mean_rows(r.text_tokens), mean_rows(r.image_tokens)),
                                                    {}, {}};
        for (Branch br : active_branches(m.variant)) {
            const auto& h = *m.branch(br);
            for (double z : affine(b.get(br), h.hidden_w, h.hidden_b)) margin = std::min(margin, std::abs(z));
        }
    }
    return margin;
}

std::vector<FeatureRecord> random_batch(CounterRng& rng, std::size_t d, std::size_t n) {
    std::vector<FeatureRecord> b;
    for (std::size_t i = 0; i < n; ++i) {
        b.push_back(test::random_record(rng, d, 1 + rng.below(3), 1 + rng.below(3), "r" + std::to_string(i),
                                        static_cast<Label>(i % 2)));
    }
    return b;
}

}  // namespace

TEST_CASE("variant tags") {
    CHECK(parse_variant("full") == Variant::full);
    CHECK(parse_variant("-cross") == Variant::no_cross);
    CHECK(parse_variant("no-meta") == Variant::no_meta);
    CHECK(parse_variant("-img") == Variant::no_image);
    CHECK(parse_variant("-txt") == Variant::no_text);
    CHECK_THROWS_AS(parse_variant("-audio"), DataError);
    for (Variant v : kVariants) CHECK(parse_variant(variant_tag(v)) == v);

    CHECK(active_branches(Variant::full).size() == 5);
    CHECK(active_branches(Variant::no_cross) == std::vector<Branch>{Branch::text, Branch::image, Branch::concat});
    CHECK(active_branches(Variant::no_meta) == std::vector<Branch>{Branch::concat});
    CHECK(active_branches(Variant::no_image) == std::vector<Branch>{Branch::text});
    CHECK(active_branches(Variant::no_text) == std::vector<Branch>{Branch::image});
    CHECK_FALSE(uses_meta(Variant::no_meta));
    CHECK(uses_attention(Variant::full));
    CHECK_FALSE(uses_attention(Variant::no_cross));
}

TEST_CASE("branch_forward examples") {
    CounterRng rng(41);
    const BranchHead zero = linear_head(Matrix(4, 2), Vector(2, 0.0));
    for (int t = 0; t < 20; ++t) {
        const auto p = branch_forward(test::random_vector(rng, 4, 10.0), zero);
        CHECK(p[0] == 0.5);
        CHECK(p[1] == 0.5);
    }

    const BranchHead ratio = linear_head(Matrix{{std::log(3.0), 0.0}, {0.0, 0.0}}, Vector(2, 0.0));
    const auto p = branch_forward(Vector{1.0, 0.0}, ratio);
    CHECK(std::abs(p[0] - 0.75) < 1e-12);
    CHECK(std::abs(p[1] - 0.25) < 1e-12);

    CHECK_THROWS_AS(branch_forward(Vector{1.0, 0.0, 0.0}, ratio), DimensionError);
}

TEST_CASE("meta_forward examples") {
    const std::vector<ProbVector> one = {pv(0.3, 0.7)};
    MetaHead zero{Matrix(2, 2), Vector(2, 0.0), 1};
    auto y = meta_forward(one, zero);
    CHECK(y[0] == 0.5);

    // [p0, p1] passed straight through as logits.
    MetaHead pass{Matrix::identity(2), Vector(2, 0.0), 1};
    double last = -1.0;
    for (int i = 0; i <= 100; ++i) {
        const double p1 = i / 100.0;
        const std::vector<ProbVector> in = {pv(1.0 - p1, p1)};
        const auto out = meta_forward(in, pass);
        if (p1 != 0.5) CHECK(out.argmax() == in[0].argmax());
        CHECK(out[1] > last);
        last = out[1];
    }

    const double eps = 1e-3;
    std::vector<ProbVector> five(5, pv(1.0 - eps, eps));
    MetaHead strong{Matrix(10, 2), Vector(2, 0.0), 5};
    for (std::size_t i = 0; i < 5; ++i) strong.weights(2 * i, 0) = 10.0;
    CHECK(meta_forward(five, strong).argmax() == 0);

    CHECK_THROWS_AS(meta_forward(one, strong), DimensionError);
}

TEST_CASE("property: meta loss is covariant under branch permutation") {
    CounterRng rng(42);
    for (int t = 0; t < 200; ++t) {
        const std::size_t z = 1 + rng.below(5);
        std::vector<ProbVector> probs;
        for (std::size_t i = 0; i < z; ++i) probs.push_back(softmax(test::random_vector(rng, 2, 3.0)));
        MetaHead head{test::random_matrix(rng, 2 * z, 2), test::random_vector(rng, 2), z};

        std::vector<std::size_t> perm(z);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        std::vector<ProbVector> pp;
        MetaHead ph{Matrix(2 * z, 2), head.bias, z};
        for (std::size_t i = 0; i < z; ++i) {
            pp.push_back(probs[perm[i]]);
            for (std::size_t r = 0; r < 2; ++r)
                for (std::size_t c = 0; c < 2; ++c) ph.weights(2 * i + r, c) = head.weights(2 * perm[i] + r, c);
        }
        const Label y = static_cast<Label>(rng.below(2));
        const double a = cross_entropy(y, meta_forward(probs, head));
        const double b = cross_entropy(y, meta_forward(pp, ph));
        REQUIRE(std::abs(a - b) <= 1e-12);
    }
}

TEST_CASE("cross_entropy examples") {
    CHECK(std::abs(cross_entropy(1, pv(0.5, 0.5)) - std::log(2.0)) < 1e-9);
    CHECK(cross_entropy(1, pv(0.0, 1.0)) < 1e-11);
    const double clamped = cross_entropy(0, pv(0.0, 1.0));
    CHECK(std::isfinite(clamped));
    // 1 - (1 - 1e-12) is not exactly 1e-12 in binary64
    CHECK(std::abs(clamped - (-std::log(1e-12))) < 1e-4);
    CHECK(clamped == doctest::Approx(27.631).epsilon(1e-4));
}

TEST_CASE("property: cross_entropy is non-negative and zero only at the clamp") {
    CounterRng rng(43);
    for (int t = 0; t < 1000; ++t) {
        const double p1 = rng.uniform();
        const Label y = static_cast<Label>(rng.below(2));
        const double l = cross_entropy(y, pv(1.0 - p1, p1));
        REQUIRE(l >= 0.0);
        const double p_true = y == 1 ? p1 : 1.0 - p1;
        if (p_true < 1.0 - 1e-9) REQUIRE(l > 0.0);
    }
    CHECK(cross_entropy(0, pv(1.0, 0.0)) <= 1.1e-12);
}

TEST_CASE("all-zero models predict one half") {
    CounterRng rng(44);
    for (Variant v : kVariants) {
        const CmaModel m = make_zero_model(6, v);
        const auto pred = cma_forward(test::random_record(rng, 6, 2, 3), m);
        CHECK(pred.y_hat[0] == 0.5);
        CHECK(pred.y_hat[1] == 0.5);
        CHECK(pred.branch_probs.size() == active_branches(v).size());
    }
}

TEST_CASE("-cross reports exactly three branches") {
    CounterRng rng(45);
    const CmaModel m = test::random_model(4, Variant::no_cross, 1);
    const auto pred = cma_forward(test::random_record(rng, 4, 1, 1), m);
    CHECK(pred.branch_probs.size() == 3);
    CHECK(m.meta->z == 3);
    CHECK_FALSE(m.attn_mt.has_value());
}

TEST_CASE("-meta predicts with the concatenation head alone") {
    CounterRng rng(46);
    const CmaModel m = test::random_model(4, Variant::no_meta, 2);
    CHECK_FALSE(m.meta.has_value());
    const FeatureRecord r = test::random_record(rng, 4, 2, 2);
    const auto pred = cma_forward(r, m);
    const auto want = branch_forward(concat_normalized(mean_rows(r.text_tokens), mean_rows(r.image_tokens)),
                                     *m.branch(Branch::concat));
    CHECK(pred.y_hat == want);
}

TEST_CASE("property: unused modalities never influence predictions") {
    CounterRng rng(47);
    for (int t = 0; t < 200; ++t) {
        const std::size_t d = 1 + rng.below(6);
        const FeatureRecord r = test::random_record(rng, d, 1 + rng.below(3), 1 + rng.below(3));

        const CmaModel img = test::random_model(d, Variant::no_image, t);
        FeatureRecord other_image = r;
        other_image.image_tokens = test::random_matrix(rng, 1 + rng.below(4), d, 100.0);
        const auto a = cma_forward(r, img);
        const auto b = cma_forward(other_image, img);
        REQUIRE(a.y_hat == b.y_hat);
        REQUIRE(a.branch_probs == b.branch_probs);

        const CmaModel txt = test::random_model(d, Variant::no_text, t);
        FeatureRecord other_text = r;
        other_text.text_tokens = test::random_matrix(rng, 1 + rng.below(4), d, 100.0);
        REQUIRE(cma_forward(r, txt).y_hat == cma_forward(other_text, txt).y_hat);
    }
}

TEST_CASE("unused modality may even be degenerate") {
    const CmaModel m = test::random_model(2, Variant::no_image, 3);
    FeatureRecord r;
    r.text_tokens = Matrix{{1.0, 2.0}};
    r.image_tokens = Matrix{{0.0, 0.0}};
    CHECK_NOTHROW(cma_forward(r, m));
}

TEST_CASE("property: outputs are probability vectors") {
    CounterRng rng(48);
    for (int t = 0; t < 300; ++t) {
        const Variant v = kVariants[t % 5];
        const std::size_t d = 1 + rng.below(6);
        const CmaModel m = test::random_model(d, v, t, t % 3 == 0 ? 3 : 0);
        const auto pred = cma_forward(test::random_record(rng, d, 1 + rng.below(3), 1 + rng.below(3)), m);
        REQUIRE(std::abs(pred.y_hat[0] + pred.y_hat[1] - 1.0) <= 1e-9);
        for (const auto& p : pred.branch_probs) REQUIRE(std::abs(p[0] + p[1] - 1.0) <= 1e-9);
    }
}

TEST_CASE("-img gradients touch only text-side parameters") {
    CounterRng rng(49);
    const CmaModel m = test::random_model(4, Variant::no_image, 5);
    CHECK_FALSE(m.branch(Branch::image).has_value());
    CHECK_FALSE(m.branch(Branch::concat).has_value());
    CHECK_FALSE(m.attn_mt.has_value());
    CmaModel g = zeros_like(m);
    cma_backward(test::random_record(rng, 4, 2, 2, "a", 1), 1, m, g);
    for_each_param(g, [&](const std::string& name, std::span<const double>) {
        CHECK((name.rfind("branch.t.", 0) == 0 || name.rfind("meta.", 0) == 0));
    });
}

TEST_CASE("cma_backward returns the loss") {
    CounterRng rng(50);
    const CmaModel m = test::random_model(4, Variant::full, 6);
    const FeatureRecord r = test::random_record(rng, 4, 2, 3, "a", 1);
    CmaModel g = zeros_like(m);
    CHECK(cma_backward(r, 1, m, g) == doctest::Approx(cma_loss(r, 1, m)).epsilon(1e-14));
}

TEST_CASE("property: analytic gradients match finite differences for every variant") {
    for (Variant v : kVariants) {
        for (std::uint64_t t = 0; t < 20; ++t) {
            CounterRng rng(t, 7);
            const auto batch = random_batch(rng, 5, 4);
            const CmaModel m = test::random_model(5, v, t);
            CAPTURE(variant_tag(v));
            CAPTURE(t);
            REQUIRE(test::model_gradient_error(m, batch) <= 1e-4);
            REQUIRE(test::model_gradient_error(m, batch, {.aux_branch_loss = true}) <= 1e-4);
        }
    }
}

TEST_CASE("gradients with hidden layers and feature meta input") {
    std::size_t checked = 0;
    for (std::uint64_t t = 0; checked < 20 && t < 200; ++t) {
        CounterRng rng(t, 8);
        const auto batch = random_batch(rng, 4, 3);
        const CmaModel m = test::random_model(4, Variant::full, t, 3);
        // central differences straddling a ReLU kink are meaningless
        if (min_hidden_margin(m, batch) < 1e-2) continue;
        ++checked;
        REQUIRE(test::model_gradient_error(m, batch) <= 1e-4);
    }
    CHECK(checked == 20);

    for (std::uint64_t t = 0; t < 20; ++t) {
        CounterRng rng(t, 9);
        const auto batch = random_batch(rng, 4, 3);
        const CmaModel m = test::random_model(4, Variant::full, t, 0, MetaInput::features);
        REQUIRE(test::model_gradient_error(m, batch) <= 1e-4);
    }
}

TEST_CASE("parameter layout") {
    const CmaModel m = make_zero_model(512, Variant::full);
    // 6 attention matrices, 4 branches of width d and one of 2d, 5 biases, meta
    const std::size_t d = 512;
    CHECK(parameter_count(m) == 3 * d * d * 2 + (4 * d * 2 + 2 * d * 2) + 5 * 2 + (10 * 2 + 2));
    CHECK(parameter_count(m) == 1579040);

    CHECK(parameter_count(make_zero_model(8, Variant::no_meta)) == 16 * 2 + 2);
    CHECK(parameter_count(make_zero_model(8, Variant::no_image)) == 8 * 2 + 2 + 2 * 2 + 2);

    const CmaModel h = make_zero_model(8, Variant::no_cross, MetaInput::probabilities, 4);
    CHECK(parameter_count(h) == (8 * 4 + 4 + 4 * 2 + 2) * 2 + (16 * 4 + 4 + 4 * 2 + 2) + 6 * 2 + 2);

    CmaModel r = test::random_model(3, Variant::full, 9);
    const Vector flat = flatten(r);
    CHECK(flat.size() == parameter_count(r));
    CmaModel back = zeros_like(r);
    unflatten(back, flat);
    CHECK(back == r);

    std::size_t total = 0;
    for (const auto& s : param_shapes(r)) total += s.rows * s.cols;
    CHECK(total == parameter_count(r));
}
