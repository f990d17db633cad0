#include "cma/synthetic.hpp"

#include <cmath>

#include "cma/errors.hpp"
#include "cma/rng.hpp"

namespace cma::synthetic {
namespace {

Vector unit_direction(std::size_t d, std::uint64_t seed, std::string_view modality) {
    CounterRng rng(seed, hash_name(modality));
    Vector u(d);
    for (double& x : u) x = rng.normal();
    return l2_normalize(u);
}

Matrix tokens(std::size_t rows, std::size_t d, const Vector* direction, double signal, double offset,
              double noise, CounterRng& rng) {
    Matrix m(rows, d);
    const double base = offset / std::sqrt(static_cast<double>(d));
    for (std::size_t r = 0; r < rows; ++r) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < d; ++c) {
            row[c] = base + noise * rng.normal();
            if (direction) row[c] += signal * (*direction)[c];
        }
    }
    return m;
}

}  // namespace

FeatureStore generate(const Spec& spec) {
    if (spec.dim == 0 || spec.per_class == 0 || spec.text_tokens == 0 || spec.image_tokens == 0) {
        throw DataError("synthetic: dimension, per_class and token counts must be positive");
    }
    const Vector u_t = unit_direction(spec.dim, spec.distribution_seed, "text");
    const Vector u_m = unit_direction(spec.dim, spec.distribution_seed, "image");

    FeatureStore store;
    store.dimension = spec.dim;
    store.source_name = spec.name;
    for (std::size_t i = 0; i < 2 * spec.per_class; ++i) {
        const Label label = static_cast<Label>(i % 2);
        CounterRng rng(spec.sample_seed, i);
        double s = label == 1 ? 1.0 : -1.0;
        if (spec.flip_labels) s = -s;
        const double amp = s * spec.separation / 2.0;

        bool text_signal = true;
        bool image_signal = true;
        if (spec.kind == Kind::complementary) {
            text_signal = rng.uniform() < 0.5;
            image_signal = !text_signal;
        }
        FeatureRecord r;
        r.id = spec.name + "-" + std::to_string(i);
        r.label = label;
        r.text_tokens = tokens(spec.text_tokens, spec.dim, text_signal ? &u_t : nullptr, amp,
                               spec.offset, spec.noise, rng);
        r.image_tokens = tokens(spec.image_tokens, spec.dim, image_signal ? &u_m : nullptr, amp,
                                spec.offset, spec.noise, rng);
        store.records.push_back(std::move(r));
    }
    return store;
}

Kind parse_kind(const std::string& s) {
    if (s == "blobs") return Kind::blobs;
    if (s == "complementary") return Kind::complementary;
    throw DataError("unknown synthetic kind '" + s + "'");
}

}  // namespace cma::synthetic
