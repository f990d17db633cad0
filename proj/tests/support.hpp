#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "cma/datastore.hpp"
#include "cma/errors.hpp"
#include "cma/heads.hpp"
#include "cma/optim.hpp"
#include "cma/rng.hpp"

namespace cma::test {

inline Matrix random_matrix(CounterRng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (double& x : m.values()) x = rng.uniform(-scale, scale);
    return m;
}

inline Vector random_vector(CounterRng& rng, std::size_t n, double scale = 1.0) {
    Vector v(n);
    for (double& x : v) x = rng.uniform(-scale, scale);
    return v;
}

inline FeatureRecord random_record(CounterRng& rng, std::size_t d, std::size_t lt, std::size_t lm,
                                   std::string id = "r", Label label = 0) {
    FeatureRecord r;
    r.id = std::move(id);
    r.label = label;
    r.text_tokens = random_matrix(rng, lt, d);
    r.image_tokens = random_matrix(rng, lm, d);
    return r;
}

// Initialized model with every parameter nudged, so no block sits at a
// symmetric point and attention weights are far from uniform.
inline CmaModel random_model(std::size_t d, Variant v, std::uint64_t seed, std::size_t hidden = 0,
                             MetaInput meta = MetaInput::probabilities) {
    CmaModel m = init_model(d, v, static_cast<std::int64_t>(seed), meta, hidden);
    CounterRng rng(seed, 99);
    for_each_param(m, [&](const std::string&, std::span<double> values) {
        for (double& x : values) x += rng.uniform(-0.5, 0.5);
    });
    return m;
}

// Max relative error of cma_backward against central differences for the
// mean loss over `batch`.
inline double model_gradient_error(const CmaModel& model, const std::vector<FeatureRecord>& batch,
                                   LossOptions opts = {}, double eps = 1e-4) {
    const Vector p0 = flatten(model);
    auto loss = [&](std::span<const double> p) {
        CmaModel m = model;
        unflatten(m, p);
        double s = 0.0;
        for (const auto& r : batch) s += cma_loss(r, r.label, m, opts);
        return s / static_cast<double>(batch.size());
    };
    auto grad = [&](std::span<const double> p) {
        CmaModel m = model;
        unflatten(m, p);
        CmaModel g = zeros_like(m);
        for (const auto& r : batch) cma_backward(r, r.label, m, g, opts);
        Vector out = flatten(g);
        for (double& x : out) x /= static_cast<double>(batch.size());
        return out;
    };
    return gradient_check(loss, grad, p0, eps).max_relative_error;
}

// Store whose values are exactly representable in float32, so a write/read
// cycle must reproduce it bitwise.
inline FeatureStore random_store(CounterRng& rng, std::string name = "random") {
    FeatureStore s;
    s.dimension = 1 + rng.below(16);
    s.source_name = std::move(name);
    const std::size_t n = rng.below(12);
    for (std::size_t i = 0; i < n; ++i) {
        FeatureRecord r;
        // multi-byte UTF-8 in some ids
        r.id = (i % 3 == 0 ? "n\xc3\xa9ws-" : "item-") + std::to_string(i) + "-" + std::to_string(rng.below(1000));
        r.label = static_cast<Label>(rng.below(2));
        r.text_tokens = Matrix(1 + rng.below(4), s.dimension);
        r.image_tokens = Matrix(1 + rng.below(4), s.dimension);
        for (Matrix* m : {&r.text_tokens, &r.image_tokens}) {
            for (double& x : m->values()) {
                const double e = std::pow(10.0, rng.uniform(-30.0, 30.0));
                x = static_cast<float>(rng.uniform(-1.0, 1.0) * e);
            }
        }
        s.records.push_back(std::move(r));
    }
    return s;
}

struct CorruptFixture {
    std::string name;
    std::vector<std::uint8_t> bytes;
    FormatErrorKind expected;
};

inline void poke_u32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

inline void poke_u64(std::vector<std::uint8_t>& b, std::size_t at, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

// Damaged variants of small valid stores, each with the error it must raise.
// Layout of the two-record base (d = 2): 20-byte header, then record "a" at
// offset 20 (id length, 'a', label at 25, L_t at 26, L_m at 30, floats from
// 34) and record "b" at 50.
inline std::vector<CorruptFixture> corrupt_fixtures() {
    FeatureStore s;
    s.dimension = 2;
    s.source_name = "fixture";
    for (const char* id : {"a", "b"}) {
        FeatureRecord r;
        r.id = id;
        r.label = id[0] == 'a' ? 0 : 1;
        r.text_tokens = Matrix{{1.0, 2.0}};
        r.image_tokens = Matrix{{3.0, 4.0}};
        s.records.push_back(r);
    }
    const auto base = serialize_store(s);

    std::vector<CorruptFixture> out;
    auto add = [&](std::string name, FormatErrorKind kind, auto&& edit) {
        auto b = base;
        edit(b);
        out.push_back({std::move(name), std::move(b), kind});
    };
    add("bad magic", FormatErrorKind::bad_magic, [](auto& b) { std::memcpy(b.data(), "XXXX", 4); });
    add("version 2", FormatErrorKind::unsupported_version, [](auto& b) { poke_u32(b, 4, 2); });
    add("header cut short", FormatErrorKind::truncated_header, [](auto& b) { b.resize(10); });
    add("zero dimension", FormatErrorKind::zero_dimension, [](auto& b) { poke_u32(b, 8, 0); });
    add("L_t = 2 with one row of data", FormatErrorKind::truncated_payload, [](auto& b) {
        poke_u64(b, 12, 1);
        b.resize(50);
        poke_u32(b, 26, 2);
    });
    add("record count beyond data", FormatErrorKind::truncated_payload, [](auto& b) { poke_u64(b, 12, 3); });
    add("label 2", FormatErrorKind::invalid_label, [](auto& b) { b[25] = 2; });
    add("empty image sequence", FormatErrorKind::empty_sequence, [](auto& b) { poke_u32(b, 30, 0); });
    add("id is not UTF-8", FormatErrorKind::invalid_id, [](auto& b) { b[24] = 0xff; });
    add("repeated id", FormatErrorKind::duplicate_id, [](auto& b) { b[54] = 'a'; });
    add("NaN value", FormatErrorKind::non_finite_value, [](auto& b) {
        const float nan = std::numeric_limits<float>::quiet_NaN();
        std::memcpy(b.data() + 38, &nan, 4);
    });
    add("infinite value", FormatErrorKind::non_finite_value, [](auto& b) {
        const float inf = std::numeric_limits<float>::infinity();
        std::memcpy(b.data() + 34, &inf, 4);
    });
    add("trailing byte", FormatErrorKind::trailing_bytes, [](auto& b) { b.push_back(0); });
    return out;
}

inline std::vector<const FeatureRecord*> pointers(const std::vector<FeatureRecord>& records) {
    std::vector<const FeatureRecord*> out;
    for (const auto& r : records) out.push_back(&r);
    return out;
}

// Scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("cma-" + tag + "-" + std::to_string(std::hash<std::string>{}(tag) ^ reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace cma::test
