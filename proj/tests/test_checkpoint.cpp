#include <doctest.h>

#include <cstring>

#include "cma/checkpoint.hpp"
#include "cma/errors.hpp"
#include "support.hpp"

using namespace cma;

namespace {

CmaModel float_model(std::size_t d, Variant v, std::uint64_t seed, std::size_t hidden = 0,
                     MetaInput meta = MetaInput::probabilities) {
    CmaModel m = test::random_model(d, v, seed, hidden, meta);
    for_each_param(m, [](const std::string&, std::span<double> values) {
        for (double& x : values) x = static_cast<float>(x);
    });
    return m;
}

FormatErrorKind kind_of(const std::vector<std::uint8_t>& bytes) {
    try {
        parse_model(bytes);
    } catch (const FormatError& e) {
        return e.kind();
    }
    FAIL("checkpoint parsed");
    return FormatErrorKind::io;
}

}  // namespace

TEST_CASE("checkpoints round-trip every variant") {
    test::TempDir dir("checkpoint");
    std::uint64_t seed = 0;
    for (Variant v : {Variant::full, Variant::no_cross, Variant::no_meta, Variant::no_image, Variant::no_text}) {
        for (std::size_t hidden : {0, 3}) {
            const CmaModel m = float_model(4, v, ++seed, hidden);
            const auto path = dir / ("m" + std::to_string(seed) + ".bin");
            save_model(m, path);
            CHECK(load_model(path) == m);
        }
    }
    const CmaModel f = float_model(3, Variant::full, 99, 0, MetaInput::features);
    CHECK(parse_model(serialize_model(f)) == f);
}

TEST_CASE("loading widens float32 values") {
    const CmaModel m = test::random_model(3, Variant::no_cross, 5);
    const CmaModel back = parse_model(serialize_model(m));
    const Vector a = flatten(m), b = flatten(back);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == static_cast<double>(static_cast<float>(a[i])));
}

TEST_CASE("damaged checkpoints are rejected") {
    const auto good = serialize_model(float_model(2, Variant::no_image, 1));

    auto b = good;
    std::memcpy(b.data(), "CMAF", 4);
    CHECK(kind_of(b) == FormatErrorKind::bad_magic);

    b = good;
    b[4] = 9;
    CHECK(kind_of(b) == FormatErrorKind::unsupported_version);

    b = good;
    b.resize(good.size() - 3);
    CHECK(kind_of(b) == FormatErrorKind::truncated_payload);

    b = good;
    b.push_back(1);
    CHECK(kind_of(b) == FormatErrorKind::trailing_bytes);

    b = good;
    b.resize(6);
    CHECK(kind_of(b) == FormatErrorKind::truncated_header);

    b = good;
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(b.data() + b.size() - 4, &nan, 4);
    CHECK(kind_of(b) == FormatErrorKind::non_finite_value);

    // a -img file relabelled as -txt names the wrong branch
    b = good;
    const std::string tag = "-img";
    auto it = std::search(b.begin(), b.end(), tag.begin(), tag.end());
    REQUIRE(it != b.end());
    std::copy_n("-txt", 4, it);
    CHECK(kind_of(b) == FormatErrorKind::bad_tensor);
}

TEST_CASE("checkpoints refuse parameters beyond float32") {
    CmaModel m = make_zero_model(2, Variant::no_meta);
    m.branch(Branch::concat)->bias[0] = 1e300;
    CHECK_THROWS_AS(serialize_model(m), NumericError);
}
