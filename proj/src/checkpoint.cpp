#include "cma/checkpoint.hpp"

#include <array>
#include <cmath>
#include <map>

#include "binary_io.hpp"
#include "cma/errors.hpp"

namespace cma {
namespace {

constexpr std::array<char, 4> kModelMagic = {'C', 'M', 'A', 'M'};

void put_string(detail::Writer& w, const std::string& s) {
    w.u32(static_cast<std::uint32_t>(s.size()));
    w.bytes(s.data(), s.size());
}

std::string get_string(detail::Reader& r, const char* what) {
    r.need(4, FormatErrorKind::truncated_payload, what);
    const std::uint32_t n = r.u32();
    r.need(n, FormatErrorKind::truncated_payload, what);
    const auto b = r.take(n);
    return std::string(b.begin(), b.end());
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const CmaModel& model) {
    detail::Writer w;
    w.bytes(kModelMagic.data(), kModelMagic.size());
    w.u32(kCheckpointVersion);
    put_string(w, std::string(variant_tag(model.variant)));
    w.u8(model.meta_input == MetaInput::probabilities ? 0 : 1);
    w.u32(static_cast<std::uint32_t>(model.hidden_units));
    w.u32(static_cast<std::uint32_t>(model.dim));
    const auto shapes = param_shapes(model);
    w.u32(static_cast<std::uint32_t>(shapes.size()));
    std::size_t i = 0;
    for_each_param(model, [&](const std::string& name, std::span<const double> values) {
        const auto& s = shapes[i++];
        put_string(w, name);
        w.u32(static_cast<std::uint32_t>(s.rows));
        w.u32(static_cast<std::uint32_t>(s.cols));
        for (double v : values) {
            if (!std::isfinite(static_cast<float>(v))) {
                throw NumericError("checkpoint: parameter " + name + " overflows float32");
            }
            w.f32(v);
        }
    });
    return w.take();
}

CmaModel parse_model(std::span<const std::uint8_t> bytes) {
    detail::Reader r(bytes);
    r.need(4, FormatErrorKind::truncated_header, "magic");
    const auto magic = r.take(4);
    if (!std::equal(magic.begin(), magic.end(), kModelMagic.begin())) {
        throw FormatError(FormatErrorKind::bad_magic, "expected \"CMAM\"", 0);
    }
    r.need(4, FormatErrorKind::truncated_header, "version");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError(FormatErrorKind::unsupported_version,
                          "checkpoint version " + std::to_string(version), 4);
    }
    const std::string tag = get_string(r, "variant tag");
    r.need(1 + 4 + 4 + 4, FormatErrorKind::truncated_header, "model header");
    const std::uint8_t meta = r.u8();
    const std::uint32_t hidden = r.u32();
    const std::uint32_t d = r.u32();
    const std::uint32_t count = r.u32();
    if (d == 0) throw FormatError(FormatErrorKind::zero_dimension, "model dimension is 0", r.offset());
    if (meta > 1) throw FormatError(FormatErrorKind::bad_tensor, "unknown meta input", r.offset());

    Variant variant{};
    try {
        variant = parse_variant(tag);
    } catch (const DataError& e) {
        throw FormatError(FormatErrorKind::bad_tensor, e.what(), 8);
    }
    CmaModel model = make_zero_model(d, variant,
                                     meta == 0 ? MetaInput::probabilities : MetaInput::features, hidden);

    std::map<std::string, std::vector<double>> tensors;
    std::map<std::string, std::pair<std::uint32_t, std::uint32_t>> dims;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = get_string(r, "tensor name");
        r.need(8, FormatErrorKind::truncated_payload, "tensor '" + name + "' shape");
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        const std::uint64_t n = std::uint64_t{rows} * cols;
        if (n * 4 > r.remaining()) {
            throw FormatError(FormatErrorKind::truncated_payload, "tensor '" + name + "' values",
                              r.offset());
        }
        std::vector<double> values(static_cast<std::size_t>(n));
        for (auto& v : values) {
            const float f = r.f32();
            if (!std::isfinite(f)) {
                throw FormatError(FormatErrorKind::non_finite_value, "tensor '" + name + "'",
                                  r.offset() - 4);
            }
            v = f;
        }
        if (!tensors.emplace(name, std::move(values)).second) {
            throw FormatError(FormatErrorKind::bad_tensor, "tensor '" + name + "' repeated",
                              r.offset());
        }
        dims[name] = {rows, cols};
    }
    if (r.remaining() != 0) {
        throw FormatError(FormatErrorKind::trailing_bytes, "after the last tensor", r.offset());
    }

    const auto shapes = param_shapes(model);
    if (shapes.size() != tensors.size()) {
        throw FormatError(FormatErrorKind::bad_tensor,
                          std::to_string(tensors.size()) + " tensors, variant " + tag + " needs " +
                              std::to_string(shapes.size()));
    }
    std::size_t i = 0;
    for_each_param(model, [&](const std::string& name, std::span<double> target) {
        const auto& s = shapes[i++];
        auto it = tensors.find(name);
        if (it == tensors.end()) throw FormatError(FormatErrorKind::bad_tensor, "missing " + name);
        if (dims[name].first != s.rows || dims[name].second != s.cols) {
            throw FormatError(FormatErrorKind::bad_tensor, "tensor " + name + " has shape " +
                                                               std::to_string(dims[name].first) + "x" +
                                                               std::to_string(dims[name].second));
        }
        std::copy(it->second.begin(), it->second.end(), target.begin());
    });
    return model;
}

void save_model(const CmaModel& model, const std::filesystem::path& path) {
    detail::write_file_atomic(path, serialize_model(model));
}

CmaModel load_model(const std::filesystem::path& path) {
    return parse_model(detail::read_file(path));
}

}  // namespace cma
