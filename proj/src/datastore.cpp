#include "cma/datastore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <unordered_map>
#include <unordered_set>

#include "cma/errors.hpp"
#include "cma/rng.hpp"
#include "binary_io.hpp"

namespace cma {
namespace {

using detail::Reader;
using detail::Writer;
using detail::read_file;
using detail::write_file_atomic;

void put_f32(Writer& w, double v, const std::string& id) {
    if (!std::isfinite(static_cast<float>(v))) {
        throw DataError("record '" + id + "': value " + std::to_string(v) + " overflows float32");
    }
    w.f32(v);
}

bool valid_utf8(std::span<const std::uint8_t> s) {
    std::size_t i = 0;
    while (i < s.size()) {
        const std::uint8_t c = s[i];
        std::size_t len = 0;
        std::uint32_t cp = 0;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + len > s.size()) return false;
        for (std::size_t k = 1; k < len; ++k) {
            if ((s[i + k] & 0xC0) != 0x80) return false;
            cp = (cp << 6) | (s[i + k] & 0x3F);
        }
        const std::uint32_t min_cp[] = {0, 0, 0x80, 0x800, 0x10000};
        if (cp < min_cp[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
        i += len;
    }
    return true;
}

Matrix read_tokens(Reader& r, std::uint32_t rows, std::uint32_t d, const std::string& id,
                   const char* what) {
    const std::uint64_t count = std::uint64_t{rows} * d;
    const std::uint64_t nbytes = count * 4;
    if (nbytes > r.remaining()) {
        throw FormatError(FormatErrorKind::truncated_payload,
                          "record '" + id + "': " + what + " tokens need " +
                              std::to_string(nbytes) + " bytes, " +
                              std::to_string(r.remaining()) + " left",
                          r.offset());
    }
    std::vector<double> values(static_cast<std::size_t>(count));
    for (auto& v : values) {
        const std::size_t at = r.offset();
        const float f = r.f32();
        if (!std::isfinite(f)) {
            throw FormatError(FormatErrorKind::non_finite_value,
                              "record '" + id + "': non-finite " + what + " value", at);
        }
        v = f;
    }
    return Matrix(rows, d, std::move(values));
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > std::numeric_limits<std::uint32_t>::max()) {
        throw DataError(std::string(what) + " does not fit in 32 bits");
    }
    return static_cast<std::uint32_t>(v);
}

std::unordered_map<std::string_view, const FeatureRecord*> index_by_id(const FeatureStore& s) {
    std::unordered_map<std::string_view, const FeatureRecord*> idx;
    idx.reserve(s.records.size());
    for (const auto& r : s.records) idx.emplace(r.id, &r);
    return idx;
}

std::vector<const FeatureRecord*> resolve(
    const std::unordered_map<std::string_view, const FeatureRecord*>& idx,
    const std::vector<std::string>& ids) {
    std::vector<const FeatureRecord*> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = idx.find(id);
        if (it == idx.end()) throw DataError("episode id '" + id + "' not in store");
        out.push_back(it->second);
    }
    return out;
}

}  // namespace

std::vector<std::uint8_t> serialize_store(const FeatureStore& store) {
    validate_store(store);
    Writer w;
    w.bytes(kStoreMagic.data(), kStoreMagic.size());
    w.u32(kStoreVersion);
    w.u32(checked_u32(store.dimension, "dimension"));
    w.u64(store.records.size());
    for (const auto& r : store.records) {
        w.u32(checked_u32(r.id.size(), "id length"));
        w.bytes(r.id.data(), r.id.size());
        w.u8(r.label);
        w.u32(checked_u32(r.text_tokens.rows(), "L_t"));
        w.u32(checked_u32(r.image_tokens.rows(), "L_m"));
        for (double v : r.text_tokens.values()) put_f32(w, v, r.id);
        for (double v : r.image_tokens.values()) put_f32(w, v, r.id);
    }
    return w.take();
}

FeatureStore parse_store(std::span<const std::uint8_t> bytes, std::string source_name) {
    Reader r(bytes);
    r.need(4, FormatErrorKind::truncated_header, "magic");
    const auto magic = r.take(4);
    if (!std::equal(magic.begin(), magic.end(), kStoreMagic.begin())) {
        throw FormatError(FormatErrorKind::bad_magic, "expected \"CMAF\"", 0);
    }
    r.need(4 + 4 + 8, FormatErrorKind::truncated_header, "header");
    const std::uint32_t version = r.u32();
    if (version != kStoreVersion) {
        throw FormatError(FormatErrorKind::unsupported_version,
                          "version " + std::to_string(version) + ", supported 1", 4);
    }
    const std::uint32_t d = r.u32();
    if (d == 0) throw FormatError(FormatErrorKind::zero_dimension, "dimension is 0", 8);
    const std::uint64_t count = r.u64();

    FeatureStore store;
    store.dimension = d;
    store.source_name = std::move(source_name);
    std::unordered_set<std::string> seen;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string where = "record #" + std::to_string(i);
        const std::size_t start = r.offset();
        r.need(4, FormatErrorKind::truncated_payload, where + " id length");
        const std::uint32_t id_len = r.u32();
        r.need(id_len, FormatErrorKind::truncated_payload, where + " id");
        const auto id_bytes = r.take(id_len);
        if (id_len == 0 || !valid_utf8(id_bytes)) {
            throw FormatError(FormatErrorKind::invalid_id, where + ": empty or invalid UTF-8 id",
                              start + 4);
        }
        FeatureRecord rec;
        rec.id.assign(id_bytes.begin(), id_bytes.end());
        r.need(1 + 4 + 4, FormatErrorKind::truncated_payload, "record '" + rec.id + "' header");
        const std::size_t label_at = r.offset();
        rec.label = r.u8();
        if (rec.label > 1) {
            throw FormatError(FormatErrorKind::invalid_label,
                              "record '" + rec.id + "': label " + std::to_string(rec.label),
                              label_at);
        }
        const std::uint32_t lt = r.u32();
        const std::uint32_t lm = r.u32();
        if (lt == 0 || lm == 0) {
            throw FormatError(FormatErrorKind::empty_sequence,
                              "record '" + rec.id + "': L_t=" + std::to_string(lt) +
                                  ", L_m=" + std::to_string(lm),
                              label_at + 1);
        }
        rec.text_tokens = read_tokens(r, lt, d, rec.id, "text");
        rec.image_tokens = read_tokens(r, lm, d, rec.id, "image");
        if (!seen.insert(rec.id).second) {
            throw FormatError(FormatErrorKind::duplicate_id, "record '" + rec.id + "' repeated",
                              start);
        }
        store.records.push_back(std::move(rec));
    }
    if (r.remaining() != 0) {
        throw FormatError(FormatErrorKind::trailing_bytes,
                          std::to_string(r.remaining()) + " bytes after the last record",
                          r.offset());
    }
    return store;
}

void write_store(const FeatureStore& store, const std::filesystem::path& path,
                 const nlohmann::json& provenance) {
    write_file_atomic(path, serialize_store(store));
    StoreManifest m;
    m.source_name = store.source_name;
    m.dimension = store.dimension;
    m.class_counts = class_counts(store);
    m.provenance = provenance;
    write_manifest(m, path);
}

FeatureStore read_store(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    std::string name = path.stem().string();
    if (auto m = read_manifest(path)) {
        if (!m->source_name.empty()) name = m->source_name;
    }
    return parse_store(bytes, std::move(name));
}

std::filesystem::path sidecar_path(const std::filesystem::path& store_path) {
    auto p = store_path;
    p += ".json";
    return p;
}

std::optional<StoreManifest> read_manifest(const std::filesystem::path& store_path) {
    const auto p = sidecar_path(store_path);
    if (!std::filesystem::exists(p)) return std::nullopt;
    std::ifstream in(p);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed sidecar " + p.string() + ": " + e.what());
    }
    StoreManifest m;
    m.source_name = j.value("source_name", std::string{});
    m.dimension = j.value("dimension", std::size_t{0});
    if (j.contains("class_counts")) {
        m.class_counts = {j["class_counts"].value("0", std::size_t{0}),
                          j["class_counts"].value("1", std::size_t{0})};
    }
    if (j.contains("provenance")) m.provenance = j["provenance"];
    if (j.contains("label_features") && !j["label_features"].is_null()) {
        const auto& lf = j["label_features"];
        if (!lf.is_array() || lf.size() != 2) {
            throw DataError("sidecar label_features must hold one vector per class");
        }
        m.label_features = std::array<Vector, 2>{lf[0].get<Vector>(), lf[1].get<Vector>()};
    }
    return m;
}

void write_manifest(const StoreManifest& m, const std::filesystem::path& store_path) {
    nlohmann::json j;
    j["format"] = "cmaf-manifest";
    j["version"] = 1;
    j["source_name"] = m.source_name;
    j["dimension"] = m.dimension;
    j["class_counts"] = {{"0", m.class_counts[0]}, {"1", m.class_counts[1]}};
    j["provenance"] = m.provenance;
    if (m.label_features) {
        j["label_features"] = {(*m.label_features)[0], (*m.label_features)[1]};
    }
    const std::string text = j.dump(2) + "\n";
    write_file_atomic(sidecar_path(store_path),
                      std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::array<std::size_t, 2> class_counts(const FeatureStore& store) {
    std::array<std::size_t, 2> c{};
    for (const auto& r : store.records) ++c[r.label];
    return c;
}

Episode sample_episode(const FeatureStore& store, std::size_t n_shot, std::int64_t seed,
                       bool with_validation) {
    if (n_shot == 0) throw DataError("n_shot must be positive");
    std::array<std::vector<std::string>, 2> by_class;
    for (const auto& r : store.records) by_class[r.label].push_back(r.id);

    const std::size_t per_class = with_validation ? 2 * n_shot : n_shot;
    for (int c = 0; c < 2; ++c) {
        if (by_class[c].size() < per_class) {
            throw DataError("insufficient class population: class " + std::to_string(c) +
                            " has " + std::to_string(by_class[c].size()) + " records, " +
                            std::to_string(n_shot) + "-shot" +
                            (with_validation ? " with validation" : "") + " needs " +
                            std::to_string(per_class));
        }
    }

    Episode ep;
    ep.n_shot = n_shot;
    ep.seed = seed;
    const std::uint64_t key =
        combine_keys(static_cast<std::uint64_t>(seed), hash_name(store.source_name));
    for (int c = 0; c < 2; ++c) {
        auto& ids = by_class[c];
        std::sort(ids.begin(), ids.end());
        CounterRng rng(key, static_cast<std::uint64_t>(c));
        rng.shuffle(ids);
        auto it = ids.begin();
        ep.train_ids.insert(ep.train_ids.end(), it, it + static_cast<std::ptrdiff_t>(n_shot));
        it += static_cast<std::ptrdiff_t>(n_shot);
        if (with_validation) {
            ep.val_ids.insert(ep.val_ids.end(), it, it + static_cast<std::ptrdiff_t>(n_shot));
            it += static_cast<std::ptrdiff_t>(n_shot);
        }
        ep.test_ids.insert(ep.test_ids.end(), it, ids.end());
    }
    std::sort(ep.test_ids.begin(), ep.test_ids.end());
    return ep;
}

std::size_t select_best_image(std::span<const double> text_feature,
                              const std::vector<Vector>& candidates) {
    if (candidates.empty()) throw DimensionError("select_best_image: no candidates");
    const Vector t = l2_normalize(text_feature);
    std::size_t best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (candidates[i].size() != t.size()) {
            throw DimensionError("select_best_image: candidate " + std::to_string(i) + " has width " +
                                 std::to_string(candidates[i].size()) + ", text has " +
                                 std::to_string(t.size()));
        }
        const double sim = dot(t, l2_normalize(candidates[i]));
        if (sim > best_sim) {
            best_sim = sim;
            best = i;
        }
    }
    return best;
}

Episode augment_with_labels(Episode episode, const std::array<Vector, 2>& label_features,
                            std::size_t dimension, bool enabled) {
    if (!enabled) return episode;
    for (Label c = 0; c < 2; ++c) {
        const Vector& f = label_features[c];
        if (f.size() != dimension) {
            throw DimensionError("augment_with_labels: class " + std::to_string(c) +
                                 " feature has width " + std::to_string(f.size()) +
                                 ", store has " + std::to_string(dimension));
        }
        FeatureRecord r;
        r.id = "<label:" + std::to_string(c) + ">";
        r.label = c;
        r.text_tokens = Matrix::row_vector(f);
        r.image_tokens = Matrix::row_vector(f);
        r.synthetic = true;
        episode.synthetic_train.push_back(std::move(r));
    }
    return episode;
}

EpisodeData materialize(const FeatureStore& store, const Episode& episode) {
    const auto idx = index_by_id(store);
    EpisodeData data;
    data.train = resolve(idx, episode.train_ids);
    for (const auto& r : episode.synthetic_train) data.train.push_back(&r);
    data.val = resolve(idx, episode.val_ids);
    data.test = resolve(idx, episode.test_ids);
    return data;
}

EpisodeData materialize_shifted(const FeatureStore& train_store, const Episode& episode,
                                const FeatureStore& test_store) {
    if (train_store.dimension != test_store.dimension) {
        throw DimensionError("domain shift: train store dimension " +
                             std::to_string(train_store.dimension) + " vs test store " +
                             std::to_string(test_store.dimension));
    }
    const auto idx = index_by_id(train_store);
    EpisodeData data;
    data.train = resolve(idx, episode.train_ids);
    for (const auto& r : episode.synthetic_train) data.train.push_back(&r);
    data.val = resolve(idx, episode.val_ids);
    for (const auto& r : test_store.records) data.test.push_back(&r);
    return data;
}

}  // namespace cma
