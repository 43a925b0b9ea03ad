#pragma once

// Embedding sets: the GEMB binary container, JSON split manifests, and the
// split/relabel step that turns one labeled pool into ID train / ID test / OOD.

#include <grood/detail/binary_io.hpp>
#include <grood/error.hpp>

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace grood {

/// Label value reserved for unlabeled / out-of-distribution records.
inline constexpr std::int32_t kOodLabel = -1;

struct EmbeddingRecord {
    std::int32_t label = kOodLabel;
    std::vector<float> vector;
};

struct EmbeddingSet {
    std::uint32_t dim = 0;
    std::vector<EmbeddingRecord> records;
    std::map<std::int32_t, std::string> class_names;

    std::size_t size() const noexcept { return records.size(); }
    bool empty() const noexcept { return records.empty(); }

    /// Number of declared classes: the class-name table when present, else
    /// one past the largest label.
    std::size_t class_count() const {
        if (!class_names.empty()) return static_cast<std::size_t>(class_names.rbegin()->first) + 1;
        std::int32_t top = kOodLabel;
        for (const auto& r : records) top = std::max(top, r.label);
        return static_cast<std::size_t>(top + 1);
    }

    /// Record indices per class label (0..class_count()-1), in file order.
    std::vector<std::vector<std::size_t>> indices_by_class() const {
        std::vector<std::vector<std::size_t>> out(class_count());
        for (std::size_t i = 0; i < records.size(); ++i)
            if (records[i].label >= 0) out[static_cast<std::size_t>(records[i].label)].push_back(i);
        return out;
    }
};

/// Throws ValidationError unless every record matches dim, is finite, and
/// carries a label in [-1, class_count()).
inline void validate(const EmbeddingSet& set) {
    if (set.dim == 0) throw ValidationError("embedding set has dim 0");
    const auto classes = set.class_count();
    for (std::size_t i = 0; i < set.records.size(); ++i) {
        const auto& r = set.records[i];
        if (r.vector.size() != set.dim)
            throw ValidationError("record " + std::to_string(i) + " has length " + std::to_string(r.vector.size()) +
                                  ", expected " + std::to_string(set.dim));
        if (r.label < kOodLabel || (r.label >= 0 && static_cast<std::size_t>(r.label) >= classes))
            throw ValidationError("record " + std::to_string(i) + " has invalid label " + std::to_string(r.label));
        for (float v : r.vector)
            if (!std::isfinite(v)) throw ValidationError("non-finite value at record " + std::to_string(i));
    }
}

// ---------------------------------------------------------------------------
// GEMB binary format (little-endian)
//   "GEMB" | u32 version=1 | u32 dim | u64 count | u32 flags
//   count x { i32 label (only if flags bit 0) | dim x f32 }
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 4> kGembMagic{'G', 'E', 'M', 'B'};
inline constexpr std::uint32_t kGembVersion = 1;
inline constexpr std::uint32_t kGembHasLabels = 1u;

inline EmbeddingSet read_embeddings(std::istream& in) {
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), 4) || magic != kGembMagic) throw LoadError(LoadErrorKind::BadMagic, "bad magic: not a GEMB file");

    std::uint32_t version = 0, dim = 0, flags = 0;
    std::uint64_t count = 0;
    if (!detail::read_le(in, version)) throw LoadError(LoadErrorKind::Truncated, "truncated header");
    if (version != kGembVersion)
        throw LoadError(LoadErrorKind::VersionMismatch, "unsupported GEMB version " + std::to_string(version));
    if (!detail::read_le(in, dim) || !detail::read_le(in, count) || !detail::read_le(in, flags))
        throw LoadError(LoadErrorKind::Truncated, "truncated header");
    if (dim == 0) throw LoadError(LoadErrorKind::Empty, "dim is 0");
    if (count == 0) throw LoadError(LoadErrorKind::Empty, "empty set");

    const bool has_labels = (flags & kGembHasLabels) != 0;
    EmbeddingSet set;
    set.dim = dim;
    set.records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
    for (std::uint64_t i = 0; i < count; ++i) {
        EmbeddingRecord rec;
        if (has_labels && !detail::read_le(in, rec.label))
            throw LoadError(LoadErrorKind::Truncated, "truncated payload at record " + std::to_string(i));
        if (rec.label < kOodLabel) throw LoadError(LoadErrorKind::BadLabel, "negative label at record " + std::to_string(i));
        rec.vector.resize(dim);
        for (auto& v : rec.vector) {
            if (!detail::read_le(in, v))
                throw LoadError(LoadErrorKind::Truncated, "truncated payload at record " + std::to_string(i));
            if (!std::isfinite(v)) throw LoadError(LoadErrorKind::NonFinite, "non-finite value at record " + std::to_string(i));
        }
        set.records.push_back(std::move(rec));
    }
    return set;
}

inline EmbeddingSet load_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open embeddings file: " + path.string());
    return read_embeddings(in);
}

/// Labels are written only when at least one record is labeled.
inline void write_embeddings(std::ostream& out, const EmbeddingSet& set) {
    const bool has_labels = std::any_of(set.records.begin(), set.records.end(), [](const auto& r) { return r.label != kOodLabel; });
    out.write(kGembMagic.data(), 4);
    detail::write_le(out, kGembVersion);
    detail::write_le(out, set.dim);
    detail::write_le(out, static_cast<std::uint64_t>(set.records.size()));
    detail::write_le(out, has_labels ? kGembHasLabels : 0u);
    for (const auto& r : set.records) {
        if (r.vector.size() != set.dim) throw ValidationError("record length does not match set dim");
        if (has_labels) detail::write_le(out, r.label);
        for (float v : r.vector) detail::write_le(out, v);
    }
}

inline void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write embeddings file: " + path.string());
    write_embeddings(out, set);
    if (!out) throw InputError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Split manifests
// ---------------------------------------------------------------------------

struct SplitManifest {
    std::string name;
    std::vector<std::size_t> id_train;
    std::vector<std::size_t> id_test;
    std::vector<std::size_t> ood_test;
    std::map<std::int32_t, std::string> class_names;
};

inline SplitManifest manifest_from_json(const nlohmann::json& doc) {
    auto index_list = [&](const char* key) {
        const auto& arr = doc.at(key);
        if (!arr.is_array()) throw ValidationError(std::string("manifest key '") + key + "' must be an array");
        std::vector<std::size_t> out;
        out.reserve(arr.size());
        for (const auto& v : arr) {
            if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) throw ValidationError(std::string("manifest '") + key + "' holds a non-index value");
            out.push_back(v.get<std::size_t>());
        }
        return out;
    };
    SplitManifest m;
    try {
        m.name = doc.value("name", std::string{});
        m.id_train = index_list("id_train");
        m.id_test = index_list("id_test");
        m.ood_test = index_list("ood_test");
        if (doc.contains("class_names"))
            for (const auto& [key, value] : doc.at("class_names").items())
                m.class_names[std::stoi(key)] = value.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed manifest: ") + e.what());
    } catch (const std::logic_error& e) {
        throw ValidationError(std::string("malformed manifest class_names key: ") + e.what());
    }
    return m;
}

inline nlohmann::json manifest_to_json(const SplitManifest& m) {
    nlohmann::json doc{{"name", m.name}, {"id_train", m.id_train}, {"id_test", m.id_test}, {"ood_test", m.ood_test}};
    if (!m.class_names.empty()) {
        nlohmann::json names = nlohmann::json::object();
        for (const auto& [k, v] : m.class_names) names[std::to_string(k)] = v;
        doc["class_names"] = names;
    }
    return doc;
}

inline SplitManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open manifest: " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("manifest is not valid JSON (" + path.string() + "): " + e.what());
    }
    return manifest_from_json(doc);
}

inline void save_manifest(const SplitManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot write manifest: " + path.string());
    out << manifest_to_json(m).dump(2) << '\n';
}

/// Result of apply_split. ID sets use dense labels 0..K-1; class_map[k] is the
/// original label of dense class k (ascending).
struct SplitSets {
    EmbeddingSet id_train;
    EmbeddingSet id_test;
    EmbeddingSet ood_test;
    std::vector<std::int32_t> class_map;

    std::size_t class_count() const noexcept { return class_map.size(); }
};

inline SplitSets apply_split(const EmbeddingSet& set, const SplitManifest& manifest) {
    const auto n = set.records.size();
    std::vector<char> used(n, 0);
    auto check = [&](std::span<const std::size_t> list, const char* which) {
        for (auto idx : list) {
            if (idx >= n)
                throw ValidationError(std::string(which) + " index " + std::to_string(idx) + " out of bounds (set has " +
                                      std::to_string(n) + " records)");
            if (used[idx]) throw ValidationError("index " + std::to_string(idx) + " appears in more than one split list");
            used[idx] = 1;
        }
    };
    check(manifest.id_train, "id_train");
    check(manifest.id_test, "id_test");
    check(manifest.ood_test, "ood_test");

    std::map<std::int32_t, std::size_t> train_counts;
    for (auto idx : manifest.id_train) {
        const auto label = set.records[idx].label;
        if (label < 0) throw ValidationError("id_train record " + std::to_string(idx) + " is unlabeled");
        ++train_counts[label];
    }
    if (train_counts.empty()) throw ValidationError("id_train is empty");
    for (const auto& [label, count] : train_counts)
        if (count < 2)
            throw ValidationError("class " + std::to_string(label) + " has " + std::to_string(count) +
                                  " training record(s); at least 2 are required");

    SplitSets out;
    std::map<std::int32_t, std::int32_t> dense;
    for (const auto& [label, count] : train_counts) {
        dense[label] = static_cast<std::int32_t>(out.class_map.size());
        out.class_map.push_back(label);
    }

    const auto& names = manifest.class_names.empty() ? set.class_names : manifest.class_names;
    std::map<std::int32_t, std::string> dense_names;
    for (std::size_t k = 0; k < out.class_map.size(); ++k)
        if (auto it = names.find(out.class_map[k]); it != names.end()) dense_names[static_cast<std::int32_t>(k)] = it->second;

    auto take_id = [&](std::span<const std::size_t> list, EmbeddingSet& dst) {
        dst.dim = set.dim;
        dst.class_names = dense_names;
        dst.records.reserve(list.size());
        for (auto idx : list) {
            const auto& rec = set.records[idx];
            auto it = dense.find(rec.label);
            if (it == dense.end())
                throw ValidationError("class not in train: label " + std::to_string(rec.label) + " (record " +
                                      std::to_string(idx) + ")");
            dst.records.push_back({it->second, rec.vector});
        }
    };
    take_id(manifest.id_train, out.id_train);
    take_id(manifest.id_test, out.id_test);

    out.ood_test.dim = set.dim;
    out.ood_test.records.reserve(manifest.ood_test.size());
    for (auto idx : manifest.ood_test) out.ood_test.records.push_back({kOodLabel, set.records[idx].vector});
    return out;
}

} // namespace grood
