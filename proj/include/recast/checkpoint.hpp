#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "recast/common.hpp"

namespace recast {

// Versioned named-blob container used for model and adapter checkpoints:
// magic, version, config text, meta text, then weight blobs in fixed order
// as little-endian 32-bit floats. Loaders validate the blob manifest against
// the shapes implied by the config.
struct BlobFile {
    static constexpr char kMagic[4] = {'R', 'C', 'P', 'T'};
    static constexpr uint32_t kVersion = 1;

    std::string config_text;
    std::string meta_text;
    std::vector<std::pair<std::string, std::pair<Shape, std::vector<float>>>> blobs;

    const std::pair<Shape, std::vector<float>>* find(const std::string& name) const {
        for (const auto& b : blobs)
            if (b.first == name) return &b.second;
        return nullptr;
    }
};

namespace detail {

template <class T>
void write_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));  // little-endian host assumed; bytes written explicitly
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

inline void write_str(std::ostream& os, const std::string& s) {
    write_le<uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_str(std::istream& is) {
    uint64_t n = read_le<uint64_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    return s;
}

}  // namespace detail

inline void save_blob_file(const BlobFile& bf, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint " + path);
    os.write(BlobFile::kMagic, 4);
    detail::write_le<uint32_t>(os, BlobFile::kVersion);
    detail::write_str(os, bf.config_text);
    detail::write_str(os, bf.meta_text);
    detail::write_le<uint32_t>(os, static_cast<uint32_t>(bf.blobs.size()));
    for (const auto& [name, sv] : bf.blobs) {
        detail::write_str(os, name);
        detail::write_le<uint32_t>(os, static_cast<uint32_t>(sv.first.size()));
        for (int d : sv.first) detail::write_le<int64_t>(os, d);
        detail::write_le<uint64_t>(os, sv.second.size());
        os.write(reinterpret_cast<const char*>(sv.second.data()),
                 static_cast<std::streamsize>(sv.second.size() * sizeof(float)));
    }
    if (!os) throw DataError("short write on checkpoint " + path);
}

inline BlobFile load_blob_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read checkpoint " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, BlobFile::kMagic, 4) != 0)
        throw DataError(path + ": not a recast checkpoint");
    uint32_t version = detail::read_le<uint32_t>(is);
    if (version != BlobFile::kVersion)
        throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
    BlobFile bf;
    bf.config_text = detail::read_str(is);
    bf.meta_text = detail::read_str(is);
    uint32_t count = detail::read_le<uint32_t>(is);
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = detail::read_str(is);
        uint32_t nd = detail::read_le<uint32_t>(is);
        Shape shape(nd);
        for (uint32_t k = 0; k < nd; ++k) shape[k] = static_cast<int>(detail::read_le<int64_t>(is));
        uint64_t n = detail::read_le<uint64_t>(is);
        if (n != static_cast<uint64_t>(numel(shape))) throw DataError(path + ": blob size mismatch for " + name);
        std::vector<float> data(n);
        is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(float)));
        if (!is) throw DataError(path + ": truncated blob " + name);
        bf.blobs.emplace_back(std::move(name), std::make_pair(std::move(shape), std::move(data)));
    }
    return bf;
}

// Simple key=value text maps used inside checkpoints for meta state.
inline std::map<std::string, std::string> parse_kv(const std::string& text) {
    std::map<std::string, std::string> kv;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

inline std::string serialize_kv(const std::map<std::string, std::string>& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

// FNV-1a over bytes; used for config and dataset content hashes.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace recast
