// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "side/common.hpp"
#include "side/tensor.hpp"

namespace side::io {

using json = nlohmann::json;

/// Write bytes to a temp file in the same directory, then rename over the
/// destination, so readers never observe a partial file.
inline void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for write: " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

inline std::uint64_t file_checksum(const std::filesystem::path& path) {
    std::string bytes = read_file(path);
    return fnv1a64({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
}

// --- SIDEBIN container -----------------------------------------------------
//
// A single-file container used by checkpoints, datasets, pseudo datasets and
// sample batches:
//
//   line 1:  "SIDEBIN 1 <kind>"
//   line 2:  one-line JSON header: {"meta": {...},
//                                   "arrays": [{"name":..., "shape":[...]}, ...],
//                                   "checksum": "<16 hex chars>"}
//   then:    raw little-endian doubles, arrays concatenated in header order
//
// The checksum is FNV-1a over the payload bytes and guards corruption.

struct Container {
    std::string kind;
    json meta;
    std::vector<std::pair<std::string, Tensor>> arrays;

    const Tensor& array(const std::string& name) const {
        for (const auto& [n, t] : arrays)
            if (n == name) return t;
        throw IoError("container has no array named '" + name + "'");
    }
};

inline void save_container(const std::filesystem::path& path, const std::string& kind,
                           const json& meta,
                           const std::vector<std::pair<std::string, const Tensor*>>& arrays) {
    std::string payload;
    json arr_desc = json::array();
    for (const auto& [name, t] : arrays) {
        arr_desc.push_back({{"name", name}, {"shape", t->shape()}});
        const auto flat = t->flat();
        std::size_t off = payload.size();
        payload.resize(off + flat.size() * sizeof(double));
        std::memcpy(payload.data() + off, flat.data(), flat.size() * sizeof(double));
    }
    std::uint64_t sum =
        fnv1a64({reinterpret_cast<const unsigned char*>(payload.data()), payload.size()});
    json header = {{"meta", meta}, {"arrays", arr_desc}, {"checksum", hex16(sum)}};

    std::string out = "SIDEBIN 1 " + kind + "\n" + header.dump() + "\n" + payload;
    atomic_write(path, out);
}

inline Container load_container(const std::filesystem::path& path) {
    std::string bytes = read_file(path);
    std::size_t l1 = bytes.find('\n');
    if (l1 == std::string::npos) throw IoError("truncated container: " + path.string());
    std::string magic = bytes.substr(0, l1);
    if (magic.rfind("SIDEBIN 1 ", 0) != 0)
        throw IoError("not a SIDEBIN v1 file: " + path.string());

    Container c;
    c.kind = magic.substr(10);
    std::size_t l2 = bytes.find('\n', l1 + 1);
    if (l2 == std::string::npos) throw IoError("truncated container header: " + path.string());
    json header = json::parse(bytes.substr(l1 + 1, l2 - l1 - 1));
    c.meta = header.at("meta");

    std::string payload = bytes.substr(l2 + 1);
    std::uint64_t sum =
        fnv1a64({reinterpret_cast<const unsigned char*>(payload.data()), payload.size()});
    if (hex16(sum) != header.at("checksum").get<std::string>())
        throw IoError("checksum mismatch (corrupt file): " + path.string());

    std::size_t off = 0;
    for (const auto& d : header.at("arrays")) {
        std::vector<std::size_t> shape = d.at("shape").get<std::vector<std::size_t>>();
        std::size_t n = Tensor::numel_of(shape);
        if (off + n * sizeof(double) > payload.size())
            throw IoError("container payload shorter than declared arrays: " + path.string());
        std::vector<double> data(n);
        std::memcpy(data.data(), payload.data() + off, n * sizeof(double));
        off += n * sizeof(double);
        c.arrays.emplace_back(d.at("name").get<std::string>(),
                              Tensor(std::move(shape), std::move(data)));
    }
    if (off != payload.size())
        throw IoError("container payload longer than declared arrays: " + path.string());
    return c;
}

}  // namespace side::io
