#ifndef VIDFUSE_BUNDLE_HPP
#define VIDFUSE_BUNDLE_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vidfuse/tensor.hpp"

namespace vidfuse {

// Artifact container: a JSON manifest plus named float64 arrays, stored
// little-endian. Layout: "VFAB" magic, u32 version, u64 manifest length,
// manifest bytes, then the raw array data in manifest order.
struct Bundle {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor>> arrays;

    void put(const std::string& name, Tensor t);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;

    void save(const std::string& path) const;
    static Bundle load(const std::string& path);
};

// FNV-1a 64-bit over file or buffer contents; used as the artifact
// fingerprint that ties adapters/embeddings to their base checkpoint.
uint64_t fingerprint_bytes(const void* data, size_t n, uint64_t h = 1469598103934665603ull);
uint64_t fingerprint_file(const std::string& path);
std::string fingerprint_hex(uint64_t fp);

// write-temp-then-rename
void atomic_write_file(const std::string& path, const std::string& contents);
std::string read_text_file(const std::string& path);

}  // namespace vidfuse

#endif
