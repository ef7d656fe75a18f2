#include "vidfuse/bundle.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace vidfuse {

namespace {
constexpr char kMagic[4] = {'V', 'F', 'A', 'B'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& s, uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& s, uint64_t v) {
    for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
uint32_t get_u32(const char* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(p[i])) << (8 * i);
    return v;
}
uint64_t get_u64(const char* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(p[i])) << (8 * i);
    return v;
}
}  // namespace

void Bundle::put(const std::string& name, Tensor t) {
    for (auto& [n, _] : arrays)
        if (n == name) throw contract_violation("bundle: duplicate array name " + name);
    arrays.emplace_back(name, std::move(t));
}

const Tensor& Bundle::get(const std::string& name) const {
    for (auto& [n, t] : arrays)
        if (n == name) return t;
    throw config_error("bundle: missing array " + name);
}

bool Bundle::has(const std::string& name) const {
    for (auto& [n, _] : arrays)
        if (n == name) return true;
    return false;
}

void Bundle::save(const std::string& path) const {
    nlohmann::json manifest;
    manifest["meta"] = meta;
    nlohmann::json arrs = nlohmann::json::array();
    for (auto& [name, t] : arrays) {
        nlohmann::json a;
        a["name"] = name;
        a["shape"] = t.shape;
        arrs.push_back(a);
    }
    manifest["arrays"] = arrs;
    std::string mbytes = manifest.dump();

    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u64(out, mbytes.size());
    out += mbytes;
    for (auto& [name, t] : arrays) {
        // doubles serialized little-endian; x86/arm64 hosts store them that way already
        static_assert(sizeof(double) == 8);
        size_t off = out.size();
        out.resize(off + t.v.size() * 8);
        std::memcpy(out.data() + off, t.v.data(), t.v.size() * 8);
    }
    atomic_write_file(path, out);
}

Bundle Bundle::load(const std::string& path) {
    std::string data = read_text_file(path);
    if (data.size() < 16 || std::memcmp(data.data(), kMagic, 4) != 0)
        throw config_error("bundle: bad magic in " + path);
    uint32_t ver = get_u32(data.data() + 4);
    if (ver != kVersion) throw config_error("bundle: unsupported version in " + path);
    uint64_t mlen = get_u64(data.data() + 8);
    if (16 + mlen > data.size()) throw config_error("bundle: truncated manifest in " + path);
    nlohmann::json manifest = nlohmann::json::parse(data.substr(16, mlen));

    Bundle b;
    b.meta = manifest.value("meta", nlohmann::json::object());
    size_t off = 16 + mlen;
    for (auto& a : manifest["arrays"]) {
        std::string name = a["name"];
        std::vector<int64_t> shape = a["shape"].get<std::vector<int64_t>>();
        int64_t n = Tensor::numel_of(shape);
        if (off + static_cast<size_t>(n) * 8 > data.size())
            throw config_error("bundle: truncated array " + name + " in " + path);
        Tensor t(shape);
        std::memcpy(t.v.data(), data.data() + off, static_cast<size_t>(n) * 8);
        off += static_cast<size_t>(n) * 8;
        b.arrays.emplace_back(std::move(name), std::move(t));
    }
    return b;
}

uint64_t fingerprint_bytes(const void* data, size_t n, uint64_t h) {
    const uint8_t* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t fingerprint_file(const std::string& path) {
    std::string data = read_text_file(path);
    return fingerprint_bytes(data.data(), data.size());
}

std::string fingerprint_hex(uint64_t fp) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fp));
    return buf;
}

void atomic_write_file(const std::string& path, const std::string& contents) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw config_error("cannot open for write: " + tmp);
        f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!f) throw config_error("short write: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace vidfuse
