#include "vidfuse/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "vidfuse/bundle.hpp"
#include "vidfuse/errors.hpp"

namespace vidfuse {

namespace {
std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}
}  // namespace

Config Config::from_file(const std::string& path) {
    std::string dir = std::filesystem::path(path).parent_path().string();
    if (dir.empty()) dir = ".";
    return from_string(read_text_file(path), dir);
}

Config Config::from_string(const std::string& text, const std::string& include_dir) {
    Config c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.rfind("include ", 0) == 0) {
            std::string inc = trim(line.substr(8));
            std::filesystem::path p(inc);
            if (p.is_relative()) p = std::filesystem::path(include_dir) / p;
            Config sub = Config::from_file(p.string());
            // included values are defaults; lines after the include override them,
            // but earlier assignments in this file are overridden too (last wins)
            for (auto& [k, v] : sub.kv_) c.kv_[k] = v;
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty()) throw config_error("config line " + std::to_string(lineno) + ": empty key");
        c.kv_[key] = val;
    }
    return c;
}

void Config::merge(const Config& other) {
    for (auto& [k, v] : other.kv_) kv_[k] = v;
}

void Config::apply_overrides(const std::vector<std::string>& kevs) {
    for (const auto& s : kevs) {
        size_t eq = s.find('=');
        if (eq == std::string::npos) throw config_error("override must be key=value: " + s);
        kv_[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
    }
}

std::string Config::str(const std::string& key, const std::string& dflt) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : it->second;
}

std::string Config::str(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw config_error("missing config key: " + key);
    return it->second;
}

double Config::num(const std::string& key, double dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    char* end = nullptr;
    double v = std::strtod(it->second.c_str(), &end);
    if (end == it->second.c_str()) throw config_error("config key " + key + " is not a number");
    return v;
}

int64_t Config::integer(const std::string& key, int64_t dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    return static_cast<int64_t>(num(key, 0));
}

bool Config::flag(const std::string& key, bool dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw config_error("config key " + key + " is not a boolean: " + v);
}

std::string Config::dump() const {
    std::ostringstream os;
    for (auto& [k, v] : kv_) os << k << " = " << v << "\n";
    return os.str();
}

}  // namespace vidfuse
