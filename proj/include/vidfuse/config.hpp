#ifndef VIDFUSE_CONFIG_HPP
#define VIDFUSE_CONFIG_HPP

#include <map>
#include <string>
#include <vector>

namespace vidfuse {

// Flat key = value configuration with an `include <path>` mechanism.
// Later assignments win, so precedence is: built-in defaults < included
// files < the including file < command-line overrides.
class Config {
public:
    static Config from_file(const std::string& path);
    static Config from_string(const std::string& text, const std::string& include_dir = ".");

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    void merge(const Config& other);  // other wins
    void apply_overrides(const std::vector<std::string>& key_eq_value);

    bool has(const std::string& key) const { return kv_.count(key) > 0; }
    std::string str(const std::string& key, const std::string& dflt) const;
    std::string str(const std::string& key) const;  // throws config_error if absent
    double num(const std::string& key, double dflt) const;
    int64_t integer(const std::string& key, int64_t dflt) const;
    bool flag(const std::string& key, bool dflt) const;

    const std::map<std::string, std::string>& entries() const { return kv_; }
    std::string dump() const;

private:
    std::map<std::string, std::string> kv_;
};

}  // namespace vidfuse

#endif
