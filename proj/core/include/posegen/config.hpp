#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>

namespace posegen {

// Flat key=value store backing run configs and manifests. '#' starts a
// comment, blank lines are skipped, keys are unique. Writing is sorted by
// key so serialized configs are byte-stable.
class KvMap {
  public:
    static KvMap parse_file(const std::filesystem::path& path);
    static KvMap parse_text(const std::string& text, const std::string& origin = "<text>");

    bool has(const std::string& key) const { return vals_.count(key) > 0; }
    void set(const std::string& key, const std::string& v) { vals_[key] = v; }
    void set_i64(const std::string& key, int64_t v) { vals_[key] = std::to_string(v); }
    void set_f64(const std::string& key, double v);
    void set_u64(const std::string& key, uint64_t v) { vals_[key] = std::to_string(v); }

    // getters throw ConfigError on missing key or unparsable value
    const std::string& get(const std::string& key) const;
    const std::string& get_or(const std::string& key, const std::string& dflt) const;
    int64_t get_i64(const std::string& key) const;
    int64_t get_i64_or(const std::string& key, int64_t dflt) const;
    uint64_t get_u64_or(const std::string& key, uint64_t dflt) const;
    double get_f64(const std::string& key) const;
    double get_f64_or(const std::string& key, double dflt) const;

    // rejects keys outside `allowed` with a ConfigError naming the key
    void require_known(const std::set<std::string>& allowed) const;

    void write_file(const std::filesystem::path& path) const;
    std::string serialize() const;

    const std::map<std::string, std::string>& items() const { return vals_; }

  private:
    std::map<std::string, std::string> vals_;
};

}  // namespace posegen
