#include "posegen/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "posegen/error.hpp"

namespace posegen {

KvMap KvMap::parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str(), path.string());
}

KvMap KvMap::parse_text(const std::string& text, const std::string& origin) {
    KvMap out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t\r");
        size_t b = s.find_last_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        return s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected key=value, got '" + t + "'");
        }
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        if (out.vals_.count(key)) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" +
                              key + "'");
        }
        out.vals_[key] = val;
    }
    return out;
}

void KvMap::set_f64(const std::string& key, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    vals_[key] = buf;
}

const std::string& KvMap::get(const std::string& key) const {
    auto it = vals_.find(key);
    if (it == vals_.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
}

const std::string& KvMap::get_or(const std::string& key, const std::string& dflt) const {
    auto it = vals_.find(key);
    return it == vals_.end() ? dflt : it->second;
}

int64_t KvMap::get_i64(const std::string& key) const {
    const std::string& s = get(key);
    try {
        size_t used = 0;
        int64_t v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': not an integer: '" + s + "'");
    }
}

int64_t KvMap::get_i64_or(const std::string& key, int64_t dflt) const {
    return has(key) ? get_i64(key) : dflt;
}

uint64_t KvMap::get_u64_or(const std::string& key, uint64_t dflt) const {
    if (!has(key)) return dflt;
    const std::string& s = get(key);
    try {
        size_t used = 0;
        uint64_t v = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': not an unsigned integer: '" + s + "'");
    }
}

double KvMap::get_f64(const std::string& key) const {
    const std::string& s = get(key);
    try {
        size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': not a number: '" + s + "'");
    }
}

double KvMap::get_f64_or(const std::string& key, double dflt) const {
    return has(key) ? get_f64(key) : dflt;
}

void KvMap::require_known(const std::set<std::string>& allowed) const {
    for (const auto& [k, v] : vals_) {
        if (!allowed.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }
}

std::string KvMap::serialize() const {
    std::string out;
    for (const auto& [k, v] : vals_) {  // std::map iterates sorted
        out += k;
        out += "=";
        out += v;
        out += "\n";
    }
    return out;
}

void KvMap::write_file(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write config: " + path.string());
    out << serialize();
    if (!out) throw IoError("short write: " + path.string());
}

}  // namespace posegen
