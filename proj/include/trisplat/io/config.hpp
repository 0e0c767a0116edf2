#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "trisplat/io/pfm.hpp"

namespace ts {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// key = value run configuration. '#' starts a comment; keys are dotted
// lowercase; unknown keys are rejected against a schema with the offending
// key and line number named.
class Config {
public:
    static Config parse_string(const std::string& text, const std::string& origin = "<string>") {
        Config c;
        c.origin_ = origin;
        std::istringstream ss(text);
        std::string line;
        int line_no = 0;
        while (std::getline(ss, line)) {
            ++line_no;
            size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            size_t eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(line_no) +
                                  ": expected key = value, got '" + trimmed + "'");
            std::string key = trim(trimmed.substr(0, eq));
            std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
            c.values_[key] = value;
            c.lines_[key] = line_no;
        }
        return c;
    }

    static Config parse_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        return parse_string(ss.str(), path);
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            size_t used = 0;
            double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw ConfigError(where(key) + ": '" + key + "' expects a number, got '" +
                              it->second + "'");
        }
    }

    long long get_int(const std::string& key, long long fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            size_t used = 0;
            long long v = std::stoll(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw ConfigError(where(key) + ": '" + key + "' expects an integer, got '" +
                              it->second + "'");
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ConfigError(where(key) + ": '" + key + "' expects true/false, got '" + it->second +
                          "'");
    }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    // Rejects any key outside the schema, naming key and line.
    void validate(const std::set<std::string>& known) const {
        for (const auto& [key, value] : values_)
            if (!known.count(key))
                throw ConfigError(where(key) + ": unknown config key '" + key + "'");
    }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }
    std::string where(const std::string& key) const {
        auto it = lines_.find(key);
        return origin_ + ":" + (it == lines_.end() ? "?" : std::to_string(it->second));
    }

    std::map<std::string, std::string> values_;
    std::map<std::string, int> lines_;
    std::string origin_;
};

// FNV-1a content hash for run manifests.
inline std::uint64_t fnv1a(const void* data, size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("fnv1a_file: cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (f.read(buf, sizeof buf) || f.gcount() > 0) {
        h = fnv1a(buf, static_cast<size_t>(f.gcount()), h);
        if (!f) break;
    }
    return h;
}

}  // namespace ts
