#pragma once

// Flat key-path configuration: `section.key = value` lines (# comments), or an
// equivalent JSON tree whose nested keys are joined with dots. Lookups carry
// their defaults at the call site, so an empty config is a valid experiment.

#include "fedlab/common.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace fedlab {

class Config {
public:
    Config() = default;

    static Config from_file(const std::string& path);
    static Config from_text(const std::string& text, const std::string& origin = "<text>");

    void set(const std::string& key, const std::string& value);
    // "key=value" as given on the command line.
    void set_pair(const std::string& pair);

    bool has(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& dflt) const;
    double get_num(const std::string& key, double dflt) const;
    int get_int(const std::string& key, int dflt) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) const;
    bool get_bool(const std::string& key, bool dflt) const;

    // Sorted `key = value` lines; the experiment provenance snapshot.
    std::string dump() const;
    const std::map<std::string, std::string>& entries() const { return kv_; }

    // Keys read through the getters so far (resolved values incl. defaults);
    // lets the manifest record the full effective configuration.
    const std::map<std::string, std::string>& resolved() const { return resolved_; }

private:
    std::map<std::string, std::string> kv_;
    mutable std::map<std::string, std::string> resolved_;
};

} // namespace fedlab
