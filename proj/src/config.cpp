#include "fedlab/config.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace fedlab {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace((unsigned char)s[b])) ++b;
    while (e > b && std::isspace((unsigned char)s[e - 1])) --e;
    return s.substr(b, e - b);
}

void flatten_json(const nlohmann::json& node, const std::string& prefix,
                  std::map<std::string, std::string>& out) {
    if (node.is_object()) {
        for (auto it = node.begin(); it != node.end(); ++it)
            flatten_json(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
    } else if (node.is_array()) {
        std::string joined;
        for (const auto& v : node) {
            if (!joined.empty()) joined += ",";
            if (v.is_string())
                joined += v.get<std::string>();
            else
                joined += v.dump();
        }
        out[prefix] = joined;
    } else if (node.is_string()) {
        out[prefix] = node.get<std::string>();
    } else {
        out[prefix] = node.dump();
    }
}

} // namespace

Config Config::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw input_error("cannot open config: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return from_text(ss.str(), path);
}

Config Config::from_text(const std::string& text, const std::string& origin) {
    Config cfg;
    const std::size_t first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
        if (j.is_discarded()) throw input_error("malformed JSON config: " + origin);
        flatten_json(j, "", cfg.kv_);
        return cfg;
    }
    std::istringstream lines(text);
    std::string line;
    int lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw input_error(origin + ":" + std::to_string(lineno) +
                              ": expected `key = value`, got: " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw input_error(origin + ":" + std::to_string(lineno) + ": empty key");
        cfg.kv_[key] = value;
    }
    return cfg;
}

void Config::set(const std::string& key, const std::string& value) {
    require(!key.empty(), "config: empty key");
    kv_[key] = value;
}

void Config::set_pair(const std::string& pair) {
    const std::size_t eq = pair.find('=');
    if (eq == std::string::npos || eq == 0)
        throw input_error("expected key=value, got: " + pair);
    set(trim(pair.substr(0, eq)), trim(pair.substr(eq + 1)));
}

bool Config::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string Config::get_str(const std::string& key, const std::string& dflt) const {
    auto it = kv_.find(key);
    const std::string v = it == kv_.end() ? dflt : it->second;
    resolved_[key] = v;
    return v;
}

double Config::get_num(const std::string& key, double dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) {
        std::ostringstream ss;
        ss << dflt;
        resolved_[key] = ss.str();
        return dflt;
    }
    try {
        std::size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (trim(it->second.substr(used)).empty()) {
            resolved_[key] = it->second;
            return v;
        }
    } catch (const std::exception&) {
    }
    throw input_error("config key " + key + " is not a number: " + it->second);
}

int Config::get_int(const std::string& key, int dflt) const {
    const double v = get_num(key, double(dflt));
    const int i = int(v);
    if (double(i) != v) throw input_error("config key " + key + " is not an integer");
    return i;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) {
        resolved_[key] = std::to_string(dflt);
        return dflt;
    }
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(it->second, &used);
        if (trim(it->second.substr(used)).empty()) {
            resolved_[key] = it->second;
            return v;
        }
    } catch (const std::exception&) {
    }
    throw input_error("config key " + key + " is not an unsigned integer: " + it->second);
}

bool Config::get_bool(const std::string& key, bool dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) {
        resolved_[key] = dflt ? "true" : "false";
        return dflt;
    }
    std::string v = it->second;
    std::transform(v.begin(), v.end(), v.begin(),
                   [](unsigned char c) { return char(std::tolower(c)); });
    resolved_[key] = v;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw input_error("config key " + key + " is not a boolean: " + it->second);
}

std::string Config::dump() const {
    std::string out;
    for (const auto& [k, v] : kv_) out += k + " = " + v + "\n";
    return out;
}

} // namespace fedlab
