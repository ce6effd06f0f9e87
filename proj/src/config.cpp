#include "placerec/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "placerec/errors.hpp"

namespace placerec {

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace

Config Config::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str());
}

Config Config::from_string(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw CorruptPayload("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty())
            throw CorruptPayload("config line " + std::to_string(lineno) + ": empty key");
        cfg.values_[key] = value;
        cfg.consumed_[key] = false;
    }
    return cfg;
}

bool Config::has(const std::string& key) const { return values_.count(key) > 0; }

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_[key] = true;
    return it->second;
}

int64_t Config::get_int(const std::string& key, int64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_[key] = true;
    try {
        size_t used = 0;
        const int64_t v = std::stoll(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw CorruptPayload("config key '" + key + "': not an integer: " + it->second);
    }
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_[key] = true;
    try {
        size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw CorruptPayload("config key '" + key + "': not a number: " + it->second);
    }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_[key] = true;
    std::string v = it->second;
    std::transform(v.begin(), v.end(), v.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw CorruptPayload("config key '" + key + "': not a boolean: " + it->second);
}

std::vector<std::pair<uint64_t, uint64_t>> Config::get_pairs(
    const std::string& key, std::vector<std::pair<uint64_t, uint64_t>> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_[key] = true;
    std::vector<std::pair<uint64_t, uint64_t>> pairs;
    std::istringstream in(it->second);
    std::string item;
    while (std::getline(in, item, ',')) {
        item.erase(std::remove_if(item.begin(), item.end(),
                                  [](unsigned char c) { return std::isspace(c); }),
                   item.end());
        if (item.empty()) continue;
        const auto colon = item.find(':');
        if (colon == std::string::npos)
            throw CorruptPayload("config key '" + key + "': expected i:j pairs, got " + item);
        try {
            const uint64_t a = std::stoull(item.substr(0, colon));
            const uint64_t b = std::stoull(item.substr(colon + 1));
            pairs.emplace_back(a, b);
        } catch (const std::exception&) {
            throw CorruptPayload("config key '" + key + "': bad pair " + item);
        }
    }
    return pairs;
}

std::vector<std::string> Config::unconsumed_keys() const {
    std::vector<std::string> keys;
    for (const auto& [key, used] : consumed_)
        if (!used) keys.push_back(key);
    return keys;
}

}  // namespace placerec
