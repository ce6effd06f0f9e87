#ifndef PLACEREC_CONFIG_HPP
#define PLACEREC_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace placerec {

// Flat "key = value" text config. Lines starting with '#' and blank lines are
// ignored. Lookups record which keys were consumed so callers can reject
// unknown keys (typo protection).
class Config {
public:
    Config() = default;

    static Config from_file(const std::filesystem::path& path);
    static Config from_string(const std::string& text);

    bool has(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // Pair list value: "3:47, 12:60" -> {(3,47), (12,60)}.
    std::vector<std::pair<uint64_t, uint64_t>> get_pairs(
        const std::string& key, std::vector<std::pair<uint64_t, uint64_t>> fallback) const;

    // Keys present in the file but never consumed by any getter.
    std::vector<std::string> unconsumed_keys() const;

private:
    std::map<std::string, std::string> values_;
    mutable std::map<std::string, bool> consumed_;
};

}  // namespace placerec

#endif
