#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace metacsi {

/// Flat `section.key = value` configuration. Lines starting with '#' are
/// comments; later assignments override earlier ones.
class Config {
public:
    static Config parse(const std::string& text, const std::string& origin = "<string>");
    static Config load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value);
    void erase(const std::string& key) { values_.erase(key); }
    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::optional<std::string> raw(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const;
    std::vector<long long> get_int_list(const std::string& key, const std::vector<long long>& fallback) const;

    const std::map<std::string, std::string>& entries() const noexcept { return values_; }

    /// Canonical text: sorted `key = value` lines.
    std::string canonical_text() const;
    /// FNV-1a 64-bit hash of the canonical text, as 16 hex digits.
    std::string hash() const;

private:
    std::map<std::string, std::string> values_;
};

std::vector<std::string> split_list(const std::string& s);

}  // namespace metacsi
