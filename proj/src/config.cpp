#include "config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "common.hpp"

namespace metacsi {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
    fail(ErrorKind::config, "config key '" + key + "': expected " + want + ", got '" + value + "'");
}

}  // namespace

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

Config Config::parse(const std::string& text, const std::string& origin) {
    Config c;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            fail(ErrorKind::config, origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) fail(ErrorKind::config, origin + ":" + std::to_string(line_no) + ": empty key");
        c.values_[key] = trim(line.substr(eq + 1));
    }
    return c;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::config, "cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

void Config::set(const std::string& key, const std::string& value) { values_[trim(key)] = trim(value); }

std::optional<std::string> Config::raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    return raw(key).value_or(fallback);
}

double Config::get_double(const std::string& key, double fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        const double d = std::stod(*v, &used);
        if (used != v->size()) bad_value(key, *v, "a number");
        return d;
    } catch (const std::logic_error&) {
        bad_value(key, *v, "a number");
    }
}

long long Config::get_int(const std::string& key, long long fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    long long out = 0;
    const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc{} || ptr != v->data() + v->size()) bad_value(key, *v, "an integer");
    return out;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc{} || ptr != v->data() + v->size()) bad_value(key, *v, "an unsigned integer");
    return out;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "on" || *v == "yes" || *v == "1") return true;
    if (*v == "false" || *v == "off" || *v == "no" || *v == "0") return false;
    bad_value(key, *v, "a boolean");
}

std::vector<std::string> Config::get_list(const std::string& key, const std::vector<std::string>& fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    return split_list(*v);
}

std::vector<long long> Config::get_int_list(const std::string& key, const std::vector<long long>& fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    std::vector<long long> out;
    for (const std::string& item : split_list(*v)) {
        long long x = 0;
        const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
        if (ec != std::errc{} || ptr != item.data() + item.size()) bad_value(key, *v, "a list of integers");
        out.push_back(x);
    }
    return out;
}

std::string Config::canonical_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

std::string Config::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical_text()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace metacsi
