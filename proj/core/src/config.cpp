#include "tagsync/config.hpp"

#include <cctype>
#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "tagsync/errors.hpp"

namespace tagsync::config {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k) {
        if (!(std::islower(static_cast<unsigned char>(c)) ||
              std::isdigit(static_cast<unsigned char>(c)) || c == '_' || c == '.')) {
            return false;
        }
    }
    return true;
}

}  // namespace

Config Config::parse(const std::string& text) {
    Config cfg;
    cfg.source_ = text;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::string stripped = trim(line);
        if (stripped.empty()) continue;
        auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no), "expected key = value");
        }
        std::string key = trim(std::string_view(stripped).substr(0, eq));
        std::string value = trim(std::string_view(stripped).substr(eq + 1));
        if (!valid_key(key)) throw ConfigError(key, "malformed key");
        if (value.empty()) throw ConfigError(key, "empty value");
        if (!cfg.values_.emplace(key, value).second) throw ConfigError(key, "duplicate key");
    }
    return cfg;
}

Config Config::load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path, "cannot open config file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

bool Config::has(const std::string& key) const { return values_.count(key) != 0; }

std::string Config::raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(key, "missing required key");
    consumed_.insert(key);
    return it->second;
}

std::string Config::get_string(const std::string& key) const { return raw(key); }

std::string Config::get_string_or(const std::string& key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    return raw(key);
}

std::int64_t Config::get_int(const std::string& key) const {
    const std::string v = raw(key);
    std::int64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError(key, "expected an integer, got '" + v + "'");
    }
    return out;
}

std::int64_t Config::get_int_or(const std::string& key, std::int64_t fallback) const {
    if (!has(key)) return fallback;
    return get_int(key);
}

std::uint64_t Config::get_uint(const std::string& key) const {
    const std::string v = raw(key);
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError(key, "expected an unsigned integer, got '" + v + "'");
    }
    return out;
}

std::uint64_t Config::get_uint_or(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    return get_uint(key);
}

double Config::get_double(const std::string& key) const {
    const std::string v = raw(key);
    errno = 0;
    char* end = nullptr;
    double out = std::strtod(v.c_str(), &end);
    if (errno != 0 || end != v.c_str() + v.size() || v.empty()) {
        throw ConfigError(key, "expected a number, got '" + v + "'");
    }
    return out;
}

double Config::get_double_or(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return get_double(key);
}

bool Config::get_bool_or(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = raw(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key, "expected true/false, got '" + v + "'");
}

std::vector<double> Config::get_double_list(const std::string& key) const {
    const std::string v = raw(key);
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= v.size()) {
        auto comma = v.find(',', pos);
        std::string item = trim(std::string_view(v).substr(
            pos, comma == std::string::npos ? std::string::npos : comma - pos));
        if (item.empty()) throw ConfigError(key, "empty list element");
        errno = 0;
        char* end = nullptr;
        double d = std::strtod(item.c_str(), &end);
        if (errno != 0 || end != item.c_str() + item.size()) {
            throw ConfigError(key, "bad list element '" + item + "'");
        }
        out.push_back(d);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

void Config::set(const std::string& key, const std::string& value) {
    if (!valid_key(key)) throw ConfigError(key, "malformed key");
    values_[key] = value;
}

void Config::reject_unconsumed() const {
    for (const auto& [key, value] : values_) {
        if (consumed_.count(key) == 0) throw ConfigError(key, "unknown key");
    }
}

}  // namespace tagsync::config
