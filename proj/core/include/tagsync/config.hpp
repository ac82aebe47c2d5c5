#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace tagsync::config {

// Flat key-value configuration: one `dotted.key = value` per line, `#`
// starts a comment. Keys carry their unit as a suffix (delay_ps, rate_hz)
// so a value can never be read in the wrong unit silently. Every key must
// be consumed by the scenario that runs; leftovers are reported as unknown
// keys, so a typo never passes silently either.
class Config {
  public:
    static Config parse(const std::string& text);
    static Config load_file(const std::string& path);

    bool has(const std::string& key) const;

    std::string get_string(const std::string& key) const;
    std::string get_string_or(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key) const;
    std::int64_t get_int_or(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_uint(const std::string& key) const;
    std::uint64_t get_uint_or(const std::string& key, std::uint64_t fallback) const;
    double get_double(const std::string& key) const;
    double get_double_or(const std::string& key, double fallback) const;
    bool get_bool_or(const std::string& key, bool fallback) const;
    std::vector<double> get_double_list(const std::string& key) const;

    // Overrides or inserts a value (used for command-line overrides).
    void set(const std::string& key, const std::string& value);

    // Throws ConfigError on the first key nothing ever read.
    void reject_unconsumed() const;

    // Raw bytes the config was parsed from, for manifest hashing.
    const std::string& source_text() const { return source_; }

  private:
    std::string raw(const std::string& key) const;

    std::map<std::string, std::string> values_;
    std::string source_;
    mutable std::set<std::string> consumed_;
};

}  // namespace tagsync::config
