#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tagsync/config.hpp"

namespace tagsync::scenario {

struct RunOptions {
    std::string out_dir;  // empty: compute metrics only, write nothing
    bool emit_histograms = false;
};

// Flat ordered key/value report. Values are pre-formatted strings so the
// on-disk metrics file and the in-memory view never disagree.
class MetricsReport {
  public:
    void add(std::string key, std::string value);
    void add(std::string key, double value);
    void add(std::string key, std::int64_t value);
    void add_uint(std::string key, std::uint64_t value);

    bool has(std::string_view key) const;
    const std::string& get(std::string_view key) const;  // throws Error if absent
    double get_double(std::string_view key) const;

    std::string to_text() const;
    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    bool aborted = false;
    std::string abort_reason;

  private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

// Executes the experiment named in the config end-to-end and, when out_dir
// is set, writes record files, the steering log, optional histograms, the
// metrics file and a checksum manifest. A pipeline abort (ambiguous
// periodic correlation, no peak, impossible two-way solution) is reported
// in the returned metrics, not thrown; ConfigError propagates.
MetricsReport run_scenario(const config::Config& cfg, const RunOptions& opt);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace tagsync::scenario
