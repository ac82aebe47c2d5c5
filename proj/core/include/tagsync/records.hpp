#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace tagsync::records {

enum class Origin : std::uint8_t { signal, dark };

// One timestamped detection as an agent sees it. `origin` is simulator
// ground truth: it is carried for oracle dumps and never serialized into
// the agent-visible exchange format.
struct DetectionRecord {
    std::string agent;        // non-empty, no tabs or newlines
    std::int64_t reading_ps = 0;
    int channel = 0;
    int basis = 0;
    int bit = 0;
    Origin origin = Origin::signal;
};

// ASCII TSV, one record per line:
//   agent \t reading_ps \t channel \t basis \t bit
// LF line endings, no header. Input must be sorted by reading
// (UnsortedInputError otherwise).
std::string serialize(std::span<const DetectionRecord> recs);
void serialize(std::span<const DetectionRecord> recs, std::ostream& out);

// Inverse of serialize. Throws MalformedLineError (1-based line numbers)
// on syntax or range violations and NonMonotoneError if readings decrease.
std::vector<DetectionRecord> parse(std::string_view text);

}  // namespace tagsync::records
