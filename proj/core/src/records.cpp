#include "tagsync/records.hpp"

#include <charconv>
#include <ostream>
#include <sstream>

#include "tagsync/errors.hpp"

namespace tagsync::records {

namespace {

bool valid_agent(const std::string& a) {
    if (a.empty()) return false;
    for (char c : a) {
        if (c == '\t' || c == '\n' || c == '\r') return false;
    }
    return true;
}

// Splits one line into exactly five tab-separated fields.
bool split5(std::string_view line, std::string_view out[5]) {
    std::size_t field = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == '\t') {
            if (field == 5) return false;
            out[field++] = line.substr(start, i - start);
            start = i + 1;
        }
    }
    return field == 5;
}

template <typename T>
bool parse_int(std::string_view s, T& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

}  // namespace

void serialize(std::span<const DetectionRecord> recs, std::ostream& out) {
    std::int64_t prev = 0;
    bool have_prev = false;
    for (const auto& r : recs) {
        if (!valid_agent(r.agent)) throw UnsortedInputError("record has invalid agent id");
        if (have_prev && r.reading_ps < prev) {
            throw UnsortedInputError("records not sorted by reading");
        }
        prev = r.reading_ps;
        have_prev = true;
        out << r.agent << '\t' << r.reading_ps << '\t' << r.channel << '\t' << r.basis << '\t'
            << r.bit << '\n';
    }
}

std::string serialize(std::span<const DetectionRecord> recs) {
    std::ostringstream os;
    serialize(recs, os);
    return os.str();
}

std::vector<DetectionRecord> parse(std::string_view text) {
    std::vector<DetectionRecord> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) {
            throw MalformedLineError(line_no + 1, "missing trailing newline");
        }
        ++line_no;
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;

        std::string_view f[5];
        if (!split5(line, f)) throw MalformedLineError(line_no, "expected 5 tab-separated fields");

        DetectionRecord r;
        r.agent = std::string(f[0]);
        if (!valid_agent(r.agent)) throw MalformedLineError(line_no, "empty agent id");
        if (!parse_int(f[1], r.reading_ps)) throw MalformedLineError(line_no, "bad reading");
        if (!parse_int(f[2], r.channel) || r.channel < 0) {
            throw MalformedLineError(line_no, "bad channel");
        }
        if (!parse_int(f[3], r.basis) || r.basis < 0) throw MalformedLineError(line_no, "bad basis");
        if (!parse_int(f[4], r.bit) || (r.bit != 0 && r.bit != 1)) {
            throw MalformedLineError(line_no, "bit must be 0 or 1");
        }
        if (!out.empty() && r.reading_ps < out.back().reading_ps) {
            throw NonMonotoneError(line_no);
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace tagsync::records
