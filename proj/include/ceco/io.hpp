#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace ceco {

// 17 significant digits: enough for an exact float64 round trip.
std::string format_number(double value);

// Line-oriented tokenizer used by every text parser so that errors carry
// the 1-based line number of the offending input.
class LineReader {
public:
    explicit LineReader(std::istream& in) : in_(in) {}

    // Reads the next non-blank line and splits it on whitespace. Throws
    // ParseError naming the expected line when the stream is exhausted.
    std::vector<std::string> tokens(std::string_view what);

    bool at_end();

    std::size_t line() const { return line_; }

    double to_double(const std::string& token) const;
    long long to_integer(const std::string& token) const;

private:
    std::istream& in_;
    std::size_t line_ = 0;
};

// Writes `content` to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

} // namespace ceco
