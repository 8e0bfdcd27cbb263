#include "ceco/io.hpp"

#include "ceco/errors.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>
#include <system_error>

namespace ceco {

std::string format_number(double value) {
    return fmt::format("{:.17g}", value);
}

std::vector<std::string> LineReader::tokens(std::string_view what) {
    std::string text;
    while (std::getline(in_, text)) {
        ++line_;
        std::istringstream split(text);
        std::vector<std::string> out;
        for (std::string tok; split >> tok;) {
            out.push_back(std::move(tok));
        }
        if (!out.empty()) {
            return out;
        }
    }
    throw ParseError(line_ + 1, fmt::format("unexpected end of input, expected {}", what));
}

bool LineReader::at_end() {
    // Trailing blank lines are fine.
    while (true) {
        const int c = in_.peek();
        if (c == std::char_traits<char>::eof()) {
            return true;
        }
        if (c != ' ' && c != '\t' && c != '\r' && c != '\n') {
            return false;
        }
        if (c == '\n') {
            ++line_;
        }
        in_.get();
    }
}

double LineReader::to_double(const std::string& token) const {
    double value = 0.0;
    const char* first = token.data();
    const char* last = first + token.size();
    if (!token.empty() && *first == '+') {
        ++first;
    }
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || !std::isfinite(value)) {
        throw ParseError(line_, fmt::format("'{}' is not a finite number", token));
    }
    return value;
}

long long LineReader::to_integer(const std::string& token) const {
    long long value = 0;
    const char* first = token.data();
    const char* last = first + token.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last) {
        throw ParseError(line_, fmt::format("'{}' is not an integer", token));
    }
    return value;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError(fmt::format("cannot open '{}' for writing", tmp.string()));
        }
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            throw IoError(fmt::format("write to '{}' failed", tmp.string()));
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError(fmt::format("cannot rename onto '{}'", path.string()));
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(fmt::format("cannot open '{}'", path.string()));
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

} // namespace ceco
