#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace flowsim {

// Shortest decimal that round-trips the double exactly (%.17g).
std::string format_g17(double v);
std::string join_g17(std::span<const double> values, char sep = ' ');

// Strict scalar parsing: entire token must be consumed.
bool parse_double(std::string_view s, double& out);
bool parse_int(std::string_view s, long long& out);

std::string trim(std::string_view s);
// Splits keeping empty fields ("a,,b" -> {"a","","b"}).
std::vector<std::string> split(std::string_view s, char delim);

std::string read_text_file(const std::string& path);           // throws Data FileUnreadable
void write_text_file(const std::string& path, std::string_view content);  // throws Data FileUnwritable

// Line-oriented parameter files:
//   <header line>
//   [section]
//   key value...
// Blank lines and '#' comments are ignored.
struct KvSection {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;

    const std::string* find(std::string_view key) const;
    const std::string& require(std::string_view key) const;  // throws Data MissingKey
    double require_double(std::string_view key) const;
    long long require_int(std::string_view key) const;
    std::vector<double> require_doubles(std::string_view key) const;
};

struct KvFile {
    std::string header;
    std::vector<KvSection> sections;

    const KvSection* find(std::string_view name) const;
    const KvSection& require(std::string_view name) const;  // throws Data MissingSection

    static KvFile parse_text(const std::string& text, const std::string& origin);
    static KvFile load(const std::string& path);
    std::string serialize() const;
    void save(const std::string& path) const;
};

}  // namespace flowsim
