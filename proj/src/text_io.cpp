#include "flowsim/text_io.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "flowsim/error.hpp"

namespace flowsim {

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string join_g17(std::span<const double> values, char sep) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out.push_back(sep);
        out += format_g17(values[i]);
    }
    return out;
}

bool parse_double(std::string_view s, double& out) {
    if (s.empty()) return false;
    std::string tmp(s);
    const char* begin = tmp.c_str();
    char* end = nullptr;
    errno = 0;
    double v = std::strtod(begin, &end);
    if (end != begin + tmp.size()) return false;
    // ERANGE with a tiny result is a subnormal (gradual underflow): those
    // round-trip exactly through %.17g and must stay readable. Only genuine
    // overflow is rejected.
    if (errno == ERANGE && std::abs(v) > 1.0) return false;
    out = v;
    return true;
}

bool parse_int(std::string_view s, long long& out) {
    if (s.empty()) return false;
    std::string tmp(s);
    const char* begin = tmp.c_str();
    char* end = nullptr;
    errno = 0;
    long long v = std::strtoll(begin, &end, 10);
    if (end != begin + tmp.size() || errno == ERANGE) return false;
    out = v;
    return true;
}

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char delim) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == delim) {
            out.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise_data("FileUnreadable", "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) raise_data("FileUnreadable", "read failed on " + path);
    return ss.str();
}

void write_text_file(const std::string& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise_data("FileUnwritable", "cannot open " + path + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) raise_data("FileUnwritable", "write failed on " + path);
}

const std::string* KvSection::find(std::string_view key) const {
    for (const auto& [k, v] : entries)
        if (k == key) return &v;
    return nullptr;
}

const std::string& KvSection::require(std::string_view key) const {
    const std::string* v = find(key);
    if (!v) raise_data("MissingKey", "section [" + name + "] is missing key '" + std::string(key) + "'");
    return *v;
}

double KvSection::require_double(std::string_view key) const {
    double v = 0.0;
    if (!parse_double(require(key), v))
        raise_data("MalformedValue", "section [" + name + "] key '" + std::string(key) + "' is not a number");
    return v;
}

long long KvSection::require_int(std::string_view key) const {
    long long v = 0;
    if (!parse_int(require(key), v))
        raise_data("MalformedValue", "section [" + name + "] key '" + std::string(key) + "' is not an integer");
    return v;
}

std::vector<double> KvSection::require_doubles(std::string_view key) const {
    std::vector<double> out;
    for (const std::string& tok : split(require(key), ' ')) {
        if (tok.empty()) continue;
        double v = 0.0;
        if (!parse_double(tok, v))
            raise_data("MalformedValue",
                       "section [" + name + "] key '" + std::string(key) + "' has non-numeric entry '" + tok + "'");
        out.push_back(v);
    }
    return out;
}

const KvSection* KvFile::find(std::string_view name) const {
    for (const auto& s : sections)
        if (s.name == name) return &s;
    return nullptr;
}

const KvSection& KvFile::require(std::string_view name) const {
    const KvSection* s = find(name);
    if (!s) raise_data("MissingSection", "missing section [" + std::string(name) + "]");
    return *s;
}

KvFile KvFile::parse_text(const std::string& text, const std::string& origin) {
    KvFile file;
    std::istringstream in(text);
    std::string line;
    bool saw_header = false;
    while (std::getline(in, line)) {
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (!saw_header) {
            file.header = t;
            saw_header = true;
            continue;
        }
        if (t.front() == '[') {
            if (t.back() != ']')
                raise_data("MalformedSection", origin + ": unterminated section header '" + t + "'");
            file.sections.push_back({trim(t.substr(1, t.size() - 2)), {}});
            continue;
        }
        if (file.sections.empty())
            raise_data("MalformedSection", origin + ": key outside any section: '" + t + "'");
        std::size_t sp = t.find_first_of(" \t");
        if (sp == std::string::npos)
            raise_data("MalformedValue", origin + ": key without value: '" + t + "'");
        file.sections.back().entries.emplace_back(t.substr(0, sp), trim(t.substr(sp + 1)));
    }
    if (!saw_header) raise_data("EmptyFile", origin + ": no content");
    return file;
}

KvFile KvFile::load(const std::string& path) { return parse_text(read_text_file(path), path); }

std::string KvFile::serialize() const {
    std::string out = header + "\n";
    for (const auto& s : sections) {
        out += "[" + s.name + "]\n";
        for (const auto& [k, v] : s.entries) out += k + " " + v + "\n";
    }
    return out;
}

void KvFile::save(const std::string& path) const { write_text_file(path, serialize()); }

}  // namespace flowsim
