#pragma once

#include <charconv>
#include <string>
#include <string_view>
#include <vector>

#include "affmem/errors.hpp"

namespace affmem {

/// Shortest decimal form that round-trips the exact double. All emitted
/// CSV/JSON numbers go through this (or nlohmann's equivalent), which is what
/// makes reruns byte-identical.
inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text) {
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw config_error("cannot parse number: '" + std::string(text) + "'");
    return v;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

}  // namespace affmem
