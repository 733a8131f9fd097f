#pragma once

#include "latentscope/error.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace latentscope::text {

/// Shortest decimal form that parses back to the same double.
inline std::string num(double v) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Opens a text artifact and writes "# " preamble lines.
inline std::ofstream open_output(const std::filesystem::path& path, const std::vector<std::string>& preamble) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FormatError("cannot open " + path.string() + " for writing");
    }
    for (const auto& line : preamble) out << "# " << line << '\n';
    return out;
}

}  // namespace latentscope::text
