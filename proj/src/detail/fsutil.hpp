#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "qospower/common.hpp"

namespace qospower::detail {

// Write-then-rename so readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot open for write: " + tmp.string());
        out.write(content.data(), std::streamsize(content.size()));
        if (!out) throw ConfigError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void write_doubles_atomic(const std::filesystem::path& path,
                                 const std::vector<double>& values) {
    std::string bytes(reinterpret_cast<const char*>(values.data()),
                      values.size() * sizeof(double));
    write_file_atomic(path, bytes);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open: " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::vector<double> read_doubles(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() % sizeof(double) != 0)
        throw ConfigError("truncated binary file: " + path.string());
    std::vector<double> out(bytes.size() / sizeof(double));
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

}  // namespace qospower::detail
