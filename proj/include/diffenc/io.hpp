#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "diffenc/error.hpp"

namespace diffenc::io {

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Writes to a sibling temporary file and renames it over `path`, so readers never see a
/// partially written file and a failed write leaves the previous version in place.
inline void atomic_write(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write '" + tmp.string() + "'");
        out.write(bytes.data(), std::streamsize(bytes.size()));
        out.flush();
        if (!out) throw ConfigError("short write to '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

/// Comma-separated table with a leading "# config_hash=..." comment line.
class CsvTable {
public:
    CsvTable(std::string config_hash, std::vector<std::string> columns)
        : hash_(std::move(config_hash)), columns_(std::move(columns)) {}

    void add(const std::vector<double>& row) {
        if (row.size() != columns_.size()) throw ConfigError("CSV row width does not match header");
        rows_.push_back(row);
    }

    std::string str() const {
        std::ostringstream os;
        os << "# config_hash=" << hash_ << "\n";
        for (std::size_t i = 0; i < columns_.size(); ++i) os << (i ? "," : "") << columns_[i];
        os << "\n";
        char buf[32];
        for (const auto& r : rows_) {
            for (std::size_t i = 0; i < r.size(); ++i) {
                // shortest text that reads back to the same double
                const auto res = std::to_chars(buf, buf + sizeof buf, r[i]);
                os << (i ? "," : "") << std::string_view(buf, std::size_t(res.ptr - buf));
            }
            os << "\n";
        }
        return os.str();
    }

    void write(const std::filesystem::path& path) const { atomic_write(path, str()); }

    std::size_t size() const noexcept { return rows_.size(); }

private:
    std::string hash_;
    std::vector<std::string> columns_;
    std::vector<std::vector<double>> rows_;
};

/// Binary PGM (P5) for one channel or PPM (P6) for three, 8 bits per sample, with the config
/// hash as a header comment.
inline std::string netpbm(std::size_t width, std::size_t height, std::size_t channels,
                          const std::vector<std::uint8_t>& samples, const std::string& config_hash) {
    if (channels != 1 && channels != 3) throw ConfigError("netpbm images have 1 or 3 channels");
    if (samples.size() != width * height * channels) throw ConfigError("image sample count does not match size");
    std::ostringstream os;
    os << (channels == 1 ? "P5" : "P6") << "\n# config_hash=" << config_hash << "\n"
       << width << " " << height << "\n255\n";
    os.write(reinterpret_cast<const char*>(samples.data()), std::streamsize(samples.size()));
    return os.str();
}

/// Linear map of `values` onto 0..255 using [lo, hi]; a constant map becomes mid-gray unless it
/// is exactly zero, which stays black.
inline std::vector<std::uint8_t> to_gray(const std::vector<double>& values, double lo, double hi) {
    std::vector<std::uint8_t> out(values.size(), 0);
    if (!(hi > lo)) {
        const std::uint8_t fill = (lo == 0.0 && hi == 0.0) ? 0 : 128;
        std::fill(out.begin(), out.end(), fill);
        return out;
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double u = (values[i] - lo) / (hi - lo);
        out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(u, 0.0, 1.0) * 255.0));
    }
    return out;
}

}  // namespace diffenc::io
