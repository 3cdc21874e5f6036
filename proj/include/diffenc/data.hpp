#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "diffenc/error.hpp"
#include "diffenc/rng.hpp"

namespace diffenc {

/// 2v/255 - 1, mapping {0..255} onto [-1, 1].
inline double scale_pixels(int v) {
    detail::require_domain(v >= 0 && v <= 255, "pixel value must lie in {0..255}");
    return (2.0 * v - 255.0) / 255.0;
}

/// Nearest pixel level of a real in pixel scaling; values outside [-1, 1] clamp.
inline std::uint8_t quantize_to_pixel(double x) {
    const double level = std::round((x + 1.0) * 255.0 / 2.0);
    return static_cast<std::uint8_t>(std::clamp(level, 0.0, 255.0));
}

enum class DatasetKind { Image, Real };

/// Either u8 images (pixels) or real vectors (synthetic). Items are stored flattened; `dims`
/// is the per-item shape, e.g. {28, 28} or {2}.
struct Dataset {
    std::string name;
    DatasetKind kind = DatasetKind::Real;
    std::vector<std::size_t> dims;
    std::vector<std::vector<std::uint8_t>> pixels;  // Image
    std::vector<std::vector<double>> reals;         // Real
    std::map<std::string, double> metadata;

    std::size_t size() const noexcept { return kind == DatasetKind::Image ? pixels.size() : reals.size(); }

    std::size_t item_dim() const noexcept {
        return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
    }

    /// Item in model space: scaled pixels for images, the raw vector for reals.
    std::vector<double> item(std::size_t i) const {
        if (kind == DatasetKind::Real) return reals.at(i);
        const auto& p = pixels.at(i);
        std::vector<double> out(p.size());
        for (std::size_t k = 0; k < p.size(); ++k) out[k] = scale_pixels(p[k]);
        return out;
    }

    /// Discrete targets for the reconstruction term; reals are quantized to the 256 levels.
    std::vector<int> item_pixels(std::size_t i) const {
        std::vector<int> out;
        if (kind == DatasetKind::Image) {
            const auto& p = pixels.at(i);
            out.assign(p.begin(), p.end());
        } else {
            for (double v : reals.at(i)) out.push_back(quantize_to_pixel(v));
        }
        return out;
    }

    void validate() const {
        const std::size_t d = item_dim();
        if (kind == DatasetKind::Image) {
            for (const auto& p : pixels)
                if (p.size() != d) throw ConfigError("dataset items do not share dims");
        } else {
            for (const auto& r : reals)
                if (r.size() != d) throw ConfigError("dataset items do not share dims");
        }
    }
};

// ---- IDX ----------------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxMagicU8Rank3 = 0x00000803;

/// Raw IDX content: big-endian header then one byte per element.
struct IdxFile {
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> data;
};

inline IdxFile parse_idx(const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 0;
    auto read_u32 = [&](const char* what) {
        if (bytes.size() < pos + 4) throw ParseError(std::string("truncated IDX header reading ") + what, bytes.size());
        const std::uint32_t v = (std::uint32_t(bytes[pos]) << 24) | (std::uint32_t(bytes[pos + 1]) << 16) |
                                (std::uint32_t(bytes[pos + 2]) << 8) | std::uint32_t(bytes[pos + 3]);
        pos += 4;
        return v;
    };
    const std::uint32_t magic = read_u32("magic");
    if (magic != kIdxMagicU8Rank3) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "bad IDX magic 0x%08x (expected 0x00000803)", magic);
        throw ParseError(buf, 0);
    }
    IdxFile f;
    std::uint64_t count = 1;
    for (int k = 0; k < 3; ++k) {
        f.dims.push_back(read_u32("dimension size"));
        count *= f.dims.back();
    }
    if (bytes.size() - pos < count) {
        throw ParseError("truncated IDX payload: header declares " + std::to_string(count) + " bytes, " +
                             std::to_string(bytes.size() - pos) + " present",
                         bytes.size());
    }
    if (bytes.size() - pos > count) throw ParseError("trailing bytes after IDX payload", pos + count);
    f.data.assign(bytes.begin() + long(pos), bytes.end());
    return f;
}

inline std::vector<std::uint8_t> serialize_idx(const IdxFile& f) {
    if (f.dims.size() != 3) throw ConfigError("IDX writer supports rank-3 u8 files only");
    std::vector<std::uint8_t> out;
    auto put = [&](std::uint32_t v) {
        for (int s = 24; s >= 0; s -= 8) out.push_back(std::uint8_t(v >> s));
    };
    put(kIdxMagicU8Rank3);
    for (auto d : f.dims) put(d);
    out.insert(out.end(), f.data.begin(), f.data.end());
    return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Dataset dataset_from_idx(const IdxFile& f, std::string name) {
    Dataset ds;
    ds.name = std::move(name);
    ds.kind = DatasetKind::Image;
    ds.dims = {f.dims[1], f.dims[2]};
    const std::size_t d = ds.item_dim();
    ds.pixels.reserve(f.dims[0]);
    for (std::size_t i = 0; i < f.dims[0]; ++i)
        ds.pixels.emplace_back(f.data.begin() + long(i * d), f.data.begin() + long((i + 1) * d));
    return ds;
}

inline IdxFile idx_from_dataset(const Dataset& ds) {
    if (ds.kind != DatasetKind::Image || ds.dims.size() != 2) throw ConfigError("only 2-D image datasets map to IDX");
    IdxFile f;
    f.dims = {std::uint32_t(ds.size()), std::uint32_t(ds.dims[0]), std::uint32_t(ds.dims[1])};
    for (const auto& p : ds.pixels) f.data.insert(f.data.end(), p.begin(), p.end());
    return f;
}

inline Dataset load_idx(const std::string& path) { return dataset_from_idx(parse_idx(read_file_bytes(path)), path); }

inline void write_idx(const Dataset& ds, const std::string& path) {
    const auto bytes = serialize_idx(idx_from_dataset(ds));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

// ---- synthetic ----------------------------------------------------------------------------

/// n draws from N(mean, cov_scale I) in two dimensions. The generating parameters go into
/// metadata (mean0, mean1, cov_scale, seed) for oracle comparisons.
inline Dataset synth_gaussian2d(std::size_t n, std::array<double, 2> mean, double cov_scale, std::uint64_t seed) {
    detail::require_domain(n >= 1, "synthetic dataset needs n >= 1");
    detail::require_domain(cov_scale >= 0.0, "cov_scale must be non-negative");
    Dataset ds;
    ds.name = "gaussian2d";
    ds.kind = DatasetKind::Real;
    ds.dims = {2};
    ds.metadata = {{"mean0", mean[0]}, {"mean1", mean[1]}, {"cov_scale", cov_scale}, {"seed", double(seed)}};
    Rng rng(seed);
    const double sd = std::sqrt(cov_scale);
    ds.reals.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = rng.normal();
        const double b = rng.normal();
        ds.reals.push_back({mean[0] + sd * a, mean[1] + sd * b});
    }
    return ds;
}

inline void write_csv(const Dataset& ds, std::ostream& out) {
    const std::size_t d = ds.item_dim();
    for (std::size_t k = 0; k < d; ++k) out << (k ? "," : "") << "x" << k;
    out << "\n";
    out.precision(17);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.kind == DatasetKind::Real) {
            const auto& r = ds.reals[i];
            for (std::size_t k = 0; k < d; ++k) out << (k ? "," : "") << r[k];
        } else {
            const auto& p = ds.pixels[i];
            for (std::size_t k = 0; k < d; ++k) out << (k ? "," : "") << int(p[k]);
        }
        out << "\n";
    }
}

/// Shuffled mini-batches; each epoch visits every item exactly once, the final batch of an
/// epoch may be short.
class BatchIterator {
public:
    BatchIterator(std::size_t n, std::size_t batch, std::uint64_t seed) : n_(n), batch_(batch), rng_(seed) {
        if (n == 0 || batch == 0) throw ConfigError("batch iterator needs items and a positive batch size");
        reshuffle();
    }

    std::vector<std::size_t> next() {
        if (pos_ >= n_) {
            reshuffle();
            ++epoch_;
        }
        const std::size_t end = std::min(n_, pos_ + batch_);
        std::vector<std::size_t> out(order_.begin() + long(pos_), order_.begin() + long(end));
        pos_ = end;
        return out;
    }

    std::size_t epoch() const noexcept { return epoch_; }

private:
    void reshuffle() {
        order_.resize(n_);
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
        pos_ = 0;
    }

    std::size_t n_, batch_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
    std::size_t epoch_ = 0;
};

}  // namespace diffenc
