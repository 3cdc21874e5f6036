#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffenc/data.hpp"
#include "diffenc/error.hpp"
#include "diffenc/io.hpp"
#include "diffenc/model.hpp"
#include "diffenc/tensor.hpp"

// Tensor container layout (all integers little-endian):
//   8 bytes   magic "DIFFENC\0"
//   u32       container version (1)
//   u64       header length n
//   n bytes   JSON header; "tensors" lists {name, group, shape, offset} with offset counted
//             in doubles from the start of the payload
//   payload   IEEE-754 binary64 values, little-endian, in directory order

namespace diffenc {

inline constexpr char kContainerMagic[8] = {'D', 'I', 'F', 'F', 'E', 'N', 'C', '\0'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct NamedTensor {
    std::string name;
    std::string group;  // param | adam_m | adam_v | data
    nn::Tensor value;
};

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
    for (std::size_t k = 0; k < sizeof(U); ++k) out.push_back(char((v >> (8 * k)) & 0xff));
}

template <typename U>
U get_le(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (in.size() < pos + sizeof(U)) throw ParseError("truncated container", in.size());
    U v = 0;
    for (std::size_t k = 0; k < sizeof(U); ++k) v |= U(in[pos + k]) << (8 * k);
    pos += sizeof(U);
    return v;
}

}  // namespace detail

inline std::string encode_container(nlohmann::json header, const std::vector<NamedTensor>& tensors) {
    nlohmann::json dir = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        dir.push_back({{"name", t.name}, {"group", t.group}, {"shape", t.value.shape}, {"offset", offset}});
        offset += t.value.size();
    }
    header["format_version"] = kContainerVersion;
    header["tensors"] = dir;
    const std::string h = header.dump();

    std::string out(kContainerMagic, sizeof kContainerMagic);
    detail::put_le<std::uint32_t>(out, kContainerVersion);
    detail::put_le<std::uint64_t>(out, h.size());
    out += h;
    out.reserve(out.size() + offset * 8);
    for (const auto& t : tensors)
        for (double v : t.value.data) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

struct Container {
    nlohmann::json header;
    std::vector<NamedTensor> tensors;

    const NamedTensor* find(const std::string& name, const std::string& group) const {
        for (const auto& t : tensors)
            if (t.name == name && t.group == group) return &t;
        return nullptr;
    }
};

inline Container decode_container(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kContainerMagic, 8) != 0)
        throw ParseError("not a tensor container (bad magic)", 0);
    std::size_t pos = 8;
    const auto version = detail::get_le<std::uint32_t>(bytes, pos);
    if (version != kContainerVersion) throw ParseError("unsupported container version " + std::to_string(version), 8);
    const auto hlen = detail::get_le<std::uint64_t>(bytes, pos);
    if (bytes.size() - pos < hlen) throw ParseError("truncated container header", bytes.size());
    Container c;
    try {
        c.header = nlohmann::json::parse(bytes.begin() + long(pos), bytes.begin() + long(pos + hlen));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed container header: ") + e.what(), pos);
    }
    pos += hlen;
    const std::size_t payload = pos;
    for (const auto& entry : c.header.at("tensors")) {
        const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 2) throw ParseError("tensor '" + entry.at("name").get<std::string>() + "' is not 2-D", payload);
        const std::size_t n = shape[0] * shape[1];
        std::size_t at = payload + entry.at("offset").get<std::size_t>() * 8;
        if (bytes.size() < at + n * 8) throw ParseError("truncated tensor payload", bytes.size());
        nn::Tensor t(shape[0], shape[1]);
        for (double& v : t.data) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, at));
        c.tensors.push_back({entry.at("name").get<std::string>(), entry.at("group").get<std::string>(), std::move(t)});
    }
    return c;
}

inline void write_container(const std::filesystem::path& path, const nlohmann::json& header,
                            const std::vector<NamedTensor>& tensors) {
    io::atomic_write(path, encode_container(header, tensors));
}

inline Container read_container(const std::filesystem::path& path) { return decode_container(read_file_bytes(path)); }

// ---- model checkpoints --------------------------------------------------------------------

struct CheckpointInfo {
    ModelConfig model;
    std::int64_t step = 0;
    std::string config_hash;
    nlohmann::json run_config;
};

inline std::string encode_checkpoint(const DiffEncModel& m, const std::string& config_hash,
                                     const nlohmann::json& run_config) {
    const auto& ps = m.params();
    nlohmann::json header = {{"kind", "checkpoint"},
                             {"config_hash", config_hash},
                             {"schedule", {{"lambda_max", m.schedule().lambda_max()}, {"lambda_min", m.schedule().lambda_min()}}},
                             {"encoder_kind", to_string(m.encoder().kind())},
                             {"model", m.config()},
                             {"step", ps.step},
                             {"run_config", run_config}};
    std::vector<NamedTensor> tensors;
    for (const auto& [name, t] : ps.params()) tensors.push_back({name, "param", t});
    for (const auto& [name, t] : ps.first_moment) tensors.push_back({name, "adam_m", t});
    for (const auto& [name, t] : ps.second_moment) tensors.push_back({name, "adam_v", t});
    return encode_container(header, tensors);
}

inline void save_checkpoint(const std::filesystem::path& path, const DiffEncModel& m, const std::string& config_hash,
                            const nlohmann::json& run_config) {
    io::atomic_write(path, encode_checkpoint(m, config_hash, run_config));
}

/// Rebuilds the model from a decoded checkpoint, checking every expected parameter is present
/// with the right shape.
inline std::unique_ptr<DiffEncModel> model_from_container(const Container& c, CheckpointInfo* info = nullptr) {
    if (c.header.value("kind", "") != "checkpoint") throw ConfigError("container is not a model checkpoint");
    ModelConfig cfg;
    try {
        cfg = c.header.at("model").get<ModelConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("checkpoint model config unreadable: ") + e.what());
    }
    auto model = std::make_unique<DiffEncModel>(cfg);
    model->init(0);  // establishes the expected names and shapes
    auto& ps = model->params();
    for (auto& [name, t] : ps.params()) {
        const NamedTensor* nt = c.find(name, "param");
        if (!nt) throw ConfigError("checkpoint lacks parameter '" + name + "'");
        if (!nt->value.same_shape(t)) throw ConfigError("checkpoint parameter '" + name + "' has the wrong shape");
        t = nt->value;
    }
    for (const auto& nt : c.tensors) {
        if (nt.group == "param" && !ps.contains(nt.name)) throw ConfigError("checkpoint has unknown parameter '" + nt.name + "'");
        if (nt.group == "adam_m") ps.first_moment[nt.name] = nt.value;
        if (nt.group == "adam_v") ps.second_moment[nt.name] = nt.value;
    }
    ps.step = c.header.at("step").get<std::int64_t>();
    if (info) {
        info->model = cfg;
        info->step = ps.step;
        info->config_hash = c.header.value("config_hash", "");
        info->run_config = c.header.value("run_config", nlohmann::json::object());
    }
    return model;
}

inline std::unique_ptr<DiffEncModel> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr) {
    return model_from_container(read_container(path), info);
}

}  // namespace diffenc
