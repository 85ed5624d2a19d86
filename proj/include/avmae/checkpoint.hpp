#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "avmae/errors.hpp"
#include "avmae/model.hpp"

namespace avmae {

// Checkpoint layout: magic, little-endian u64 header length, JSON header
// (config echo + parameter manifest with name/shape/byte offset), then the
// raw fp64 little-endian parameter data in manifest order.
inline constexpr char kCheckpointMagic[8] = {'A', 'V', 'M', 'A', 'E', 'C', 'K', '1'};

inline void save_checkpoint(const Model& model, const nlohmann::json& config_echo,
                            const std::string& path) {
    ParamList params = model.parameters();
    nlohmann::json manifest = nlohmann::json::array();
    uint64_t offset = 0;
    for (const ParamRef& p : params) {
        manifest.push_back({{"name", p.name},
                            {"shape", p.tensor.shape()},
                            {"offset", offset}});
        offset += p.tensor.size() * sizeof(double);
    }
    nlohmann::json header;
    header["config"] = config_echo;
    header["params"] = manifest;
    header["data_bytes"] = offset;
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out.good()) throw ConfigError("checkpoint: cannot open '" + path + "' for writing");
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const uint64_t hlen = header_str.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const ParamRef& p : params) {
        out.write(reinterpret_cast<const char*>(p.tensor.data().data()),
                  static_cast<std::streamsize>(p.tensor.size() * sizeof(double)));
    }
    if (!out.good()) throw ConfigError("checkpoint: write to '" + path + "' failed");
}

inline nlohmann::json read_checkpoint_header(std::ifstream& in, const std::string& path) {
    char magic[sizeof(kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (!in.good() || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw ConfigError("checkpoint: '" + path + "' is not a checkpoint file");
    }
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string header_str(hlen, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(hlen));
    if (!in.good()) throw ConfigError("checkpoint: truncated header in '" + path + "'");
    return nlohmann::json::parse(header_str);
}

// Loads parameter values into an already-constructed model; names and
// shapes must match the manifest exactly.
inline nlohmann::json load_checkpoint_into(Model& model, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw ConfigError("checkpoint: cannot open '" + path + "'");
    nlohmann::json header = read_checkpoint_header(in, path);

    ParamList params = model.parameters();
    const auto& manifest = header.at("params");
    if (manifest.size() != params.size()) {
        throw ConfigError("checkpoint: manifest has " + std::to_string(manifest.size()) +
                          " parameters, model has " + std::to_string(params.size()));
    }
    const std::streampos data_start = in.tellg();
    for (size_t k = 0; k < params.size(); ++k) {
        const auto& entry = manifest.at(k);
        if (entry.at("name").get<std::string>() != params[k].name) {
            throw ConfigError("checkpoint: parameter " + std::to_string(k) + " is '" +
                              entry.at("name").get<std::string>() + "', model expects '" +
                              params[k].name + "'");
        }
        const Shape shape = entry.at("shape").get<Shape>();
        if (shape != params[k].tensor.shape()) {
            throw ConfigError("checkpoint: shape mismatch for '" + params[k].name + "'");
        }
        in.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<uint64_t>()));
        in.read(reinterpret_cast<char*>(params[k].tensor.data().data()),
                static_cast<std::streamsize>(params[k].tensor.size() * sizeof(double)));
        if (!in.good()) {
            throw ConfigError("checkpoint: truncated data for '" + params[k].name + "'");
        }
    }
    return header.at("config");
}

}  // namespace avmae
