#include "dfr/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dfr/util.hpp"

namespace dfr {

namespace {

void append_f32_le(std::vector<uint8_t>& out, float v) {
    const uint32_t u = std::bit_cast<uint32_t>(v);
    out.push_back(static_cast<uint8_t>(u & 0xff));
    out.push_back(static_cast<uint8_t>((u >> 8) & 0xff));
    out.push_back(static_cast<uint8_t>((u >> 16) & 0xff));
    out.push_back(static_cast<uint8_t>((u >> 24) & 0xff));
}

float read_f32_le(const uint8_t* p) {
    const uint32_t u = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                       (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
    return std::bit_cast<float>(u);
}

}  // namespace

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed: " + path);
}

uint64_t file_hash(const std::string& path) {
    const std::string s = read_file(path);
    return fnv1a64(s.data(), s.size());
}

std::vector<uint8_t> parameter_bytes(const ParameterSet& params) {
    std::vector<uint8_t> out;
    for (const auto& [id, t] : params) {
        for (float v : t.values()) append_f32_le(out, v);
    }
    return out;
}

uint64_t parameter_hash(const ParameterSet& params) {
    const auto bytes = parameter_bytes(params);
    return fnv1a64(bytes.data(), bytes.size());
}

void save_parameters(const ParameterSet& params, const std::string& stem) {
    nlohmann::ordered_json manifest;
    manifest["schema_version"] = 1;
    manifest["dtype"] = "f32le";
    auto& plist = manifest["params"] = nlohmann::ordered_json::array();
    for (const auto& [id, t] : params) {
        nlohmann::ordered_json rec;
        rec["id"] = id;
        rec["shape"] = t.shape();
        rec["elements"] = t.numel();
        plist.push_back(std::move(rec));
    }
    write_file(stem + ".json", manifest.dump(2) + "\n");

    const auto bytes = parameter_bytes(params);
    std::string payload(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    write_file(stem + ".bin", payload);
}

void load_parameters(ParameterSet& params, const std::string& stem) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file(stem + ".json"));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("checkpoint manifest " + stem + ".json: " + e.what());
    }
    if (!manifest.contains("params") || !manifest["params"].is_array()) {
        throw ParseError("checkpoint manifest " + stem + ".json: missing params array");
    }
    const auto& plist = manifest["params"];
    if (plist.size() != params.size()) {
        throw ContractError("checkpoint " + stem + ": manifest has " +
                            std::to_string(plist.size()) + " params, expected " +
                            std::to_string(params.size()));
    }

    const std::string payload = read_file(stem + ".bin");
    const auto* bytes = reinterpret_cast<const uint8_t*>(payload.data());
    size_t offset = 0;
    size_t i = 0;
    for (auto& [id, t] : params) {
        const auto& rec = plist[i++];
        if (rec.at("id").get<std::string>() != id) {
            throw ContractError("checkpoint " + stem + ": parameter id mismatch, manifest '" +
                                rec.at("id").get<std::string>() + "' vs expected '" + id + "'");
        }
        const auto shape = rec.at("shape").get<std::vector<int>>();
        if (shape != t.shape()) {
            throw ContractError("checkpoint " + stem + ": shape mismatch for '" + id + "'");
        }
        const size_t n = static_cast<size_t>(t.numel());
        if (offset + 4 * n > payload.size()) {
            throw ParseError("checkpoint " + stem + ".bin: truncated at byte " +
                             std::to_string(offset));
        }
        auto values = t.values_mut();
        for (size_t j = 0; j < n; ++j) values[j] = read_f32_le(bytes + offset + 4 * j);
        offset += 4 * n;
    }
    if (offset != payload.size()) {
        throw ParseError("checkpoint " + stem + ".bin: " +
                         std::to_string(payload.size() - offset) + " trailing bytes");
    }
}

}  // namespace dfr
