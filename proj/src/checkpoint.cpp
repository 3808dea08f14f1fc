// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "ulga/nn.hpp"

namespace ulga {

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'U', 'L', 'G', 'A'};
constexpr std::size_t kHeaderBytes = 4 + 2 + 4;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
}

std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, data, chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

json metadata(const Network& net) {
    json layers = json::array();
    for (const auto& l : net.layers()) {
        json params = json::array();
        for (const auto& p : l.params) params.push_back({{"name", p.name}, {"shape", p.value.shape()}});
        layers.push_back({{"name", l.name},
                          {"kind", to_string(l.spec.kind)},
                          {"n_in", l.spec.n_in},
                          {"n_out", l.spec.n_out},
                          {"kernel", l.spec.kernel},
                          {"dilation", l.spec.dilation},
                          {"causal", l.spec.causal},
                          {"activation", to_string(l.spec.activation)},
                          {"inputs", l.inputs},
                          {"params", params}});
    }
    json origins = json::array();
    for (std::size_t s = 0; s < net.space_count(); ++s) origins.push_back(net.space_origin(s));
    json meta = json::object();
    for (const auto& [k, v] : net.meta) meta[k] = v;
    return {{"input_channels", net.input_channels()},
            {"iteration", net.iteration},
            {"layers", layers},
            {"trim_groups", net.trim_groups()},
            {"space_origins", origins},
            {"meta", meta}};
}

}  // namespace

std::vector<std::uint8_t> serialize(const Network& net) {
    const std::string doc = metadata(net).dump();
    std::vector<std::uint8_t> out;
    std::size_t floats = 0;
    for (const auto& l : net.layers())
        for (const auto& p : l.params) floats += p.value.numel();
    out.reserve(kHeaderBytes + doc.size() + 4 * floats + 4);
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_u16(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(doc.size()));
    out.insert(out.end(), doc.begin(), doc.end());
    for (const auto& l : net.layers())
        for (const auto& p : l.params)
            for (float v : p.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    put_u32(out, crc_of(out.data(), out.size()));
    return out;
}

Network deserialize(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderBytes + 4) throw FormatError("checkpoint truncated: " + std::to_string(bytes.size()) +
                                                           " bytes is shorter than the header");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("checkpoint has bad magic (expected ULGA)");
    const std::uint16_t version = get_u16(bytes.data() + 4);
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    const std::size_t doc_len = get_u32(bytes.data() + 6);
    if (kHeaderBytes + doc_len + 4 > bytes.size()) throw FormatError("checkpoint truncated inside metadata");
    const std::size_t body = bytes.size() - 4;
    if (crc_of(bytes.data(), body) != get_u32(bytes.data() + body))
        throw FormatError("checkpoint checksum mismatch");

    json meta;
    try {
        meta = json::parse(bytes.begin() + kHeaderBytes, bytes.begin() + kHeaderBytes + doc_len);
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
    }

    try {
        Network net(meta.at("input_channels").get<std::size_t>());
        for (const auto& l : meta.at("layers")) {
            LayerSpec spec;
            spec.kind = layer_kind_from_string(l.at("kind").get<std::string>());
            spec.n_in = l.at("n_in").get<std::size_t>();
            spec.n_out = l.at("n_out").get<std::size_t>();
            spec.kernel = l.at("kernel").get<std::size_t>();
            spec.dilation = l.at("dilation").get<std::size_t>();
            spec.causal = l.at("causal").get<bool>();
            spec.activation = activation_from_string(l.at("activation").get<std::string>());
            net.add_layer(l.at("name").get<std::string>(), spec, l.at("inputs").get<std::vector<int>>());
        }
        std::size_t off = kHeaderBytes + doc_len;
        for (std::size_t i = 0; i < net.size(); ++i) {
            const auto& declared = meta["layers"][i]["params"];
            auto& params = net.layer(i).params;
            if (declared.size() != params.size())
                throw FormatError("checkpoint layer '" + net.layer(i).name + "' declares a wrong parameter count");
            for (std::size_t p = 0; p < params.size(); ++p) {
                if (declared[p].at("name").get<std::string>() != params[p].name ||
                    declared[p].at("shape").get<Shape>() != params[p].value.shape())
                    throw FormatError("checkpoint parameter " + net.layer(i).name + "." + params[p].name +
                                      " does not match its layer spec");
                auto dst = params[p].value.data_mut();
                if (off + 4 * dst.size() > body) throw FormatError("checkpoint truncated inside parameter data");
                for (auto& v : dst) {
                    v = std::bit_cast<float>(get_u32(bytes.data() + off));
                    off += 4;
                }
            }
        }
        if (off != body) throw FormatError("checkpoint has trailing bytes after parameter data");
        auto origins = meta.at("space_origins").get<std::vector<std::vector<std::size_t>>>();
        if (origins.size() != net.space_count()) throw FormatError("checkpoint unit-space table does not match");
        for (std::size_t s = 0; s < origins.size(); ++s)
            if (origins[s].size() != net.space_size(s)) throw FormatError("checkpoint unit-space table does not match");
        net.space_origin_ = std::move(origins);
        if (meta.at("trim_groups").get<std::vector<std::vector<LayerId>>>() != net.trim_groups())
            throw FormatError("checkpoint trim groups disagree with its layer graph");
        net.iteration = meta.at("iteration").get<std::uint64_t>();
        for (const auto& [k, v] : meta.at("meta").items()) net.meta[k] = v.get<std::string>();
        return net;
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint metadata is incomplete: ") + e.what());
    } catch (const ShapeError& e) {
        throw FormatError(std::string("checkpoint layer graph is inconsistent: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint layer graph is inconsistent: ") + e.what());
    }
}

void save(const Network& net, const std::string& path) {
    const auto bytes = serialize(net);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("failed writing '" + path + "'");
}

Network load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open checkpoint '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    try {
        return deserialize(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

}  // namespace ulga
