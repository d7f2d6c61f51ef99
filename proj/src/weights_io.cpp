#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <zlib.h>

#include "lkmn/model.hpp"

namespace lkmn {

namespace {

constexpr char kMagic[4] = {'L', 'K', 'M', 'N'};
constexpr unsigned char kVersion = 0x01;

void put_u32le(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
}

std::uint32_t get_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(size));
    if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), size)) {
        throw IoError("failed to read '" + path + "'");
    }
    return bytes;
}

void write_file_atomic(const std::string& path, const std::vector<unsigned char>& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp + "' for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("failed to write '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("failed to move '" + tmp + "' to '" + path + "': " + ec.message());
}

} // namespace

void save_weights(const WeightStore& ws, const std::string& path) {
    // payload + manifest
    std::vector<unsigned char> payload;
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& [name, t] : ws.params.items()) {
        const Shape s = t.shape();
        nlohmann::json entry{
            {"name", name},
            {"shape", {s.n, s.c, s.h, s.w}},
            {"offset", payload.size()},
            {"len", t.numel()},
        };
        manifest.push_back(std::move(entry));
        for (const float v : t.values()) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32le(payload, bits);
        }
    }
    const nlohmann::json header{
        {"config", ws.config.to_json()},
        {"seed", ws.seed},
        {"manifest", std::move(manifest)},
    };
    const std::string header_str = header.dump();

    std::vector<unsigned char> bytes;
    bytes.insert(bytes.end(), kMagic, kMagic + 4);
    bytes.push_back(kVersion);
    put_u32le(bytes, static_cast<std::uint32_t>(header_str.size()));
    bytes.insert(bytes.end(), header_str.begin(), header_str.end());
    bytes.insert(bytes.end(), payload.begin(), payload.end());
    const std::uint32_t crc = static_cast<std::uint32_t>(
        ::crc32(0L, payload.data(), static_cast<uInt>(payload.size())));
    put_u32le(bytes, crc);
    write_file_atomic(path, bytes);
}

WeightStore load_weights(const std::string& path) {
    const std::vector<unsigned char> bytes = read_file(path);
    if (bytes.size() < 4 + 1 + 4 + 4) {
        throw IntegrityError("weight file '" + path + "' is truncated (" +
                             std::to_string(bytes.size()) + " bytes)");
    }
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw IntegrityError("weight file '" + path + "' has bad magic");
    }
    if (bytes[4] != kVersion) {
        throw CompatibilityError("weight file '" + path + "' has unsupported version " +
                                 std::to_string(static_cast<int>(bytes[4])) + " (expected " +
                                 std::to_string(static_cast<int>(kVersion)) + ")");
    }
    const std::uint32_t header_len = get_u32le(bytes.data() + 5);
    const std::size_t header_start = 9;
    if (bytes.size() < header_start + header_len + 4) {
        throw IntegrityError("weight file '" + path + "' is truncated inside the header");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + header_start,
                                       bytes.begin() + header_start + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError("weight file '" + path + "' has a corrupt header: " + e.what());
    }

    WeightStore ws;
    try {
        ws.config = ModelConfig::from_json(header.at("config"));
        ws.seed = header.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError("weight file '" + path + "' header is missing fields: " + e.what());
    }

    const std::size_t payload_start = header_start + header_len;
    const std::size_t payload_len = bytes.size() - payload_start - 4;
    const unsigned char* payload = bytes.data() + payload_start;
    const std::uint32_t crc_stored = get_u32le(bytes.data() + bytes.size() - 4);
    const std::uint32_t crc = static_cast<std::uint32_t>(
        ::crc32(0L, payload, static_cast<uInt>(payload_len)));
    if (crc != crc_stored) {
        throw IntegrityError("weight file '" + path + "' failed its payload CRC check");
    }

    if (!header.contains("manifest") || !header["manifest"].is_array()) {
        throw IntegrityError("weight file '" + path + "' header has no manifest");
    }
    for (const auto& entry : header["manifest"]) {
        std::string name;
        Shape shape;
        std::uint64_t offset = 0, len = 0;
        try {
            name = entry.at("name").get<std::string>();
            const auto& sh = entry.at("shape");
            shape = Shape{sh.at(0).get<std::int64_t>(), sh.at(1).get<std::int64_t>(),
                          sh.at(2).get<std::int64_t>(), sh.at(3).get<std::int64_t>()};
            offset = entry.at("offset").get<std::uint64_t>();
            len = entry.at("len").get<std::uint64_t>();
        } catch (const nlohmann::json::exception& e) {
            throw IntegrityError("weight file '" + path + "' has a malformed manifest entry: " +
                                 e.what());
        }
        if (static_cast<std::int64_t>(len) != shape.numel()) {
            throw IntegrityError("weight file '" + path + "': tensor '" + name +
                                 "' length does not match its shape");
        }
        if (offset + len * 4 > payload_len) {
            throw IntegrityError("weight file '" + path + "': tensor '" + name +
                                 "' extends past the payload");
        }
        std::vector<float> data(len);
        for (std::uint64_t i = 0; i < len; ++i) {
            const std::uint32_t bits = get_u32le(payload + offset + i * 4);
            float v;
            std::memcpy(&v, &bits, 4);
            data[i] = v;
        }
        ws.params.add(name, Tensor::from_data(shape, std::move(data)));
    }
    return ws;
}

} // namespace lkmn
