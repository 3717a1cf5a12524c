#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "robcaps/core/io.hpp"

namespace robcaps {

/// Inflate a gzip or raw zlib stream. windowBits 15+32 auto-detects the
/// wrapper, so .gz dataset files and zlib-wrapped blocks go through the same
/// path.
inline std::vector<uint8_t> inflate_bytes(const uint8_t* data, size_t size) {
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 32) != Z_OK) throw std::runtime_error("inflate: init failed");
    std::vector<uint8_t> out;
    std::vector<uint8_t> buf(1 << 16);
    zs.next_in = const_cast<Bytef*>(data);
    zs.avail_in = static_cast<uInt>(size);
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = buf.data();
        zs.avail_out = static_cast<uInt>(buf.size());
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw std::runtime_error("inflate: corrupt stream (code " + std::to_string(rc) + ")");
        }
        out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
        if (rc != Z_STREAM_END && zs.avail_in == 0 && zs.avail_out != 0) {
            inflateEnd(&zs);
            throw std::runtime_error("inflate: truncated stream");
        }
    }
    inflateEnd(&zs);
    return out;
}

inline std::vector<uint8_t> inflate_bytes(const std::vector<uint8_t>& data) {
    return inflate_bytes(data.data(), data.size());
}

/// Read a file, inflating it when the name ends in .gz (or the content starts
/// with the gzip magic, covering files fetched without an extension).
inline std::vector<uint8_t> read_maybe_gz(const std::string& path) {
    auto raw = read_file_bytes(path);
    bool gz = raw.size() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b;
    if (gz || (path.size() > 3 && path.substr(path.size() - 3) == ".gz")) return inflate_bytes(raw);
    return raw;
}

} // namespace robcaps
