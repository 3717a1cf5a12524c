#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "robcaps/core/tensor.hpp"

namespace robcaps {

/// IDX array file (the MNIST distribution format): big-endian magic
/// 0x00 0x00 <type> <rank>, then rank big-endian u32 dims, then row-major
/// payload. Only the u8 payload type (0x08) is needed here.
struct IdxArray {
    Shape dims;
    std::vector<uint8_t> bytes;
};

inline IdxArray parse_idx(const std::vector<uint8_t>& b) {
    auto be32 = [&](size_t off) -> uint32_t {
        return (static_cast<uint32_t>(b[off]) << 24) | (static_cast<uint32_t>(b[off + 1]) << 16) |
               (static_cast<uint32_t>(b[off + 2]) << 8) | static_cast<uint32_t>(b[off + 3]);
    };
    if (b.size() < 4 || b[0] != 0 || b[1] != 0) throw std::runtime_error("idx: bad magic");
    if (b[2] != 0x08) throw std::runtime_error("idx: only u8 payloads are supported");
    size_t rank = b[3];
    if (rank == 0 || rank > 4) throw std::runtime_error("idx: unsupported rank");
    if (b.size() < 4 + 4 * rank) throw std::runtime_error("idx: truncated header");

    IdxArray a;
    int64_t n = 1;
    for (size_t k = 0; k < rank; ++k) {
        int64_t d = be32(4 + 4 * k);
        a.dims.push_back(d);
        n *= d;
    }
    size_t off = 4 + 4 * rank;
    if (b.size() - off != static_cast<size_t>(n)) throw std::runtime_error("idx: payload size mismatch");
    a.bytes.assign(b.begin() + static_cast<std::ptrdiff_t>(off), b.end());
    return a;
}

} // namespace robcaps
