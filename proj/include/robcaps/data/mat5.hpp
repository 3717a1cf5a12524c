#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "robcaps/core/tensor.hpp"
#include "robcaps/data/gzip.hpp"

namespace robcaps {

// ---------------------------------------------------------------------------
// Minimal MATLAB level-5 (.mat) reader, covering what the published affNIST
// containers use: little-endian files, compressed top-level elements, numeric
// 2-D arrays, and 1x1 structs of numeric arrays. Everything else errors out
// loudly rather than guessing.
// ---------------------------------------------------------------------------

namespace mat5 {

enum MiType : uint32_t {
    miINT8 = 1, miUINT8 = 2, miINT16 = 3, miUINT16 = 4, miINT32 = 5, miUINT32 = 6,
    miSINGLE = 7, miDOUBLE = 9, miINT64 = 12, miUINT64 = 13, miMATRIX = 14,
    miCOMPRESSED = 15, miUTF8 = 16,
};

enum MxClass : uint32_t { mxCELL = 1, mxSTRUCT = 2, mxCHAR = 4, mxDOUBLE = 6, mxSINGLE = 7,
                          mxINT8 = 8, mxUINT8 = 9, mxINT16 = 10, mxUINT16 = 11, mxINT32 = 12, mxUINT32 = 13 };

struct Array {
    std::string name;
    uint32_t cls = 0;
    Shape dims;                // column-major data order
    uint32_t data_type = 0;    // mi code of the real part (numeric arrays)
    std::vector<uint8_t> raw;  // real-part payload bytes
    std::vector<std::pair<std::string, Array>> fields; // struct contents

    int64_t numel() const { return shape_numel(dims); }

    const Array& field(const std::string& n) const {
        for (const auto& [fn, a] : fields)
            if (fn == n) return a;
        throw std::runtime_error("mat5: struct has no field '" + n + "'");
    }

    /// Element i of the real part (column-major order), widened to double.
    double at(int64_t i) const {
        switch (data_type) {
            case miINT8: return static_cast<int8_t>(raw[static_cast<size_t>(i)]);
            case miUINT8: return raw[static_cast<size_t>(i)];
            case miINT16: { int16_t v; std::memcpy(&v, raw.data() + i * 2, 2); return v; }
            case miUINT16: { uint16_t v; std::memcpy(&v, raw.data() + i * 2, 2); return v; }
            case miINT32: { int32_t v; std::memcpy(&v, raw.data() + i * 4, 4); return v; }
            case miUINT32: { uint32_t v; std::memcpy(&v, raw.data() + i * 4, 4); return v; }
            case miSINGLE: { float v; std::memcpy(&v, raw.data() + i * 4, 4); return v; }
            case miDOUBLE: { double v; std::memcpy(&v, raw.data() + i * 8, 8); return v; }
            case miINT64: { int64_t v; std::memcpy(&v, raw.data() + i * 8, 8); return static_cast<double>(v); }
            case miUINT64: { uint64_t v; std::memcpy(&v, raw.data() + i * 8, 8); return static_cast<double>(v); }
        }
        throw std::runtime_error("mat5: array holds no numeric data");
    }
};

namespace detail {

struct Cursor {
    const uint8_t* p;
    size_t left;

    void need(size_t n) const {
        if (left < n) throw std::runtime_error("mat5: truncated element");
    }
    uint32_t u32() {
        need(4);
        uint32_t v;
        std::memcpy(&v, p, 4);
        p += 4; left -= 4;
        return v;
    }
    void skip(size_t n) {
        need(n);
        p += n; left -= n;
    }
};

struct Element {
    uint32_t type;
    const uint8_t* data;
    size_t size;
};

/// Reads one tagged element (handling the packed small-element form) and
/// advances the cursor past its 8-byte-aligned payload.
inline Element next_element(Cursor& c) {
    c.need(8);
    uint32_t first;
    std::memcpy(&first, c.p, 4);
    Element e;
    if (first >> 16) { // small element: type and size share the first word
        e.type = first & 0xffff;
        e.size = first >> 16;
        if (e.size > 4) throw std::runtime_error("mat5: bad small element");
        e.data = c.p + 4;
        c.skip(8);
        return e;
    }
    e.type = c.u32();
    e.size = c.u32();
    c.need(e.size);
    e.data = c.p;
    size_t padded = (e.size + 7) & ~size_t(7);
    c.skip(padded <= c.left ? padded : e.size); // final element may omit padding
    return e;
}

inline size_t mi_size(uint32_t t) {
    switch (t) {
        case miINT8: case miUINT8: case miUTF8: return 1;
        case miINT16: case miUINT16: return 2;
        case miINT32: case miUINT32: case miSINGLE: return 4;
        case miDOUBLE: case miINT64: case miUINT64: return 8;
    }
    throw std::runtime_error("mat5: unsupported data type " + std::to_string(t));
}

inline Array parse_matrix(const uint8_t* data, size_t size);

inline Array parse_matrix_element(const Element& e) {
    if (e.type != miMATRIX) throw std::runtime_error("mat5: expected a matrix element");
    return parse_matrix(e.data, e.size);
}

inline Array parse_matrix(const uint8_t* data, size_t size) {
    Cursor c{data, size};
    Array a;

    Element flags = next_element(c);
    if (flags.type != miUINT32 || flags.size < 8) throw std::runtime_error("mat5: bad array flags");
    uint32_t flagword;
    std::memcpy(&flagword, flags.data, 4);
    a.cls = flagword & 0xff;

    Element dims = next_element(c);
    if (dims.type != miINT32) throw std::runtime_error("mat5: bad dimensions element");
    for (size_t k = 0; k + 4 <= dims.size; k += 4) {
        int32_t d;
        std::memcpy(&d, dims.data + k, 4);
        a.dims.push_back(d);
    }

    Element name = next_element(c);
    a.name.assign(reinterpret_cast<const char*>(name.data), name.size);

    if (a.cls == mxSTRUCT) {
        Element fnl = next_element(c);
        int32_t field_len;
        std::memcpy(&field_len, fnl.data, 4);
        Element fnames = next_element(c);
        size_t nfields = field_len ? fnames.size / static_cast<size_t>(field_len) : 0;
        if (a.numel() != 1) throw std::runtime_error("mat5: only 1x1 structs are supported");
        for (size_t f = 0; f < nfields; ++f) {
            const char* s = reinterpret_cast<const char*>(fnames.data) + f * static_cast<size_t>(field_len);
            std::string fname(s, strnlen(s, static_cast<size_t>(field_len)));
            Array fa = parse_matrix_element(next_element(c));
            fa.name = fname;
            a.fields.emplace_back(std::move(fname), std::move(fa));
        }
        return a;
    }

    if (a.cls == mxCELL) throw std::runtime_error("mat5: cell arrays are not supported");

    Element real = next_element(c);
    a.data_type = real.type;
    size_t esz = mi_size(real.type);
    if (real.size % esz) throw std::runtime_error("mat5: real part size mismatch");
    if (static_cast<int64_t>(real.size / esz) != a.numel())
        throw std::runtime_error("mat5: element count mismatch in '" + a.name + "'");
    a.raw.assign(real.data, real.data + real.size);
    return a;
}

} // namespace detail

/// All top-level variables of a .mat byte stream (version 5 format).
inline std::vector<Array> parse(const std::vector<uint8_t>& file) {
    if (file.size() < 128) throw std::runtime_error("mat5: file too small");
    uint16_t version, endian;
    std::memcpy(&version, file.data() + 124, 2);
    std::memcpy(&endian, file.data() + 126, 2);
    if (endian != 0x4d49) // 'MI' read back on a little-endian host
        throw std::runtime_error("mat5: big-endian files are not supported");
    if (version != 0x0100) throw std::runtime_error("mat5: not a level-5 file");

    std::vector<Array> vars;
    detail::Cursor c{file.data() + 128, file.size() - 128};
    while (c.left >= 8) {
        detail::Element e = detail::next_element(c);
        if (e.type == miCOMPRESSED) {
            std::vector<uint8_t> blob = inflate_bytes(e.data, e.size);
            detail::Cursor inner{blob.data(), blob.size()};
            vars.push_back(detail::parse_matrix_element(detail::next_element(inner)));
        } else if (e.type == miMATRIX) {
            vars.push_back(detail::parse_matrix(e.data, e.size));
        } else {
            throw std::runtime_error("mat5: unexpected top-level element type " + std::to_string(e.type));
        }
    }
    return vars;
}

inline const Array& find(const std::vector<Array>& vars, const std::string& name) {
    for (const auto& v : vars)
        if (v.name == name) return v;
    throw std::runtime_error("mat5: no variable named '" + name + "'");
}

} // namespace mat5
} // namespace robcaps
