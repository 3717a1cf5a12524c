#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "robcaps/core/tensor.hpp"

namespace robcaps {

// ---------------------------------------------------------------------------
// Named-array binary container (".rcat"): the one on-disk array format used by
// dataset containers, checkpoints and adversarial batches. Little-endian,
// fixed layout, so identical content always produces identical bytes.
// ---------------------------------------------------------------------------

enum class Dtype : uint8_t { F32 = 0, F64 = 1, U8 = 2, I32 = 3, I64 = 4 };

inline size_t dtype_size(Dtype d) {
    switch (d) {
        case Dtype::F32: return 4;
        case Dtype::F64: return 8;
        case Dtype::U8: return 1;
        case Dtype::I32: return 4;
        case Dtype::I64: return 8;
    }
    throw std::invalid_argument("bad dtype");
}

template <class T> struct DtypeOf;
template <> struct DtypeOf<float> { static constexpr Dtype value = Dtype::F32; };
template <> struct DtypeOf<double> { static constexpr Dtype value = Dtype::F64; };
template <> struct DtypeOf<uint8_t> { static constexpr Dtype value = Dtype::U8; };
template <> struct DtypeOf<int32_t> { static constexpr Dtype value = Dtype::I32; };
template <> struct DtypeOf<int64_t> { static constexpr Dtype value = Dtype::I64; };

struct RawArray {
    Dtype dtype;
    Shape shape;
    std::vector<uint8_t> bytes;

    int64_t numel() const { return shape_numel(shape); }

    template <class T>
    static RawArray from(const Tensor<T>& t) {
        RawArray a;
        a.dtype = DtypeOf<T>::value;
        a.shape = t.shape();
        a.bytes.resize(static_cast<size_t>(t.numel()) * sizeof(T));
        std::memcpy(a.bytes.data(), t.data(), a.bytes.size());
        return a;
    }

    template <class T>
    Tensor<T> to() const {
        if (dtype != DtypeOf<T>::value) throw std::runtime_error("array container: dtype mismatch on read");
        Tensor<T> t(shape);
        std::memcpy(t.data(), bytes.data(), bytes.size());
        return t;
    }

    /// Read as T, converting element-wise if the stored dtype differs.
    template <class T>
    Tensor<T> to_converted() const {
        switch (dtype) {
            case Dtype::F32: return convert_from<float, T>();
            case Dtype::F64: return convert_from<double, T>();
            case Dtype::U8: return convert_from<uint8_t, T>();
            case Dtype::I32: return convert_from<int32_t, T>();
            case Dtype::I64: return convert_from<int64_t, T>();
        }
        throw std::runtime_error("array container: bad dtype");
    }

private:
    template <class S, class T>
    Tensor<T> convert_from() const {
        Tensor<T> t(shape);
        const S* src = reinterpret_cast<const S*>(bytes.data());
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(src[i]);
        return t;
    }
};

/// Ordered map of named arrays; insertion order is the file order.
class ArrayContainer {
public:
    template <class T>
    void put(const std::string& name, const Tensor<T>& t) {
        put_raw(name, RawArray::from(t));
    }
    void put_raw(const std::string& name, RawArray a) {
        auto it = index_.find(name);
        if (it == index_.end()) {
            index_[name] = entries_.size();
            entries_.push_back({name, std::move(a)});
        } else {
            entries_[it->second].second = std::move(a);
        }
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }
    const RawArray& raw(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::runtime_error("array container: missing entry '" + name + "'");
        return entries_[it->second].second;
    }
    template <class T>
    Tensor<T> get(const std::string& name) const { return raw(name).template to<T>(); }

    const std::vector<std::pair<std::string, RawArray>>& entries() const { return entries_; }

    std::vector<uint8_t> serialize() const;
    static ArrayContainer deserialize(const std::vector<uint8_t>& buf);

    void save(const std::string& path) const;
    static ArrayContainer load(const std::string& path);

private:
    std::vector<std::pair<std::string, RawArray>> entries_;
    std::map<std::string, size_t> index_;
};

namespace detail {
inline void put_u32(std::vector<uint8_t>& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
inline void put_i64(std::vector<uint8_t>& b, int64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>(static_cast<uint64_t>(v) >> (8 * i)));
}
struct Reader {
    const uint8_t* p;
    size_t left;
    void need(size_t n) const {
        if (left < n) throw std::runtime_error("array container: truncated file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
        p += 4; left -= 4;
        return v;
    }
    int64_t i64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
        p += 8; left -= 8;
        return static_cast<int64_t>(v);
    }
    void bytes(void* dst, size_t n) {
        need(n);
        std::memcpy(dst, p, n);
        p += n; left -= n;
    }
};
} // namespace detail

inline std::vector<uint8_t> ArrayContainer::serialize() const {
    std::vector<uint8_t> b;
    b.insert(b.end(), {'R', 'C', 'A', 'T'});
    detail::put_u32(b, 1u); // format version
    detail::put_u32(b, static_cast<uint32_t>(entries_.size()));
    for (const auto& [name, a] : entries_) {
        detail::put_u32(b, static_cast<uint32_t>(name.size()));
        b.insert(b.end(), name.begin(), name.end());
        b.push_back(static_cast<uint8_t>(a.dtype));
        detail::put_u32(b, static_cast<uint32_t>(a.shape.size()));
        for (int64_t d : a.shape) detail::put_i64(b, d);
        b.insert(b.end(), a.bytes.begin(), a.bytes.end());
    }
    return b;
}

inline ArrayContainer ArrayContainer::deserialize(const std::vector<uint8_t>& buf) {
    detail::Reader r{buf.data(), buf.size()};
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "RCAT", 4) != 0) throw std::runtime_error("array container: bad magic");
    uint32_t version = r.u32();
    if (version != 1) throw std::runtime_error("array container: unsupported version");
    uint32_t count = r.u32();
    ArrayContainer c;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = r.u32();
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len);
        RawArray a;
        uint8_t dt;
        r.bytes(&dt, 1);
        if (dt > 4) throw std::runtime_error("array container: bad dtype tag");
        a.dtype = static_cast<Dtype>(dt);
        uint32_t rank = r.u32();
        a.shape.resize(rank);
        for (uint32_t k = 0; k < rank; ++k) a.shape[k] = r.i64();
        size_t payload = static_cast<size_t>(a.numel()) * dtype_size(a.dtype);
        a.bytes.resize(payload);
        r.bytes(a.bytes.data(), payload);
        c.put_raw(name, std::move(a));
    }
    return c;
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    in.seekg(0, std::ios::end);
    std::vector<uint8_t> buf(static_cast<size_t>(in.tellg()));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw std::runtime_error("short read: " + path);
    return buf;
}

/// Write via temp file + rename so readers never observe a partial file.
inline void write_file_bytes_atomic(const std::string& path, const void* data, size_t size) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write file: " + tmp.string());
        out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(size));
        if (!out) throw std::runtime_error("short write: " + tmp.string());
    }
    fs::rename(tmp, target);
}

inline void write_text_file_atomic(const std::string& path, const std::string& text) {
    write_file_bytes_atomic(path, text.data(), text.size());
}

inline std::string read_text_file(const std::string& path) {
    auto b = read_file_bytes(path);
    return std::string(b.begin(), b.end());
}

inline void ArrayContainer::save(const std::string& path) const {
    auto b = serialize();
    write_file_bytes_atomic(path, b.data(), b.size());
}

inline ArrayContainer ArrayContainer::load(const std::string& path) {
    return deserialize(read_file_bytes(path));
}

// ---------------------------------------------------------------------------
// FNV-1a content hash, used for provenance records (not security).
// ---------------------------------------------------------------------------

inline uint64_t fnv1a(const void* data, size_t size, uint64_t h = 0xcbf29ce484222325ull) {
    const uint8_t* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hash_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

inline std::string file_hash_hex(const std::string& path) {
    auto b = read_file_bytes(path);
    return hash_hex(fnv1a(b.data(), b.size()));
}

template <class T>
uint64_t tensor_hash(const Tensor<T>& t, uint64_t h = 0xcbf29ce484222325ull) {
    h = fnv1a(t.shape().data(), t.shape().size() * sizeof(int64_t), h);
    return fnv1a(t.data(), static_cast<size_t>(t.numel()) * sizeof(T), h);
}

} // namespace robcaps
