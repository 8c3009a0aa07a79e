#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "mors/tensor.hpp"

namespace mors::io {

// MORS1 binary tensor container:
//   magic 4D 4F 52 53 31 00, u8 dtype (1=f32, 2=f64), u8 rank,
//   rank x u64 little-endian dims, then raw little-endian scalars in
//   channels-last row-major order.
inline constexpr unsigned char kMagic[6] = {0x4D, 0x4F, 0x52, 0x53, 0x31, 0x00};

enum class Dtype : std::uint8_t { f32 = 1, f64 = 2 };

struct Mors1Tensor {
    Dtype dtype = Dtype::f32;
    std::vector<std::uint64_t> dims;
    std::vector<unsigned char> bytes;

    std::uint64_t numel() const {
        std::uint64_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }

    template <typename T>
    std::vector<T> values() const {
        std::vector<T> out(numel());
        if (dtype == Dtype::f32) {
            for (std::uint64_t i = 0; i < out.size(); ++i) {
                float v;
                std::memcpy(&v, bytes.data() + i * 4, 4);
                out[i] = static_cast<T>(v);
            }
        } else {
            for (std::uint64_t i = 0; i < out.size(); ++i) {
                double v;
                std::memcpy(&v, bytes.data() + i * 8, 8);
                out[i] = static_cast<T>(v);
            }
        }
        return out;
    }
};

template <typename T>
constexpr Dtype dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                  "MORS1 stores f32 or f64");
    return std::is_same_v<T, float> ? Dtype::f32 : Dtype::f64;
}

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline void put_u16(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

inline std::uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace detail

template <typename T>
void write_mors1(std::ostream& os, const std::vector<std::uint64_t>& dims, const T* data) {
    os.write(reinterpret_cast<const char*>(kMagic), 6);
    const Dtype dt = dtype_of<T>();
    os.put(static_cast<char>(dt));
    os.put(static_cast<char>(dims.size()));
    std::uint64_t n = 1;
    for (auto d : dims) {
        detail::put_u64(os, d);
        n *= d;
    }
    // assumes a little-endian host; dims and scalars share the convention
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
    if (!os) throw DataError("MORS1 write failed");
}

inline Mors1Tensor read_mors1(std::istream& is) {
    unsigned char magic[6];
    is.read(reinterpret_cast<char*>(magic), 6);
    if (!is || std::memcmp(magic, kMagic, 6) != 0) throw DataError("MORS1: bad magic");
    Mors1Tensor t;
    const int dt = is.get();
    if (dt != 1 && dt != 2) throw DataError("MORS1: unknown dtype code " + std::to_string(dt));
    t.dtype = static_cast<Dtype>(dt);
    const int rank = is.get();
    if (rank < 0 || rank > 8) throw DataError("MORS1: bad rank");
    t.dims.resize(static_cast<std::size_t>(rank));
    std::uint64_t n = 1;
    for (auto& d : t.dims) {
        d = detail::get_u64(is);
        n *= d;
    }
    const std::size_t scalar = t.dtype == Dtype::f32 ? 4 : 8;
    t.bytes.resize(n * scalar);
    is.read(reinterpret_cast<char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
    if (!is) throw DataError("MORS1: truncated payload");
    return t;
}

template <typename T>
void write_mors1_file(const std::string& path, const std::vector<std::uint64_t>& dims, const T* data) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for write: " + path);
    write_mors1(os, dims, data);
}

inline Mors1Tensor read_mors1_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    return read_mors1(is);
}

// Image convenience: rank-3 [H,W,C] -> Tensor4 [1,H,W,C].
template <typename T>
Tensor4<T> read_image(const std::string& path) {
    Mors1Tensor t = read_mors1_file(path);
    if (t.dims.size() != 3) throw DataError("image " + path + ": expected rank 3");
    Shape4 s{1, t.dims[0], t.dims[1], t.dims[2]};
    return Tensor4<T>::from(s, t.values<T>());
}

// Named-tensor archive (checkpoints, gate dumps):
//   u32 count, then per entry [u16 name length, UTF-8 name, MORS1 payload].
struct ArchiveEntry {
    std::string name;
    Mors1Tensor tensor;
};

template <typename T>
void append_entry(std::ostream& os, const std::string& name, const std::vector<std::uint64_t>& dims,
                  const T* data) {
    detail::put_u16(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_mors1(os, dims, data);
}

inline std::vector<ArchiveEntry> read_archive(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    const std::uint32_t count = detail::get_u32(is);
    std::vector<ArchiveEntry> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        ArchiveEntry e;
        const std::uint16_t len = detail::get_u16(is);
        e.name.resize(len);
        is.read(e.name.data(), len);
        if (!is) throw DataError("archive: truncated entry name");
        e.tensor = read_mors1(is);
        out.push_back(std::move(e));
    }
    return out;
}

class ArchiveWriter {
public:
    explicit ArchiveWriter(const std::string& path) : path_(path), os_(path, std::ios::binary) {
        if (!os_) throw DataError("cannot open for write: " + path);
        detail::put_u32(os_, 0);  // patched on close
    }

    template <typename T>
    void add(const std::string& name, const std::vector<std::uint64_t>& dims, const T* data) {
        append_entry(os_, name, dims, data);
        ++count_;
    }

    void close() {
        os_.seekp(0);
        detail::put_u32(os_, count_);
        os_.close();
        if (os_.fail()) throw DataError("archive write failed: " + path_);
    }

private:
    std::string path_;
    std::ofstream os_;
    std::uint32_t count_ = 0;
};

}  // namespace mors::io
