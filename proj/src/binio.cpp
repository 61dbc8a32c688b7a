#include "calm/binio.hpp"

#include <cstring>

namespace calm {

namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i)
        buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffU);
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (is.gcount() != static_cast<std::streamsize>(sizeof(T)))
        fail(ErrCode::io, "unexpected end of file");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { put_le(os, v); }

void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_le(os, bits);
}

void write_f64_array(std::ostream& os, const std::vector<double>& v) {
    for (double x : v) write_f64(os, x);
}

void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

std::uint32_t read_u32(std::istream& is) { return get_le<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return get_le<std::uint64_t>(is); }

double read_f64(std::istream& is) {
    const std::uint64_t bits = get_le<std::uint64_t>(is);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

void read_f64_array(std::istream& is, std::vector<double>& v, std::size_t n) {
    v.resize(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = read_f64(is);
}

void read_bytes(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (is.gcount() != static_cast<std::streamsize>(n))
        fail(ErrCode::io, "unexpected end of file");
}

std::uint64_t fnv1a64(const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrCode::io, "cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 14];
    while (is) {
        is.read(buf, sizeof(buf));
        const std::streamsize got = is.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

std::string fingerprint_hex(std::uint64_t fp) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[fp & 0xf];
        fp >>= 4;
    }
    return s;
}

}  // namespace calm
