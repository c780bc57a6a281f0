#pragma once

// Little-endian binary helpers shared by the file formats.

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "gcl/errors.hpp"

namespace gcl::binary {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
        std::memcpy(&v, b, sizeof(T));
    }
    return v;
}

template <typename T>
void put(std::ostream& out, T v) {
    v = to_little(v);
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
public:
    Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

    template <typename T>
    T get(const std::string& what) {
        T v{};
        in_.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (!in_) fail("truncated while reading " + what);
        return to_little(v);
    }

    std::string bytes(std::size_t n, const std::string& what) {
        std::string s(n, '\0');
        in_.read(s.data(), static_cast<std::streamsize>(n));
        if (!in_) fail("truncated while reading " + what);
        return s;
    }

    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

    [[noreturn]] void fail(const std::string& msg) const { throw FormatError(path_ + ": " + msg); }

private:
    std::istream& in_;
    std::string path_;
};

} // namespace gcl::binary
