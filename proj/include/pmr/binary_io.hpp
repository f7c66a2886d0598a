#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

#include "pmr/errors.hpp"

namespace pmr::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swapping");

inline void write_u32(std::ostream& out, std::uint32_t value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

inline void write_f32(std::ostream& out, float value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

inline std::uint32_t read_u32(std::istream& in) {
    std::uint32_t value = 0;
    if (!in.read(reinterpret_cast<char*>(&value), sizeof value)) {
        fail(ErrorKind::DecodeError, "truncated header");
    }
    return value;
}

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
    char buf[4] = {};
    if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
        fail(ErrorKind::DecodeError, std::string("bad magic, expected ") + magic);
    }
}

}  // namespace pmr::io
