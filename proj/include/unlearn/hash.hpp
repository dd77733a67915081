#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace unlearn {

// FNV-1a, 64-bit. Used for content-addressed stage resume and file
// fingerprints in dataset headers. Not cryptographic.
inline uint64_t fnv1a64(std::string_view data, uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64_u64(uint64_t value, uint64_t h = 0xcbf29ce484222325ull) {
    for (int i = 0; i < 8; i++) {
        h ^= (value >> (8 * i)) & 0xff;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; i--) {
        out[i] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

}  // namespace unlearn
