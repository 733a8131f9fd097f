#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace latentscope {

/// 64-bit FNV-1a, used for parameter fingerprints and config hashes.
class Fnv1a {
public:
    void add_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
    }
    void add(std::string_view s) { add_bytes(s.data(), s.size()); }
    void add(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            const auto byte = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
            add_bytes(&byte, 1);
        }
    }
    void add(double v) { add(std::bit_cast<std::uint64_t>(v)); }
    void add(std::span<const double> values) {
        for (double v : values) {
            add(v);
        }
    }
    [[nodiscard]] std::uint64_t value() const { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t v);

}  // namespace latentscope
