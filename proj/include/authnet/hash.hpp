#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace authnet {

// Streaming FNV-1a (64-bit). Used for file integrity fields and for
// "was this model mutated?" assertions.
class Fnv1a {
public:
    void update(const void* data, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= b[i];
            h_ *= 1099511628211ull;
        }
    }
    std::uint64_t digest() const { return h_; }

private:
    std::uint64_t h_ = 14695981039346656037ull;
};

std::string hex64(std::uint64_t v);

} // namespace authnet
