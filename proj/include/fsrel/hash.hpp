#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string_view>

namespace fsrel {

// 64-bit FNV-1a; used for content hashes, config hashes and checkpoint checksums.
class Fnv1a {
public:
    void update(std::span<const unsigned char> bytes) {
        for (unsigned char b : bytes) {
            state_ ^= b;
            state_ *= kPrime;
        }
    }
    void update(std::string_view s) {
        update(std::span(reinterpret_cast<const unsigned char*>(s.data()), s.size()));
    }
    template <class T>
    void update_pod(const T& v) {
        update(std::span(reinterpret_cast<const unsigned char*>(&v), sizeof(T)));
    }
    std::uint64_t digest() const { return state_; }

private:
    static constexpr std::uint64_t kOffset = 14695981039346656037ull;
    static constexpr std::uint64_t kPrime = 1099511628211ull;
    std::uint64_t state_ = kOffset;
};

inline std::uint64_t fnv1a(std::string_view s) {
    Fnv1a h;
    h.update(s);
    return h.digest();
}

// Order-sensitive mix of several 64-bit values into one seed.
inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
    Fnv1a h;
    for (auto p : parts) h.update_pod(p);
    return h.digest();
}

}  // namespace fsrel
