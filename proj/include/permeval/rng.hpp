#pragma once

#include <cstdint>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

// Deterministic randomness for the whole library. Everything that needs a
// random draw goes through SplitMix64 plus the derive_seed() stream splitter,
// never through <random> distributions or std::shuffle — those are
// implementation-defined across standard libraries and would break the
// byte-identical-regeneration guarantees of dataset generation and fallback
// picks. The generator identity below is recorded in manifests so downstream
// consumers can tell which stream produced a file.

namespace permeval {

inline constexpr const char* kRngVersion = "splitmix64-v1";

// FNV-1a over bytes, used as seed-folding material (not for general hashing).
inline std::uint64_t fnv1a(std::string_view bytes,
                           std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("SplitMix64::below: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next();
        while (v >= limit) v = next();
        return v % n;
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Fisher-Yates; deliberately not std::shuffle (see header comment).
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::uint64_t state_;
};

namespace detail {

inline std::uint64_t seed_fold(std::uint64_t h, std::string_view part) {
    h = fnv1a(part, h);
    // Unit separator so ("ab","c") and ("a","bc") fold differently.
    return fnv1a(std::string_view("\x1f", 1), h);
}

inline std::uint64_t seed_fold(std::uint64_t h, std::uint64_t part) {
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((part >> (8 * i)) & 0xff);
    return seed_fold(h, std::string_view(bytes, 8));
}

} // namespace detail

// Splits one master seed into independent labeled streams, e.g.
//   derive_seed(master, "fallback", question_id, permutation_id)
// Accepts string-like and unsigned-integer parts.
template <typename... Parts>
std::uint64_t derive_seed(std::uint64_t master, Parts&&... parts) {
    std::uint64_t h = detail::seed_fold(0xcbf29ce484222325ull, master);
    ((h = detail::seed_fold(h, std::forward<Parts>(parts))), ...);
    return h;
}

} // namespace permeval
