#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace nf {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Fan a master seed out into independent reproducible streams keyed by a
/// tag string and an index. Same (master, tag, index) always yields the
/// same seed; distinct tags or indices give uncorrelated streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::uint64_t index = 0) {
    std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a over the tag
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return splitmix64(splitmix64(master ^ h) ^ index);
}

} // namespace nf
