#pragma once

#include <cstdint>
#include <random>

namespace pdbsde {

// Streams are keyed by role so regression, outer and inner samples never share
// randomness even when path and step indices coincide.
enum class StreamRole : std::uint64_t {
    outer = 0x6f75746572ULL,
    inner = 0x696e6e6572ULL,
    regression = 0x7265677265ULL,
    oracle = 0x6f7261636cULL,
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, StreamRole role, std::uint64_t path,
                                 std::uint64_t step) {
    std::uint64_t s = seed;
    std::uint64_t h = splitmix64(s);
    for (std::uint64_t key : {static_cast<std::uint64_t>(role), path, step}) {
        s = h ^ key;
        h = splitmix64(s);
    }
    return h;
}

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t seed, StreamRole role, std::uint64_t path,
                          std::uint64_t step = 0) {
    return Engine(derive_seed(seed, role, path, step));
}

}  // namespace pdbsde
