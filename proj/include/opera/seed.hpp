#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace opera {

// Deterministic child seed for (base, stream...) via std::seed_seq.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint32_t> streams) {
    std::vector<std::uint32_t> material{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32)};
    material.insert(material.end(), streams.begin(), streams.end());
    std::seed_seq seq(material.begin(), material.end());
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

// Stream tags.
enum class SeedStream : std::uint32_t { video = 1, backbone = 2, folds = 3, init = 4, shuffle = 5 };

inline std::uint32_t tag(SeedStream s) { return static_cast<std::uint32_t>(s); }

}  // namespace opera
