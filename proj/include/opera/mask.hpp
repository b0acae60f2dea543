#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace opera {

/// Lower-triangular T x T binary mask: frame i may attend to frame j iff j <= i.
class CausalMask {
public:
    explicit CausalMask(std::size_t frames) : frames_(frames) {
        if (frames == 0) throw std::invalid_argument("CausalMask: frame count must be at least 1");
        bits_.assign(frames * frames, 0);
        for (std::size_t i = 0; i < frames; ++i)
            for (std::size_t j = 0; j <= i; ++j) bits_[i * frames + j] = 1;
    }

    std::size_t size() const { return frames_; }
    bool allows(std::size_t i, std::size_t j) const { return bits_[i * frames_ + j] != 0; }
    std::span<const std::uint8_t> bits() const { return bits_; }

    // Number of rows in which column j is unmasked: T - j.
    std::vector<double> column_counts() const {
        std::vector<double> counts(frames_);
        for (std::size_t j = 0; j < frames_; ++j) counts[j] = static_cast<double>(frames_ - j);
        return counts;
    }

private:
    std::size_t frames_;
    std::vector<std::uint8_t> bits_;
};

}  // namespace opera
