#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dto/data.hpp"

namespace dto {

/// Block-irregular spatial attention mask for one time step: entry (i, j) is
/// set iff i and j sit in the same block, both are present and their distance
/// is at most `threshold`. The diagonal is always set. Row-major N x N.
std::vector<std::uint8_t> build_spatial_mask(std::span<const Vec2> positions,
                                             std::span<const std::uint8_t> present,
                                             std::span<const Block> blocks, double threshold);

}  // namespace dto
