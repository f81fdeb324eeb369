#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "tags/grid.hpp"

namespace tags {

/// Run-length encoded binary mask. `counts` alternates runs of 0 and 1 over
/// the row-major flattening (z-major for volumes), starting with a run of
/// zeros that may be empty.
///
/// Wire format: {"shape": [d, h, w], "counts": [c0, c1, ...]}.
struct Rle {
    std::vector<int> shape;
    std::vector<std::uint64_t> counts;

    std::size_t size() const;
    bool operator==(const Rle&) const = default;

    nlohmann::json to_json() const;
    /// Validates that the runs cover exactly prod(shape) entries.
    static Rle from_json(const nlohmann::json& j);
};

/// Any non-zero value counts as foreground.
Rle rle_encode(std::span<const std::uint8_t> values, std::vector<int> shape);
Rle rle_encode(const Grid3<std::uint8_t>& mask);
std::vector<std::uint8_t> rle_decode(const Rle& rle);
Grid3<std::uint8_t> rle_decode_grid(const Rle& rle);
/// Number of foreground entries.
std::uint64_t rle_count(const Rle& rle);

}  // namespace tags
