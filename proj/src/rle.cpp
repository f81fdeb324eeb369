#include "tags/rle.hpp"

#include <numeric>

#include "tags/error.hpp"

namespace tags {

std::size_t Rle::size() const {
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    return n;
}

nlohmann::json Rle::to_json() const { return {{"shape", shape}, {"counts", counts}}; }

Rle Rle::from_json(const nlohmann::json& j) {
    Rle r;
    try {
        r.shape = j.at("shape").get<std::vector<int>>();
        r.counts = j.at("counts").get<std::vector<std::uint64_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("malformed RLE: ") + e.what());
    }
    if (r.shape.empty()) throw InvalidArgument("RLE shape is empty");
    for (int s : r.shape)
        if (s < 1) throw InvalidArgument("RLE shape extents must be >= 1");
    const std::uint64_t total = std::accumulate(r.counts.begin(), r.counts.end(), std::uint64_t{0});
    if (total != r.size()) {
        throw InvalidArgument("RLE runs cover " + std::to_string(total) + " entries, shape has " +
                              std::to_string(r.size()));
    }
    return r;
}

Rle rle_encode(std::span<const std::uint8_t> values, std::vector<int> shape) {
    Rle r;
    r.shape = std::move(shape);
    if (r.size() != values.size()) throw InvalidArgument("rle_encode: shape does not match data size");
    bool current = false;
    std::uint64_t run = 0;
    for (std::uint8_t v : values) {
        const bool fg = v != 0;
        if (fg != current) {
            r.counts.push_back(run);
            run = 0;
            current = fg;
        }
        ++run;
    }
    r.counts.push_back(run);
    return r;
}

Rle rle_encode(const Grid3<std::uint8_t>& mask) {
    const Dims3 d = mask.dims();
    return rle_encode(mask.values(), {d.d, d.h, d.w});
}

std::vector<std::uint8_t> rle_decode(const Rle& rle) {
    std::vector<std::uint8_t> out;
    out.reserve(rle.size());
    std::uint8_t v = 0;
    for (std::uint64_t c : rle.counts) {
        if (out.size() + c > rle.size()) throw InvalidArgument("RLE runs exceed the shape");
        out.insert(out.end(), c, v);
        v ^= 1;
    }
    if (out.size() != rle.size()) throw InvalidArgument("RLE runs do not cover the shape");
    return out;
}

Grid3<std::uint8_t> rle_decode_grid(const Rle& rle) {
    if (rle.shape.size() != 3) throw InvalidArgument("RLE is not three-dimensional");
    return Grid3<std::uint8_t>({rle.shape[0], rle.shape[1], rle.shape[2]}, rle_decode(rle));
}

std::uint64_t rle_count(const Rle& rle) {
    std::uint64_t n = 0;
    for (std::size_t i = 1; i < rle.counts.size(); i += 2) n += rle.counts[i];
    return n;
}

}  // namespace tags
