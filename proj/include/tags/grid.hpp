#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tags/error.hpp"

namespace tags {

/// Extents of a dense 3D grid, indexed (z, y, x) with x fastest.
struct Dims3 {
    int d = 0;
    int h = 0;
    int w = 0;

    std::size_t count() const { return static_cast<std::size_t>(d) * h * w; }
    std::size_t index(int z, int y, int x) const {
        return (static_cast<std::size_t>(z) * h + y) * w + x;
    }
    bool contains(int z, int y, int x) const {
        return z >= 0 && y >= 0 && x >= 0 && z < d && y < h && x < w;
    }
    int operator[](int axis) const { return axis == 0 ? d : (axis == 1 ? h : w); }
    bool operator==(const Dims3&) const = default;
    std::string str() const {
        return std::to_string(d) + "x" + std::to_string(h) + "x" + std::to_string(w);
    }
};

struct Voxel {
    int z = 0;
    int y = 0;
    int x = 0;
    bool operator==(const Voxel&) const = default;
    auto operator<=>(const Voxel&) const = default;
    int operator[](int axis) const { return axis == 0 ? z : (axis == 1 ? y : x); }
};

using Spacing = std::array<double, 3>;

template <class T>
class Grid3 {
public:
    Grid3() = default;
    explicit Grid3(Dims3 dims, T fill = T{}) : dims_(dims), data_(dims.count(), fill) {
        if (dims.d < 1 || dims.h < 1 || dims.w < 1) {
            throw InvalidArgument("grid extents must be >= 1, got " + dims.str());
        }
    }
    Grid3(Dims3 dims, std::vector<T> data) : dims_(dims), data_(std::move(data)) {
        if (dims.d < 1 || dims.h < 1 || dims.w < 1) {
            throw InvalidArgument("grid extents must be >= 1, got " + dims.str());
        }
        if (data_.size() != dims.count()) throw InvalidArgument("grid data size mismatch");
    }

    const Dims3& dims() const { return dims_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& at(int z, int y, int x) { return data_[dims_.index(z, y, x)]; }
    const T& at(int z, int y, int x) const { return data_[dims_.index(z, y, x)]; }
    T& at(const Voxel& v) { return at(v.z, v.y, v.x); }
    const T& at(const Voxel& v) const { return at(v.z, v.y, v.x); }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    bool operator==(const Grid3&) const = default;

private:
    Dims3 dims_;
    std::vector<T> data_;
};

}  // namespace tags
