#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmpkd {

// Axis-aligned integer box, half-open: covers x0 <= x < x1, y0 <= y < y1.
struct Box {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    long long area() const { return static_cast<long long>(x1 - x0) * (y1 - y0); }
    bool valid() const { return x0 < x1 && y0 < y1; }
    bool within(int width, int height) const { return 0 <= x0 && x0 < x1 && x1 <= width && 0 <= y0 && y0 < y1 && y1 <= height; }
    bool operator==(const Box&) const = default;
};

inline long long intersection_area(const Box& a, const Box& b) {
    const int w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    const int h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    return (w > 0 && h > 0) ? static_cast<long long>(w) * h : 0;
}

inline bool overlaps(const Box& a, const Box& b) { return intersection_area(a, b) > 0; }

std::string to_string(const Box& b);

// Row-major H x W grid.
template <typename T>
struct Grid {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<T> values;

    Grid() = default;
    Grid(std::size_t h, std::size_t w, T fill = T{}) : height(h), width(w), values(h * w, fill) {}

    T& operator()(std::size_t y, std::size_t x) { return values[y * width + x]; }
    const T& operator()(std::size_t y, std::size_t x) const { return values[y * width + x]; }
    std::size_t size() const { return values.size(); }
    bool same_shape(const auto& other) const { return height == other.height && width == other.width; }
    bool operator==(const Grid&) const = default;
};

using Image = Grid<double>;
using Mask = Grid<std::uint8_t>;

// Union of boxes as a binary mask.
Mask rasterize(const std::vector<Box>& boxes, std::size_t height, std::size_t width);

}  // namespace mmpkd
