#include "mmpkd/geometry.hpp"

namespace mmpkd {

std::string to_string(const Box& b) {
    return "(" + std::to_string(b.x0) + "," + std::to_string(b.y0) + "," + std::to_string(b.x1) + "," +
           std::to_string(b.y1) + ")";
}

Mask rasterize(const std::vector<Box>& boxes, std::size_t height, std::size_t width) {
    Mask m(height, width, 0);
    for (const auto& b : boxes) {
        if (!b.within(static_cast<int>(width), static_cast<int>(height))) {
            throw std::invalid_argument("rasterize: box " + to_string(b) + " outside " + std::to_string(width) + "x" +
                                        std::to_string(height));
        }
        for (int y = b.y0; y < b.y1; ++y)
            for (int x = b.x0; x < b.x1; ++x) m(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1;
    }
    return m;
}

}  // namespace mmpkd
