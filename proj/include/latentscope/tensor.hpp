#pragma once

#include "latentscope/volume.hpp"

#include <span>
#include <vector>

namespace latentscope {

/// Channel-major 3D feature map: data[c * grid.count() + grid.index(x, y, z)].
struct Tensor {
    std::size_t channels = 0;
    Dims grid{};
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::size_t c, Dims g, double fill = 0.0) : channels(c), grid(g), data(c * g.count(), fill) {}

    [[nodiscard]] std::size_t size() const { return data.size(); }
    [[nodiscard]] std::span<double> channel(std::size_t c) {
        return {data.data() + c * grid.count(), grid.count()};
    }
    [[nodiscard]] std::span<const double> channel(std::size_t c) const {
        return {data.data() + c * grid.count(), grid.count()};
    }

    static Tensor from_volume(const Volume& volume);
    [[nodiscard]] Volume to_volume() const;
};

}  // namespace latentscope
