#pragma once

#include "latentscope/volume.hpp"

#include <span>

namespace latentscope {

struct SsimOptions {
    std::size_t window = 7;      // uniform cubic window; clipped to each axis extent
    double c1 = 0.01 * 0.01;     // (K1 L)^2 with L = 1
    double c2 = 0.03 * 0.03;     // (K2 L)^2
};

/// Windowed 3D SSIM averaged over all valid window positions. Symmetric; ssim(x, x) == 1.
double ssim(std::span<const double> a, std::span<const double> b, Dims dims, const SsimOptions& options = {});

/// SSIM plus its gradient with respect to `a` (written into grad_a, same size as a).
double ssim_with_gradient(std::span<const double> a, std::span<const double> b, Dims dims,
                          std::span<double> grad_a, const SsimOptions& options = {});

}  // namespace latentscope
