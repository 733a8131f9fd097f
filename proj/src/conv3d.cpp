#include "conv3d_kernels.hpp"

#include "latentscope/autoencoder.hpp"
#include "latentscope/error.hpp"

#include <algorithm>

namespace latentscope {

namespace {

struct AxisRange {
    long lo = 0;
    long hi = 0;
};

// Small-grid positions p whose tap 2p - 1 + k lands inside a big axis of length `big`.
AxisRange valid_range(std::size_t small, std::size_t big, int k) {
    const long lo = k == 0 ? 1 : 0;
    const long rem = static_cast<long>(big) - k;
    long hi = rem < 0 ? 0 : rem / 2 + 1;
    hi = std::min(hi, static_cast<long>(small));
    return {lo, std::max(lo, hi)};
}

// Calls body(small_offset, big_offset, count) for every x-row of tap (kx, ky, kz);
// within a row the small index advances by 1 and the big index by 2.
template <typename Body>
void visit_rows(Dims small, Dims big, int kx, int ky, int kz, Body&& body) {
    const auto rx = valid_range(small.x, big.x, kx);
    const auto ry = valid_range(small.y, big.y, ky);
    const auto rz = valid_range(small.z, big.z, kz);
    if (rx.lo >= rx.hi || ry.lo >= ry.hi || rz.lo >= rz.hi) {
        return;
    }
    const auto count = static_cast<std::size_t>(rx.hi - rx.lo);
    const auto bx0 = static_cast<std::size_t>(2 * rx.lo - 1 + kx);
    for (long pz = rz.lo; pz < rz.hi; ++pz) {
        const auto bz = static_cast<std::size_t>(2 * pz - 1 + kz);
        for (long py = ry.lo; py < ry.hi; ++py) {
            const auto by = static_cast<std::size_t>(2 * py - 1 + ky);
            body(small.index(static_cast<std::size_t>(rx.lo), static_cast<std::size_t>(py),
                             static_cast<std::size_t>(pz)),
                 big.index(bx0, by, bz), count);
        }
    }
}

template <typename Body>
void for_each_tap(std::size_t small_channels, std::size_t big_channels, Body&& body) {
    for (std::size_t s = 0; s < small_channels; ++s) {
        for (std::size_t b = 0; b < big_channels; ++b) {
            for (int kz = 0; kz < 3; ++kz) {
                for (int ky = 0; ky < 3; ++ky) {
                    for (int kx = 0; kx < 3; ++kx) {
                        const auto k = static_cast<std::size_t>(kx + 3 * (ky + 3 * kz));
                        body(s, b, kx, ky, kz, (s * big_channels + b) * kKernelVolume + k);
                    }
                }
            }
        }
    }
}

}  // namespace

namespace kernels {

void gather(Tensor& small, const Tensor& big, std::span<const double> weight) {
    const auto sc = small.channels;
    const auto bc = big.channels;
    for_each_tap(sc, bc, [&](std::size_t s, std::size_t b, int kx, int ky, int kz, std::size_t wi) {
        const double w = weight[wi];
        double* dst = small.channel(s).data();
        const double* src = big.channel(b).data();
        visit_rows(small.grid, big.grid, kx, ky, kz, [&](std::size_t so, std::size_t bo, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) {
                dst[so + i] += w * src[bo + 2 * i];
            }
        });
    });
}

void scatter(const Tensor& small, Tensor& big, std::span<const double> weight) {
    const auto sc = small.channels;
    const auto bc = big.channels;
    for_each_tap(sc, bc, [&](std::size_t s, std::size_t b, int kx, int ky, int kz, std::size_t wi) {
        const double w = weight[wi];
        const double* src = small.channel(s).data();
        double* dst = big.channel(b).data();
        visit_rows(small.grid, big.grid, kx, ky, kz, [&](std::size_t so, std::size_t bo, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) {
                dst[bo + 2 * i] += w * src[so + i];
            }
        });
    });
}

void weight_grad(const Tensor& small, const Tensor& big, std::span<double> grad) {
    const auto sc = small.channels;
    const auto bc = big.channels;
    for_each_tap(sc, bc, [&](std::size_t s, std::size_t b, int kx, int ky, int kz, std::size_t wi) {
        const double* sp = small.channel(s).data();
        const double* bp = big.channel(b).data();
        double acc = 0.0;
        visit_rows(small.grid, big.grid, kx, ky, kz, [&](std::size_t so, std::size_t bo, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) {
                acc += sp[so + i] * bp[bo + 2 * i];
            }
        });
        grad[wi] += acc;
    });
}

}  // namespace kernels

Tensor Tensor::from_volume(const Volume& volume) {
    Tensor t(1, volume.dims());
    std::copy(volume.voxels().begin(), volume.voxels().end(), t.data.begin());
    return t;
}

Volume Tensor::to_volume() const {
    if (channels != 1) {
        throw ShapeError("only single-channel tensors convert to volumes");
    }
    std::vector<float> voxels(data.size());
    std::transform(data.begin(), data.end(), voxels.begin(), [](double v) { return static_cast<float>(v); });
    return Volume(grid, std::move(voxels));
}

Dims conv_output_dims(Dims in) {
    auto axis = [&](std::size_t n) -> std::size_t {
        const long v = static_cast<long>(n) + 2 * 1 - 3;
        if (n == 0 || v < 0) {
            throw ShapeError("spatial dim < 1 after convolution for input " + to_string(in));
        }
        return static_cast<std::size_t>(v / 2 + 1);
    };
    return {axis(in.x), axis(in.y), axis(in.z)};
}

Dims conv_transpose_output_dims(Dims in, Dims output_padding) {
    if (in.x == 0 || in.y == 0 || in.z == 0) {
        throw ShapeError("transposed convolution input must be non-empty");
    }
    if (output_padding.x > 1 || output_padding.y > 1 || output_padding.z > 1) {
        throw ShapeError("output padding must be 0 or 1");
    }
    return {2 * in.x - 1 + output_padding.x, 2 * in.y - 1 + output_padding.y, 2 * in.z - 1 + output_padding.z};
}

std::array<Dims, kEncoderLayers + 1> encoder_grids(Dims input) {
    std::array<Dims, kEncoderLayers + 1> grids{};
    grids[0] = input;
    for (std::size_t l = 0; l < kEncoderLayers; ++l) {
        grids[l + 1] = conv_output_dims(grids[l]);
    }
    return grids;
}

Tensor conv3d_forward(const Tensor& input, const LayerSpec& layer, const LayerParams& params) {
    if (layer.kind != LayerKind::Conv3d) {
        throw ShapeError("conv3d_forward called with a transposed layer");
    }
    if (input.channels != layer.in_channels) {
        throw ShapeError("conv3d expects " + std::to_string(layer.in_channels) + " input channels, got " +
                         std::to_string(input.channels));
    }
    Tensor out(layer.out_channels, conv_output_dims(input.grid));
    for (std::size_t c = 0; c < out.channels; ++c) {
        auto ch = out.channel(c);
        std::fill(ch.begin(), ch.end(), params.bias[c]);
    }
    kernels::gather(out, input, params.weight);
    return out;
}

Tensor conv_transpose3d_forward(const Tensor& input, const LayerSpec& layer, const LayerParams& params,
                                std::optional<Dims> output_grid) {
    if (layer.kind != LayerKind::ConvTranspose3d) {
        throw ShapeError("conv_transpose3d_forward called with a regular convolution");
    }
    if (input.channels != layer.in_channels) {
        throw ShapeError("conv_transpose3d expects " + std::to_string(layer.in_channels) +
                         " input channels, got " + std::to_string(input.channels));
    }
    const Dims natural = conv_transpose_output_dims(input.grid);
    const Dims grid = output_grid.value_or(natural);
    if (grid.x < natural.x || grid.x > natural.x + 1 || grid.y < natural.y || grid.y > natural.y + 1 ||
        grid.z < natural.z || grid.z > natural.z + 1) {
        throw ShapeError("transposed convolution cannot produce " + to_string(grid) + " from " +
                         to_string(input.grid));
    }
    Tensor out(layer.out_channels, grid);
    for (std::size_t c = 0; c < out.channels; ++c) {
        auto ch = out.channel(c);
        std::fill(ch.begin(), ch.end(), params.bias[c]);
    }
    kernels::scatter(input, out, params.weight);
    return out;
}

}  // namespace latentscope
