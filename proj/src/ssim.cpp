#include "latentscope/ssim.hpp"

#include "latentscope/error.hpp"

#include <algorithm>
#include <array>
#include <vector>

namespace latentscope {

namespace {

struct WindowGrid {
    std::array<std::size_t, 3> in{};
    std::array<std::size_t, 3> win{};
    std::array<std::size_t, 3> out{};

    WindowGrid(Dims dims, std::size_t window) {
        in = dims.as_array();
        for (std::size_t a = 0; a < 3; ++a) {
            win[a] = std::min(window, in[a]);
            out[a] = in[a] - win[a] + 1;
        }
    }
    [[nodiscard]] std::size_t out_count() const { return out[0] * out[1] * out[2]; }
    [[nodiscard]] std::size_t window_size() const { return win[0] * win[1] * win[2]; }
};

// Sums over each valid window along one axis; shape[axis] shrinks to shape[axis] - w + 1.
std::vector<double> box_axis(const std::vector<double>& src, std::array<std::size_t, 3>& shape, std::size_t axis,
                             std::size_t w) {
    auto out_shape = shape;
    out_shape[axis] = shape[axis] - w + 1;
    std::vector<double> dst(out_shape[0] * out_shape[1] * out_shape[2], 0.0);
    const std::array<std::size_t, 3> sstride = {1, shape[0], shape[0] * shape[1]};
    const std::array<std::size_t, 3> dstride = {1, out_shape[0], out_shape[0] * out_shape[1]};
    for (std::size_t z = 0; z < out_shape[2]; ++z) {
        for (std::size_t y = 0; y < out_shape[1]; ++y) {
            for (std::size_t x = 0; x < out_shape[0]; ++x) {
                const std::size_t s0 = x * sstride[0] + y * sstride[1] + z * sstride[2];
                double acc = 0.0;
                for (std::size_t k = 0; k < w; ++k) {
                    acc += src[s0 + k * sstride[axis]];
                }
                dst[x * dstride[0] + y * dstride[1] + z * dstride[2]] = acc;
            }
        }
    }
    shape = out_shape;
    return dst;
}

// Adjoint of box_axis: spreads each window value back over the voxels it covers.
std::vector<double> box_axis_adjoint(const std::vector<double>& src, std::array<std::size_t, 3>& shape,
                                     std::size_t axis, std::size_t w) {
    auto out_shape = shape;
    out_shape[axis] = shape[axis] + w - 1;
    std::vector<double> dst(out_shape[0] * out_shape[1] * out_shape[2], 0.0);
    const std::array<std::size_t, 3> sstride = {1, shape[0], shape[0] * shape[1]};
    const std::array<std::size_t, 3> dstride = {1, out_shape[0], out_shape[0] * out_shape[1]};
    for (std::size_t z = 0; z < shape[2]; ++z) {
        for (std::size_t y = 0; y < shape[1]; ++y) {
            for (std::size_t x = 0; x < shape[0]; ++x) {
                const double v = src[x * sstride[0] + y * sstride[1] + z * sstride[2]];
                const std::size_t d0 = x * dstride[0] + y * dstride[1] + z * dstride[2];
                for (std::size_t k = 0; k < w; ++k) {
                    dst[d0 + k * dstride[axis]] += v;
                }
            }
        }
    }
    shape = out_shape;
    return dst;
}

std::vector<double> box_sum(std::vector<double> field, const WindowGrid& grid) {
    auto shape = grid.in;
    for (std::size_t axis = 0; axis < 3; ++axis) {
        field = box_axis(field, shape, axis, grid.win[axis]);
    }
    return field;
}

std::vector<double> box_sum_adjoint(std::vector<double> field, const WindowGrid& grid) {
    auto shape = grid.out;
    for (std::size_t axis = 0; axis < 3; ++axis) {
        field = box_axis_adjoint(field, shape, axis, grid.win[axis]);
    }
    return field;
}

struct WindowSums {
    std::vector<double> sa, sb, saa, sbb, sab;
};

WindowSums window_sums(std::span<const double> a, std::span<const double> b, const WindowGrid& grid) {
    const std::size_t n = a.size();
    std::vector<double> aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    return {box_sum({a.begin(), a.end()}, grid), box_sum({b.begin(), b.end()}, grid), box_sum(std::move(aa), grid),
            box_sum(std::move(bb), grid), box_sum(std::move(ab), grid)};
}

void check_inputs(std::span<const double> a, std::span<const double> b, Dims dims) {
    if (a.size() != dims.count() || b.size() != dims.count()) {
        throw ShapeError("ssim inputs do not match dims " + to_string(dims));
    }
}

}  // namespace

double ssim(std::span<const double> a, std::span<const double> b, Dims dims, const SsimOptions& options) {
    check_inputs(a, b, dims);
    const WindowGrid grid(dims, options.window);
    const auto sums = window_sums(a, b, grid);
    const double inv_n = 1.0 / static_cast<double>(grid.window_size());
    double total = 0.0;
    for (std::size_t w = 0; w < grid.out_count(); ++w) {
        const double ma = sums.sa[w] * inv_n;
        const double mb = sums.sb[w] * inv_n;
        const double vaa = sums.saa[w] * inv_n - ma * ma;
        const double vbb = sums.sbb[w] * inv_n - mb * mb;
        const double vab = sums.sab[w] * inv_n - ma * mb;
        const double num = (2.0 * ma * mb + options.c1) * (2.0 * vab + options.c2);
        const double den = (ma * ma + mb * mb + options.c1) * (vaa + vbb + options.c2);
        total += num / den;
    }
    return total / static_cast<double>(grid.out_count());
}

double ssim_with_gradient(std::span<const double> a, std::span<const double> b, Dims dims,
                          std::span<double> grad_a, const SsimOptions& options) {
    check_inputs(a, b, dims);
    if (grad_a.size() != a.size()) {
        throw ShapeError("ssim gradient buffer has wrong size");
    }
    const WindowGrid grid(dims, options.window);
    const auto sums = window_sums(a, b, grid);
    const double inv_n = 1.0 / static_cast<double>(grid.window_size());
    const std::size_t windows = grid.out_count();
    std::vector<double> d_sa(windows), d_saa(windows), d_sab(windows);
    double total = 0.0;
    for (std::size_t w = 0; w < windows; ++w) {
        const double ma = sums.sa[w] * inv_n;
        const double mb = sums.sb[w] * inv_n;
        const double vaa = sums.saa[w] * inv_n - ma * ma;
        const double vbb = sums.sbb[w] * inv_n - mb * mb;
        const double vab = sums.sab[w] * inv_n - ma * mb;
        const double a1 = 2.0 * ma * mb + options.c1;
        const double a2 = 2.0 * vab + options.c2;
        const double b1 = ma * ma + mb * mb + options.c1;
        const double b2 = vaa + vbb + options.c2;
        const double s = (a1 * a2) / (b1 * b2);
        total += s;
        const double ds_dma = 2.0 * mb * a2 / (b1 * b2) - 2.0 * ma * s / b1;
        const double ds_dvaa = -s / b2;
        const double ds_dvab = 2.0 * a1 / (b1 * b2);
        d_sa[w] = inv_n * (ds_dma - 2.0 * ma * ds_dvaa - mb * ds_dvab);
        d_saa[w] = inv_n * ds_dvaa;
        d_sab[w] = inv_n * ds_dvab;
    }
    const auto g1 = box_sum_adjoint(std::move(d_sa), grid);
    const auto g2 = box_sum_adjoint(std::move(d_saa), grid);
    const auto g3 = box_sum_adjoint(std::move(d_sab), grid);
    const double inv_w = 1.0 / static_cast<double>(windows);
    for (std::size_t i = 0; i < a.size(); ++i) {
        grad_a[i] = inv_w * (g1[i] + 2.0 * a[i] * g2[i] + b[i] * g3[i]);
    }
    return total * inv_w;
}

}  // namespace latentscope
