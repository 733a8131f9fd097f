#pragma once

#include "latentscope/tensor.hpp"

#include <span>

// Stride-2, padding-1, 3x3x3 correlation between a "small" grid and a "big" grid,
// where small position p touches big positions 2p - 1 + k. Weights are [small_ch][big_ch][27].
namespace latentscope::kernels {

/// small[s][p] += sum_b,k w[s][b][k] * big[b][2p - 1 + k]
void gather(Tensor& small, const Tensor& big, std::span<const double> weight);

/// big[b][2p - 1 + k] += sum_s,k w[s][b][k] * small[s][p]
void scatter(const Tensor& small, Tensor& big, std::span<const double> weight);

/// grad[s][b][k] += sum_p small[s][p] * big[b][2p - 1 + k]
void weight_grad(const Tensor& small, const Tensor& big, std::span<double> grad);

}  // namespace latentscope::kernels
