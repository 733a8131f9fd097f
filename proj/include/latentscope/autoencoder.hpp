#pragma once

#include "latentscope/tensor.hpp"
#include "latentscope/volume.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace latentscope {

enum class LayerKind : std::uint8_t { Conv3d = 0, ConvTranspose3d = 1 };
enum class Activation : std::uint8_t { ReLU = 0, Sigmoid = 1 };

/// One convolutional stage. Kernel 3, stride 2, padding 1 throughout.
struct LayerSpec {
    LayerKind kind = LayerKind::Conv3d;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel = 3;
    std::size_t stride = 2;
    std::size_t padding = 1;
    Activation activation = Activation::ReLU;
    bool batch_norm = true;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline constexpr std::size_t kLayerCount = 6;
inline constexpr std::size_t kEncoderLayers = 3;
inline constexpr std::size_t kKernelVolume = 27;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Encoder 1->16->32->64 (conv, ReLU, BN); decoder 64->32->16->1 (transposed conv, ReLU, BN; last: sigmoid).
std::array<LayerSpec, kLayerCount> standard_architecture();

/// Learnable tensors of one layer. Conv weights are [out][in][27]; transposed-conv weights are [in][out][27].
struct LayerParams {
    std::vector<double> weight;
    std::vector<double> bias;
    std::vector<double> gamma;  // empty when the layer has no batch norm
    std::vector<double> beta;
};

struct RunningStats {
    std::vector<double> mean;
    std::vector<double> var;
};

using GradientSet = std::array<LayerParams, kLayerCount>;

struct AEParams {
    std::array<LayerSpec, kLayerCount> layers = standard_architecture();
    std::array<LayerParams, kLayerCount> params;
    std::array<RunningStats, kLayerCount> running;
    Dims input_dims{};

    /// Mutable views over every learnable block, in a fixed order (weight, bias, gamma, beta per layer).
    std::vector<std::span<double>> parameter_blocks();
    [[nodiscard]] std::size_t parameter_count() const;
};

/// Shape law of a stride-2 convolution: floor((in + 2p - k) / s) + 1 per axis.
Dims conv_output_dims(Dims in);
/// Transposed convolution: (in - 1) * 2 - 2 + 3 + output_padding = 2 in - 1 + output_padding.
Dims conv_transpose_output_dims(Dims in, Dims output_padding = {0, 0, 0});
/// Grid sizes at the encoder input and after each encoder layer.
std::array<Dims, kEncoderLayers + 1> encoder_grids(Dims input);

/// Seeded uniform init in +-1/sqrt(fan_in); BN gamma 1, beta 0, running mean 0, running var 1.
AEParams init_params(Dims input_dims, std::uint64_t seed);

Tensor conv3d_forward(const Tensor& input, const LayerSpec& layer, const LayerParams& params);
/// `output_grid` must lie in [2 in - 1, 2 in] per axis; defaults to 2 in - 1.
Tensor conv_transpose3d_forward(const Tensor& input, const LayerSpec& layer, const LayerParams& params,
                                std::optional<Dims> output_grid = std::nullopt);

enum class Mode { Train, Eval };
enum class LossKind : std::uint8_t { MSE = 0, SSIM = 1, Combined = 2 };

std::string_view loss_name(LossKind kind);
LossKind parse_loss(std::string_view text);

/// Activations captured after each encoder stage (activation then batch norm), flattened channel-major.
struct ActivationSet {
    std::array<std::vector<float>, kEncoderLayers> layers;
    std::array<std::size_t, kEncoderLayers> channels{};
    std::array<Dims, kEncoderLayers> grids{};
};

struct ForwardResult {
    Volume reconstruction;
    ActivationSet activations;
};

/// Single-volume forward. Train mode normalizes with the sample's own statistics; eval uses running stats.
ForwardResult forward(const Volume& volume, const AEParams& params, Mode mode);

/// Reconstruction as doubles (sigmoid output) for a batch; train-mode batch norm uses batch statistics.
std::vector<Tensor> forward_batch(std::span<const Tensor> inputs, const AEParams& params, Mode mode);

/// Per-volume loss: mse, 1 - SSIM, or alpha * mse + (1 - alpha) * (1 - SSIM).
double loss(std::span<const double> reconstruction, std::span<const double> target, Dims dims, LossKind kind,
            double alpha);
double loss(const Volume& reconstruction, const Volume& target, LossKind kind, double alpha);

struct BackwardResult {
    double loss = 0.0;  // mean over the batch
    GradientSet gradients;
    /// Batch statistics (mean, unbiased variance) of each normalized layer, for running-stat updates.
    std::array<RunningStats, kLayerCount> batch_stats;
};

/// Train-mode forward plus exact reverse-mode gradients of the mean batch loss (scaled by loss_scale).
BackwardResult backward(std::span<const Tensor> inputs, std::span<const Tensor> targets, const AEParams& params,
                        LossKind kind, double alpha, double loss_scale = 1.0);

/// Train-mode mean batch loss without gradients (used by finite-difference checks).
double batch_loss(std::span<const Tensor> inputs, std::span<const Tensor> targets, const AEParams& params,
                  LossKind kind, double alpha);

struct TrainConfig {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t max_epochs = 10;
    std::size_t patience = 5;
    std::size_t batch_size = 2;
    LossKind loss_kind = LossKind::MSE;
    double alpha = 0.5;
    std::uint64_t seed = 1;
};

struct TrainReport {
    std::vector<double> epoch_loss;
    std::size_t stopped_epoch = 0;  // 1-based index of the last epoch run
    std::uint64_t params_hash = 0;
};

struct TrainResult {
    AEParams params;
    TrainReport report;
};

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

/// Mini-batch Adam with seeded shuffling and early stopping on the epoch-mean loss.
TrainResult train(const Cohort& cohort, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Eval-mode forward per subject, order preserved.
std::vector<ActivationSet> extract_activations(const Cohort& cohort, const AEParams& params);

/// FNV-1a over the bit patterns of all parameters and running statistics.
std::uint64_t params_hash(const AEParams& params);

/// Versioned binary model file (magic "LSAE1\n").
void save_model(const AEParams& params, const std::filesystem::path& path, std::uint64_t config_hash = 0);
AEParams load_model(const std::filesystem::path& path, std::uint64_t* config_hash = nullptr);

void save_train_report(const TrainReport& report, const std::filesystem::path& path,
                       const std::vector<std::string>& preamble = {});

}  // namespace latentscope
